//! Data-parallel map helpers with a sequential fallback.
//!
//! Hot inference paths (prefix encoding, rollouts, relabeling) map an
//! independent function over items and collect results in index order. With
//! the `parallel` feature the map runs on rayon; without it the sequential
//! path is used. Reductions always happen sequentially over the collected
//! vector, so results are bitwise identical in both modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_indices_seq(n, f)
}

/// Sequential variant of [`map_indices`]; always available so benchmarks can
/// compare the two paths within one build.
pub fn map_indices_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in input order.
#[cfg(feature = "parallel")]
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_seq_agree() {
        let par: Vec<u64> = map_indices(100, |i| (i as u64).wrapping_mul(0x9e37));
        let seq: Vec<u64> = map_indices_seq(100, |i| (i as u64).wrapping_mul(0x9e37));
        assert_eq!(par, seq);
    }
}
