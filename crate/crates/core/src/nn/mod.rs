//! Neural-network building blocks: parameter store, Adam with a cosine
//! schedule, transformer encoder layers, MLPs, and checkpoint persistence.

pub mod mlp;
pub mod tape;
pub mod transformer;

pub use mlp::{Act, Mlp};
pub use tape::{sigmoid, stable_softplus, BackwardPass, Tape, VarId};
pub use transformer::{sinusoidal_pe, AttnConfig, TransformerLayer};

use crate::data::{Container, Section};
use crate::error::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Named, index-addressed parameter matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Array2<f64>)>,
}

/// Per-tape leaf ids for every parameter, parallel to the `ParamSet`.
pub struct Bound {
    pub ids: Vec<VarId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.entries.push((name.into(), value));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, idx: usize) -> &Array2<f64> {
        &self.entries[idx].1
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    /// Register every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            ids: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, (_, v))| tape.param(i, v.clone()))
                .collect(),
        }
    }

    /// Soft update `self <- (1 - rate) * self + rate * source`.
    pub fn soft_update_from(&mut self, source: &ParamSet, rate: f64) {
        for (dst, src) in self.entries.iter_mut().zip(&source.entries) {
            dst.1.zip_mut_with(&src.1, |d, s| *d = (1.0 - rate) * *d + rate * s);
        }
    }

    /// Persist as a versioned checkpoint with caller-supplied config JSON.
    pub fn save(&self, path: impl AsRef<Path>, config: serde_json::Value) -> Result<()> {
        let names: Vec<&str> = self.entries.iter().map(|(n, _)| n.as_str()).collect();
        let meta = serde_json::json!({ "names": names, "config": config });
        let mut c = Container::new("checkpoint", meta);
        for (name, value) in &self.entries {
            c.push(name.clone(), Section::F64(value.clone()));
        }
        c.save(path)
    }

    /// Load a checkpoint; returns the parameters and the stored config JSON.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let c = Container::load(path)?;
        if c.kind != "checkpoint" {
            return Err(Error::Format(format!("expected checkpoint container, got {}", c.kind)));
        }
        let names: Vec<String> = c
            .meta
            .get("names")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Format("checkpoint missing names".into()))?
            .iter()
            .filter_map(|v| v.as_str().map(str::to_owned))
            .collect();
        let mut ps = ParamSet::new();
        for name in names {
            ps.add(name.clone(), c.f64(&name)?.clone());
        }
        let config = c.meta.get("config").cloned().unwrap_or(serde_json::Value::Null);
        Ok((ps, config))
    }
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Xavier-uniform init; draw order is row-major and fully seeded.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// Adam optimizer over a `ParamSet`.
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: (0..params.len()).map(|i| Array2::zeros(params.value(i).raw_dim())).collect(),
            v: (0..params.len()).map(|i| Array2::zeros(params.value(i).raw_dim())).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Array2<f64>>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(g) = grad else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let p = params.value_mut(i);
            for ((p, &m), &v) in p.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine decay from `lr_init` (step 0) to `lr_min` (last step).
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    if total_steps <= 1 {
        return lr_init;
    }
    let frac = step as f64 / (total_steps - 1) as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_minimizes_quadratic() {
        // Minimize sum((w - 3)^2) from w = 0.
        let mut ps = ParamSet::new();
        let w = ps.add("w", Array2::zeros((2, 2)));
        let mut adam = Adam::new(&ps);
        for _ in 0..500 {
            let g = ps.value(w).mapv(|v| 2.0 * (v - 3.0));
            adam.step(&mut ps, &[Some(g)], 0.05);
        }
        assert!(ps.value(w).iter().all(|&v| (v - 3.0).abs() < 1e-3));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-4), 1e-3);
        assert!((cosine_lr(99, 100, 1e-3, 1e-4) - 1e-4).abs() < 1e-12);
        let mid = cosine_lr(50, 101, 1e-3, 1e-4);
        assert!((mid - (1e-3 + 1e-4) / 2.0).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.rlc");
        let mut ps = ParamSet::new();
        let mut rng = crate::rng::rng_for(3, "ck", 0);
        ps.add("layer.w", xavier_uniform(&mut rng, 7, 5));
        ps.add("layer.b", array![[0.1, -0.2, 0.3]]);
        ps.save(&path, serde_json::json!({"d_model": 8})).unwrap();
        let (loaded, config) = ParamSet::load(&path).unwrap();
        assert_eq!(loaded, ps);
        assert_eq!(config["d_model"], 8);
    }

    #[test]
    fn soft_update_blends() {
        let mut a = ParamSet::new();
        a.add("w", Array2::zeros((1, 2)));
        let mut b = ParamSet::new();
        b.add("w", Array2::ones((1, 2)));
        a.soft_update_from(&b, 0.25);
        assert!(a.value(0).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
