//! Minimal reverse-mode autodiff over `Array2<f64>`.
//!
//! A `Tape` records ops as they execute; `backward` walks the nodes in
//! reverse creation order, which is a valid topological order because an op
//! can only reference earlier nodes. Everything is single-threaded and
//! allocation-order deterministic, so identical inputs give bitwise
//! identical gradients.
//!
//! Scalars are `(1, 1)` matrices; row vectors are `(1, n)`.

use ndarray::{Array2, Axis};

pub type VarId = usize;

enum Op {
    Leaf { param: Option<usize> },
    Add(VarId, VarId),
    /// (m, n) + (1, n) broadcast over rows.
    AddRow(VarId, VarId),
    Sub(VarId, VarId),
    MulElem(VarId, VarId),
    DivElem(VarId, VarId),
    /// Elementwise product with a constant array (no gradient to it).
    MulConst(VarId, Array2<f64>),
    /// Elementwise sum with a constant array (attention masks).
    AddConstArr(VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    MatMul { a: VarId, b: VarId, ta: bool, tb: bool },
    SoftmaxRows(VarId),
    Relu(VarId),
    Tanh(VarId),
    Exp(VarId),
    Ln(VarId),
    Sqrt(VarId),
    Softplus(VarId),
    /// (m, n) -> (1, n).
    MeanRows(VarId),
    /// (m, n) -> (1, 1).
    SumAll(VarId),
    /// (m, n) -> (m, 1).
    SumRowwise(VarId),
    ConcatRows(Vec<VarId>),
    SliceRows { src: VarId, start: usize },
    SliceCols { src: VarId, start: usize },
    ConcatCols(Vec<VarId>),
    LayerNormRows { x: VarId, gain: VarId, bias: VarId, eps: f64 },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients after a backward pass.
pub struct BackwardPass {
    grads: Vec<Option<Array2<f64>>>,
}

impl BackwardPass {
    pub fn grad(&self, id: VarId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn leaf(&mut self, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Parameter input tagged with its index in the owning `ParamSet`.
    pub fn param(&mut self, index: usize, value: Array2<f64>) -> VarId {
        self.push(value, Op::Leaf { param: Some(index) })
    }

    pub fn scalar(&mut self, v: f64) -> VarId {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: VarId, row: VarId) -> VarId {
        debug_assert_eq!(self.nodes[row].value.nrows(), 1);
        let v = &self.nodes[a].value + &self.nodes[row].value;
        self.push(v, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::MulElem(a, b))
    }

    pub fn div(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(v, Op::DivElem(a, b))
    }

    pub fn mul_const(&mut self, a: VarId, c: Array2<f64>) -> VarId {
        let v = &self.nodes[a].value * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn add_const_arr(&mut self, a: VarId, c: &Array2<f64>) -> VarId {
        let v = &self.nodes[a].value + c;
        self.push(v, Op::AddConstArr(a))
    }

    pub fn scale(&mut self, a: VarId, s: f64) -> VarId {
        let v = &self.nodes[a].value * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: VarId, s: f64) -> VarId {
        let v = &self.nodes[a].value + s;
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: VarId) -> VarId {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId, ta: bool, tb: bool) -> VarId {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let v = match (ta, tb) {
            (false, false) => av.dot(bv),
            (true, false) => av.t().dot(bv),
            (false, true) => av.dot(&bv.t()),
            (true, true) => av.t().dot(&bv.t()),
        };
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(|e| e.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(v, Op::Ln(a))
    }

    pub fn sqrt(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.mapv(stable_softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn mean_rows(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a].value;
        let m = x.nrows() as f64;
        let v = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / m;
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn sum_rowwise(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumRowwise(a))
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, src: VarId, start: usize, len: usize) -> VarId {
        let v = self.nodes[src]
            .value
            .slice(ndarray::s![start..start + len, ..])
            .to_owned();
        self.push(v, Op::SliceRows { src, start })
    }

    pub fn slice_cols(&mut self, src: VarId, start: usize, len: usize) -> VarId {
        let v = self.nodes[src]
            .value
            .slice(ndarray::s![.., start..start + len])
            .to_owned();
        self.push(v, Op::SliceCols { src, start })
    }

    /// Row-wise layer norm with learnable gain and bias (both `(1, n)`).
    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId, eps: f64) -> VarId {
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gain].value;
        let b = &self.nodes[bias].value;
        let mut v = Array2::zeros(xv.raw_dim());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let n = row.len() as f64;
            let mu = row.sum() / n;
            let var = row.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n;
            let sd = (var + eps).sqrt();
            for (j, e) in row.iter().enumerate() {
                v[[i, j]] = (e - mu) / sd * g[[0, j]] + b[[0, j]];
            }
        }
        self.push(v, Op::LayerNormRows { x, gain, bias, eps })
    }

    /// cos(a, b) for two same-shape vectors (any orientation).
    pub fn cosine(&mut self, a: VarId, b: VarId) -> VarId {
        let ab = self.mul(a, b);
        let dot = self.sum_all(ab);
        let aa = self.mul(a, a);
        let na2 = self.sum_all(aa);
        let na = self.sqrt(na2);
        let bb = self.mul(b, b);
        let nb2 = self.sum_all(bb);
        let nb = self.sqrt(nb2);
        let denom = self.mul(na, nb);
        self.div(dot, denom)
    }

    /// Accumulate `delta` into `slot`, initializing on first touch.
    fn accum(grads: &mut [Option<Array2<f64>>], slot: VarId, delta: Array2<f64>) {
        match &mut grads[slot] {
            Some(g) => *g += &delta,
            none => *none = Some(delta),
        }
    }

    /// Reverse pass from `root` (any shape; seeded with ones).
    pub fn backward(&self, root: VarId) -> BackwardPass {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(Array2::ones(self.nodes[root].value.raw_dim()));
        for i in (0..=root).rev() {
            let g = match &grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {}
                Op::Add(a, b) => {
                    Self::accum(&mut grads, *a, g.clone());
                    Self::accum(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    Self::accum(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    Self::accum(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    Self::accum(&mut grads, *a, g.clone());
                    Self::accum(&mut grads, *b, -g);
                }
                Op::MulElem(a, b) => {
                    let da = &g * &self.nodes[*b].value;
                    let db = &g * &self.nodes[*a].value;
                    Self::accum(&mut grads, *a, da);
                    Self::accum(&mut grads, *b, db);
                }
                Op::DivElem(a, b) => {
                    let bv = &self.nodes[*b].value;
                    let da = &g / bv;
                    let db = -(&g * &self.nodes[i].value / bv);
                    Self::accum(&mut grads, *a, da);
                    Self::accum(&mut grads, *b, db);
                }
                Op::MulConst(a, c) => {
                    Self::accum(&mut grads, *a, &g * c);
                }
                Op::AddConstArr(a) | Op::AddScalar(a) => {
                    Self::accum(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    Self::accum(&mut grads, *a, &g * *s);
                }
                Op::MatMul { a, b, ta, tb } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = match (ta, tb) {
                        (false, false) => g.dot(&bv.t()),
                        (false, true) => g.dot(bv),
                        (true, false) => bv.dot(&g.t()),
                        (true, true) => bv.t().dot(&g.t()),
                    };
                    let db = match (ta, tb) {
                        (false, false) => av.t().dot(&g),
                        (true, false) => av.dot(&g),
                        (false, true) => g.t().dot(av),
                        (true, true) => g.t().dot(&av.t()),
                    };
                    Self::accum(&mut grads, *a, da);
                    Self::accum(&mut grads, *b, db);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let gy = &g * y;
                    let row_dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let dx = y * &(&g - &row_dots);
                    Self::accum(&mut grads, *a, dx);
                }
                Op::Relu(a) => {
                    let mask = self.nodes[*a].value.mapv(|e| if e > 0.0 { 1.0 } else { 0.0 });
                    Self::accum(&mut grads, *a, &g * &mask);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    Self::accum(&mut grads, *a, &g * &(1.0 - y * y));
                }
                Op::Exp(a) => {
                    Self::accum(&mut grads, *a, &g * &self.nodes[i].value);
                }
                Op::Ln(a) => {
                    Self::accum(&mut grads, *a, &g / &self.nodes[*a].value);
                }
                Op::Sqrt(a) => {
                    Self::accum(&mut grads, *a, &g / &(2.0 * &self.nodes[i].value));
                }
                Op::Softplus(a) => {
                    let sig = self.nodes[*a].value.mapv(|e| 1.0 / (1.0 + (-e).exp()));
                    Self::accum(&mut grads, *a, &g * &sig);
                }
                Op::MeanRows(a) => {
                    let m = self.nodes[*a].value.nrows();
                    let scaled = &g / m as f64;
                    let dx = Array2::from_shape_fn(self.nodes[*a].value.raw_dim(), |(_, j)| {
                        scaled[[0, j]]
                    });
                    Self::accum(&mut grads, *a, dx);
                }
                Op::SumAll(a) => {
                    let dx = Array2::from_elem(self.nodes[*a].value.raw_dim(), g[[0, 0]]);
                    Self::accum(&mut grads, *a, dx);
                }
                Op::SumRowwise(a) => {
                    let dx = Array2::from_shape_fn(self.nodes[*a].value.raw_dim(), |(r, _)| {
                        g[[r, 0]]
                    });
                    Self::accum(&mut grads, *a, dx);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let rows = self.nodes[p].value.nrows();
                        let dp = g.slice(ndarray::s![off..off + rows, ..]).to_owned();
                        Self::accum(&mut grads, p, dp);
                        off += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.nodes[p].value.ncols();
                        let dp = g.slice(ndarray::s![.., off..off + cols]).to_owned();
                        Self::accum(&mut grads, p, dp);
                        off += cols;
                    }
                }
                Op::SliceRows { src, start } => {
                    let mut dsrc = Array2::zeros(self.nodes[*src].value.raw_dim());
                    dsrc.slice_mut(ndarray::s![*start..*start + g.nrows(), ..])
                        .assign(&g);
                    Self::accum(&mut grads, *src, dsrc);
                }
                Op::SliceCols { src, start } => {
                    let mut dsrc = Array2::zeros(self.nodes[*src].value.raw_dim());
                    dsrc.slice_mut(ndarray::s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    Self::accum(&mut grads, *src, dsrc);
                }
                Op::LayerNormRows { x, gain, bias, eps } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gain].value;
                    let (m, n) = (xv.nrows(), xv.ncols());
                    let mut dx = Array2::zeros((m, n));
                    let mut dgain = Array2::zeros((1, n));
                    let mut dbias = Array2::zeros((1, n));
                    for r in 0..m {
                        let row = xv.row(r);
                        let nf = n as f64;
                        let mu = row.sum() / nf;
                        let var = row.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / nf;
                        let sd = (var + eps).sqrt();
                        // xhat, gdy and its row statistics
                        let mut mean_gdy = 0.0;
                        let mut mean_gdy_xhat = 0.0;
                        let mut xhat = vec![0.0; n];
                        let mut gdy = vec![0.0; n];
                        for c in 0..n {
                            xhat[c] = (xv[[r, c]] - mu) / sd;
                            gdy[c] = g[[r, c]] * gv[[0, c]];
                            mean_gdy += gdy[c];
                            mean_gdy_xhat += gdy[c] * xhat[c];
                        }
                        mean_gdy /= nf;
                        mean_gdy_xhat /= nf;
                        for c in 0..n {
                            dx[[r, c]] = (gdy[c] - mean_gdy - xhat[c] * mean_gdy_xhat) / sd;
                            dgain[[0, c]] += g[[r, c]] * xhat[c];
                            dbias[[0, c]] += g[[r, c]];
                        }
                    }
                    Self::accum(&mut grads, *x, dx);
                    Self::accum(&mut grads, *gain, dgain);
                    Self::accum(&mut grads, *bias, dbias);
                }
            }
        }
        BackwardPass { grads }
    }

    /// Gradients per parameter index after a backward pass.
    pub fn param_grads(&self, pass: &BackwardPass, n_params: usize) -> Vec<Option<Array2<f64>>> {
        let mut out: Vec<Option<Array2<f64>>> = vec![None; n_params];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(p) } = node.op {
                if let Some(g) = pass.grad(i) {
                    match &mut out[p] {
                        Some(acc) => *acc += g,
                        slot => *slot = Some(g.clone()),
                    }
                }
            }
        }
        out
    }
}

pub fn stable_softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite differences on an arbitrary scalar-valued graph.
    fn grad_check<F>(build: F, inputs: &[Array2<f64>], tol: f64)
    where
        F: Fn(&mut Tape, &[VarId]) -> VarId,
    {
        let eval = |inputs: &[Array2<f64>]| -> f64 {
            let mut tape = Tape::new();
            let ids: Vec<VarId> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
            let out = build(&mut tape, &ids);
            assert_eq!(tape.value(out).dim(), (1, 1), "graph must be scalar");
            tape.value(out)[[0, 0]]
        };
        let mut tape = Tape::new();
        let ids: Vec<VarId> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&mut tape, &ids);
        let pass = tape.backward(out);
        let h = 1e-5;
        for (k, x) in inputs.iter().enumerate() {
            let analytic = pass
                .grad(ids[k])
                .cloned()
                .unwrap_or_else(|| Array2::zeros(x.raw_dim()));
            for r in 0..x.nrows() {
                for c in 0..x.ncols() {
                    let mut plus = inputs.to_vec();
                    plus[k][[r, c]] += h;
                    let mut minus = inputs.to_vec();
                    minus[k][[r, c]] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let a = analytic[[r, c]];
                    let denom = fd.abs().max(a.abs()).max(1e-8);
                    assert!(
                        (fd - a).abs() / denom < tol,
                        "input {k} [{r},{c}]: fd {fd} vs analytic {a}"
                    );
                }
            }
        }
    }

    fn randn(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gradcheck_elementwise_chain() {
        let mut rng = crate::rng::rng_for(1, "gc", 0);
        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 3, 4).mapv(|v| v + 2.5); // keep denominators away from 0
        grad_check(
            |t, ids| {
                let x = t.mul(ids[0], ids[1]);
                let y = t.tanh(x);
                let z = t.div(y, ids[1]);
                // keep relu inputs away from its kink
                let zs = t.add_scalar(z, 2.0);
                let w = t.relu(zs);
                let e = t.exp(w);
                t.sum_all(e)
            },
            &[a, b],
            1e-5,
        );
    }

    #[test]
    fn gradcheck_matmul_all_transpose_combos() {
        let mut rng = crate::rng::rng_for(2, "gc", 0);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let (ra, ca) = if ta { (5, 3) } else { (3, 5) };
            let (rb, cb) = if tb { (4, 5) } else { (5, 4) };
            let a = randn(&mut rng, ra, ca);
            let b = randn(&mut rng, rb, cb);
            grad_check(
                |t, ids| {
                    let y = t.matmul(ids[0], ids[1], ta, tb);
                    let s = t.tanh(y);
                    t.sum_all(s)
                },
                &[a, b],
                1e-6,
            );
        }
    }

    #[test]
    fn gradcheck_softmax_and_norms() {
        let mut rng = crate::rng::rng_for(3, "gc", 0);
        let x = randn(&mut rng, 4, 6);
        let gain = randn(&mut rng, 1, 6).mapv(|v| v + 1.5);
        let bias = randn(&mut rng, 1, 6);
        grad_check(
            |t, ids| {
                let ln = t.layer_norm(ids[0], ids[1], ids[2], 1e-5);
                let sm = t.softmax_rows(ln);
                let lg = t.ln(sm);
                t.sum_all(lg)
            },
            &[x, gain, bias],
            1e-5,
        );
    }

    #[test]
    fn gradcheck_reductions_slices_concats() {
        let mut rng = crate::rng::rng_for(4, "gc", 0);
        let a = randn(&mut rng, 4, 6);
        let b = randn(&mut rng, 2, 6);
        grad_check(
            |t, ids| {
                let top = t.slice_rows(ids[0], 1, 2);
                let cat = t.concat_rows(&[top, ids[1]]);
                let left = t.slice_cols(cat, 0, 3);
                let right = t.slice_cols(cat, 3, 3);
                let mixed = t.concat_cols(&[right, left]);
                let mr = t.mean_rows(mixed);
                let sr = t.sum_rowwise(mr);
                let sp = t.softplus(sr);
                let sq = t.sqrt(sp);
                t.sum_all(sq)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn gradcheck_cosine() {
        let mut rng = crate::rng::rng_for(5, "gc", 0);
        let a = randn(&mut rng, 1, 8);
        let b = randn(&mut rng, 1, 8);
        grad_check(|t, ids| t.cosine(ids[0], ids[1]), &[a, b], 1e-6);
    }

    #[test]
    fn shared_leaf_accumulates() {
        // f(x) = sum(x*x) + sum(x): df/dx = 2x + 1.
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((2, 2), 3.0));
        let xx = tape.mul(x, x);
        let s1 = tape.sum_all(xx);
        let s2 = tape.sum_all(x);
        let f = tape.add(s1, s2);
        let pass = tape.backward(f);
        let g = pass.grad(x).unwrap();
        assert!(g.iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn param_grads_accumulate_across_uses() {
        let mut tape = Tape::new();
        let w = Array2::from_elem((1, 1), 2.0);
        let p1 = tape.param(0, w.clone());
        let p2 = tape.param(0, w); // same parameter bound twice
        let prod = tape.mul(p1, p2);
        let out = tape.sum_all(prod);
        let pass = tape.backward(out);
        let grads = tape.param_grads(&pass, 1);
        // d(w*w)/dw = 2w = 4 when both leaves are the same parameter.
        assert!((grads[0].as_ref().unwrap()[[0, 0]] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(stable_softplus(1000.0), 1000.0);
        assert!(stable_softplus(-1000.0).abs() < 1e-300);
        assert!((stable_softplus(0.0) - 2f64.ln()).abs() < 1e-12);
    }
}
