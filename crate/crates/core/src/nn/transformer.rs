//! Post-norm transformer encoder layer (self-attention + feed-forward, each
//! followed by residual add and layer norm) with optional causal masking,
//! plus sinusoidal positional encodings.
//!
//! The taped and inference forward passes perform the same arithmetic in the
//! same order, so they agree bitwise on identical inputs.

use super::{xavier_uniform, Bound, ParamSet, Tape, VarId};
use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
}

impl AttnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ff_dim == 0 {
            return Err(Error::Invalid {
                what: "attention config",
                why: "zero dimension".into(),
            });
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Invalid {
                what: "attention config",
                why: format!("d_model {} not divisible by heads {}", self.d_model, self.n_heads),
            });
        }
        Ok(())
    }
}

/// Parameter indices of one encoder layer within a `ParamSet`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    cfg: AttnConfig,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

impl TransformerLayer {
    pub fn init(ps: &mut ParamSet, prefix: &str, cfg: AttnConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.ff_dim;
        let w = |ps: &mut ParamSet, rng: &mut ChaCha8Rng, name: &str, r: usize, c: usize| {
            ps.add(format!("{prefix}.{name}"), xavier_uniform(rng, r, c))
        };
        let zeros =
            |ps: &mut ParamSet, name: &str, c: usize| ps.add(format!("{prefix}.{name}"), Array2::zeros((1, c)));
        let ones =
            |ps: &mut ParamSet, name: &str, c: usize| ps.add(format!("{prefix}.{name}"), Array2::ones((1, c)));
        Self {
            cfg,
            wq: w(ps, rng, "wq", d, d),
            bq: zeros(ps, "bq", d),
            wk: w(ps, rng, "wk", d, d),
            bk: zeros(ps, "bk", d),
            wv: w(ps, rng, "wv", d, d),
            bv: zeros(ps, "bv", d),
            wo: w(ps, rng, "wo", d, d),
            bo: zeros(ps, "bo", d),
            ln1_g: ones(ps, "ln1.g", d),
            ln1_b: zeros(ps, "ln1.b", d),
            w1: w(ps, rng, "ff.w1", d, f),
            b1: zeros(ps, "ff.b1", f),
            w2: w(ps, rng, "ff.w2", f, d),
            b2: zeros(ps, "ff.b2", d),
            ln2_g: ones(ps, "ln2.g", d),
            ln2_b: zeros(ps, "ln2.b", d),
        }
    }

    /// Strictly-upper-triangular mask: position t may attend to 0..=t.
    fn causal_mask(t: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, t), |(i, j)| if j > i { MASK_NEG } else { 0.0 })
    }

    pub fn forward_taped(&self, tape: &mut Tape, bound: &Bound, x: VarId, causal: bool) -> VarId {
        self.forward_taped_dropout(tape, bound, x, causal, 0.0, None)
    }

    /// Training-time forward with inverted dropout on the attention output
    /// and both feed-forward stages. `rate = 0` (or no rng) disables it.
    pub fn forward_taped_dropout(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: VarId,
        causal: bool,
        rate: f64,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> VarId {
        let mut dropout = |tape: &mut Tape, v: VarId| -> VarId {
            if rate <= 0.0 {
                return v;
            }
            let Some(rng) = rng.as_deref_mut() else { return v };
            let keep = 1.0 - rate;
            let shape = tape.value(v).raw_dim();
            let mask = Array2::from_shape_fn(shape, |_| {
                if rand::Rng::random::<f64>(rng) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            });
            tape.mul_const(v, mask)
        };
        let ids = &bound.ids;
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let t_len = tape.value(x).nrows();

        let qm = tape.matmul(x, ids[self.wq], false, false);
        let q = tape.add_row(qm, ids[self.bq]);
        let km = tape.matmul(x, ids[self.wk], false, false);
        let k = tape.add_row(km, ids[self.bk]);
        let vm = tape.matmul(x, ids[self.wv], false, false);
        let v = tape.add_row(vm, ids[self.bv]);

        let mask = causal.then(|| Self::causal_mask(t_len));
        let mut head_outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dk, dk);
            let kh = tape.slice_cols(k, h * dk, dk);
            let vh = tape.slice_cols(v, h * dk, dk);
            let scores_raw = tape.matmul(qh, kh, false, true);
            let mut scores = tape.scale(scores_raw, scale);
            if let Some(m) = &mask {
                scores = tape.add_const_arr(scores, m);
            }
            let probs = tape.softmax_rows(scores);
            head_outs.push(tape.matmul(probs, vh, false, false));
        }
        let attn = tape.concat_cols(&head_outs);
        let proj_m = tape.matmul(attn, ids[self.wo], false, false);
        let proj_b = tape.add_row(proj_m, ids[self.bo]);
        let proj = dropout(tape, proj_b);
        let res1 = tape.add(x, proj);
        let x1 = tape.layer_norm(res1, ids[self.ln1_g], ids[self.ln1_b], LN_EPS);

        let h1m = tape.matmul(x1, ids[self.w1], false, false);
        let h1 = tape.add_row(h1m, ids[self.b1]);
        let h1r = tape.relu(h1);
        let h1a = dropout(tape, h1r);
        let h2m = tape.matmul(h1a, ids[self.w2], false, false);
        let h2b = tape.add_row(h2m, ids[self.b2]);
        let h2 = dropout(tape, h2b);
        let res2 = tape.add(x1, h2);
        tape.layer_norm(res2, ids[self.ln2_g], ids[self.ln2_b], LN_EPS)
    }

    /// Tape-free forward pass for frozen-encoder inference.
    pub fn forward(&self, ps: &ParamSet, x: &Array2<f64>, causal: bool) -> Array2<f64> {
        let d = self.cfg.d_model;
        let heads = self.cfg.n_heads;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let t_len = x.nrows();

        let q = x.dot(ps.value(self.wq)) + ps.value(self.bq);
        let k = x.dot(ps.value(self.wk)) + ps.value(self.bk);
        let v = x.dot(ps.value(self.wv)) + ps.value(self.bv);

        let mask = causal.then(|| Self::causal_mask(t_len));
        let mut attn = Array2::zeros((t_len, d));
        for h in 0..heads {
            let cols = ndarray::s![.., h * dk..(h + 1) * dk];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let mut scores = qh.dot(&kh.t()) * scale;
            if let Some(m) = &mask {
                scores += m;
            }
            softmax_rows_inplace(&mut scores);
            attn.slice_mut(cols).assign(&scores.dot(&vh));
        }
        let proj = attn.dot(ps.value(self.wo)) + ps.value(self.bo);
        let x1 = layer_norm_rows(&(x + &proj), ps.value(self.ln1_g), ps.value(self.ln1_b));

        let h1 = (x1.dot(ps.value(self.w1)) + ps.value(self.b1)).mapv(|e| e.max(0.0));
        let h2 = h1.dot(ps.value(self.w2)) + ps.value(self.b2);
        layer_norm_rows(&(&x1 + &h2), ps.value(self.ln2_g), ps.value(self.ln2_b))
    }
}

pub(crate) fn softmax_rows_inplace(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|e| (e - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
}

pub(crate) fn layer_norm_rows(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        let n = row.len() as f64;
        let mu = row.sum() / n;
        let var = row.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n;
        let sd = (var + LN_EPS).sqrt();
        for (j, e) in row.iter().enumerate() {
            out[[i, j]] = (e - mu) / sd * gain[[0, j]] + bias[[0, j]];
        }
    }
    out
}

/// Classic sinusoidal positional encoding table, `(len, d)`.
pub fn sinusoidal_pe(len: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((len, d));
    for pos in 0..len {
        for i in 0..d / 2 {
            let rate = (pos as f64) / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[[pos, 2 * i]] = rate.sin();
            if 2 * i + 1 < d {
                pe[[pos, 2 * i + 1]] = rate.cos();
            }
        }
    }
    pe
}

/// Mean over rows (sequence positions or set members).
pub fn mean_pool(x: &Array2<f64>) -> Array2<f64> {
    let m = x.nrows() as f64;
    x.sum_axis(Axis(0)).insert_axis(Axis(0)) / m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer_and_params(seed: u64) -> (TransformerLayer, ParamSet) {
        let mut ps = ParamSet::new();
        let mut rng = crate::rng::rng_for(seed, "tf-test", 0);
        let cfg = AttnConfig {
            d_model: 8,
            n_heads: 2,
            ff_dim: 16,
        };
        let layer = TransformerLayer::init(&mut ps, "l0", cfg, &mut rng);
        (layer, ps)
    }

    #[test]
    fn taped_and_inference_forward_agree_bitwise() {
        let (layer, ps) = layer_and_params(1);
        let mut rng = crate::rng::rng_for(2, "tf-test", 1);
        let x = xavier_uniform(&mut rng, 5, 8);
        for causal in [false, true] {
            let inf = layer.forward(&ps, &x, causal);
            let mut tape = Tape::new();
            let bound = ps.bind(&mut tape);
            let xid = tape.leaf(x.clone());
            let out = layer.forward_taped(&mut tape, &bound, xid, causal);
            assert_eq!(tape.value(out), &inf);
        }
    }

    #[test]
    fn causal_masking_blocks_future_positions() {
        let (layer, ps) = layer_and_params(3);
        let mut rng = crate::rng::rng_for(4, "tf-test", 0);
        let x = xavier_uniform(&mut rng, 6, 8);
        let full = layer.forward(&ps, &x, true);
        // Changing the last timestep must not affect earlier outputs.
        let mut x2 = x.clone();
        x2.row_mut(5).mapv_inplace(|v| v + 1.0);
        let full2 = layer.forward(&ps, &x2, true);
        for t in 0..5 {
            for j in 0..8 {
                assert!((full[[t, j]] - full2[[t, j]]).abs() < 1e-12);
            }
        }
        // Without the mask it does.
        let open = layer.forward(&ps, &x, false);
        let open2 = layer.forward(&ps, &x2, false);
        assert!((&open - &open2).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn attention_layer_gradcheck() {
        let (layer, ps) = layer_and_params(5);
        let mut rng = crate::rng::rng_for(6, "tf-test", 0);
        let x = xavier_uniform(&mut rng, 4, 8);
        // Analytic gradients of sum(layer(x)) wrt a weight matrix vs FD.
        let loss_of = |ps: &ParamSet| -> f64 {
            layer.forward(ps, &x, false).sum()
        };
        let mut tape = Tape::new();
        let bound = ps.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let out = layer.forward_taped(&mut tape, &bound, xid, false);
        let loss = tape.sum_all(out);
        let pass = tape.backward(loss);
        let grads = tape.param_grads(&pass, ps.len());
        let h = 1e-6;
        // Spot-check a few entries of wq and ff.w2 against central differences.
        for &(pidx, r, c) in &[(layer.wq, 0usize, 1usize), (layer.wq, 3, 7), (layer.w2, 2, 4)] {
            let mut plus = ps.clone();
            plus.value_mut(pidx)[[r, c]] += h;
            let mut minus = ps.clone();
            minus.value_mut(pidx)[[r, c]] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let a = grads[pidx].as_ref().unwrap()[[r, c]];
            assert!(
                (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8) < 1e-4,
                "param {pidx} [{r},{c}]: fd {fd} vs {a}"
            );
        }
    }

    #[test]
    fn pe_shape_and_first_position() {
        let pe = sinusoidal_pe(10, 8);
        assert_eq!(pe.dim(), (10, 8));
        // Position 0: sin terms 0, cos terms 1.
        for i in 0..4 {
            assert_eq!(pe[[0, 2 * i]], 0.0);
            assert_eq!(pe[[0, 2 * i + 1]], 1.0);
        }
    }
}
