//! Small fully-connected networks for value functions and policies.

use super::{xavier_uniform, Bound, ParamSet, Tape, VarId};
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Tanh,
    Linear,
}

fn apply(act: Act, x: Array2<f64>) -> Array2<f64> {
    match act {
        Act::Relu => x.mapv(|e| e.max(0.0)),
        Act::Tanh => x.mapv(f64::tanh),
        Act::Linear => x,
    }
}

/// MLP with ReLU hidden layers and a configurable output activation.
#[derive(Debug, Clone)]
pub struct Mlp {
    weights: Vec<usize>,
    biases: Vec<usize>,
    out_act: Act,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`.
    pub fn init(
        ps: &mut ParamSet,
        prefix: &str,
        dims: &[usize],
        out_act: Act,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least in/out dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..dims.len() - 1 {
            weights.push(ps.add(format!("{prefix}.w{l}"), xavier_uniform(rng, dims[l], dims[l + 1])));
            biases.push(ps.add(format!("{prefix}.b{l}"), Array2::zeros((1, dims[l + 1]))));
        }
        Self {
            weights,
            biases,
            out_act,
        }
    }

    pub fn forward_taped(&self, tape: &mut Tape, bound: &Bound, x: VarId) -> VarId {
        let n_layers = self.weights.len();
        let mut h = x;
        for l in 0..n_layers {
            let hm = tape.matmul(h, bound.ids[self.weights[l]], false, false);
            h = tape.add_row(hm, bound.ids[self.biases[l]]);
            if l + 1 < n_layers {
                h = tape.relu(h);
            } else {
                h = match self.out_act {
                    Act::Relu => tape.relu(h),
                    Act::Tanh => tape.tanh(h),
                    Act::Linear => h,
                };
            }
        }
        h
    }

    pub fn forward(&self, ps: &ParamSet, x: &Array2<f64>) -> Array2<f64> {
        let n_layers = self.weights.len();
        let mut h = x.clone();
        for l in 0..n_layers {
            h = h.dot(ps.value(self.weights[l])) + ps.value(self.biases[l]);
            if l + 1 < n_layers {
                h = apply(Act::Relu, h);
            } else {
                h = apply(self.out_act, h);
            }
        }
        h
    }
}
