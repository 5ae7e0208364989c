//! Bradley-Terry reward model baseline and its adaptive-denoising variant.
//!
//! The model is a stage-1-style sequence encoder (input projection,
//! positional encodings, transformer layers) with a per-timestep linear
//! reward head, trained with cross-entropy on the softmax-over-summed-
//! rewards pairwise probability. Adaptive denoising drops a growing
//! fraction `tau(t) = min(gamma * t, tau_max)` of the highest-loss queries
//! from each gradient step, which preferentially discards mislabeled pairs.

use crate::data::{OfflineDataset, PrefLabel, PreferenceDataset, PreferencePair, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{
    sigmoid, sinusoidal_pe, Act, Adam, AttnConfig, Bound, Mlp, ParamSet, Tape, TransformerLayer,
    VarId,
};
use crate::reward::{relabel_with, Normalize};
use crate::rng;
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Drop-rate schedule for adaptive denoising.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ADTSchedule {
    /// Per-step slope of the drop fraction.
    pub gamma_adt: f64,
    /// Ceiling on the drop fraction.
    pub tau_max: f64,
}

impl Default for ADTSchedule {
    fn default() -> Self {
        Self {
            gamma_adt: 0.003,
            tau_max: 0.3,
        }
    }
}

impl ADTSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.gamma_adt < 0.0 {
            return Err(Error::Invalid {
                what: "adt schedule",
                why: "gamma_adt must be >= 0".into(),
            });
        }
        if !(0.0..1.0).contains(&self.tau_max) {
            return Err(Error::Invalid {
                what: "adt schedule",
                why: "tau_max must be in [0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// `tau(t) = min(gamma_adt * t, tau_max)`.
pub fn adt_fraction(t: usize, schedule: &ADTSchedule) -> f64 {
    (schedule.gamma_adt * t as f64).min(schedule.tau_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BTConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub adt: ADTSchedule,
    pub seed: u64,
}

impl BTConfig {
    pub fn desk() -> Self {
        Self {
            d_model: 32,
            ff_dim: 32,
            n_layers: 1,
            n_heads: 4,
            steps: 400,
            batch_size: 32,
            lr_init: 1e-3,
            lr_min: 1e-4,
            adt: ADTSchedule::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Invalid {
                what: "bt config",
                why: "d_model must be divisible by n_heads".into(),
            });
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Invalid {
                what: "bt config",
                why: "steps and batch_size must be positive".into(),
            });
        }
        self.adt.validate()
    }

    fn attn(&self) -> AttnConfig {
        AttnConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            ff_dim: self.ff_dim,
        }
    }
}

/// Sequence encoder with a per-timestep reward head.
#[derive(Debug, Clone)]
pub struct BTRewardModel {
    config: BTConfig,
    input_dim: usize,
    params: ParamSet,
    proj: Mlp,
    layers: Vec<TransformerLayer>,
    head: Mlp,
}

impl BTRewardModel {
    pub fn init(config: &BTConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = rng::rng_for(config.seed, "bt-init", 0);
        let proj = Mlp::init(&mut ps, "proj", &[input_dim, config.d_model], Act::Linear, &mut rng);
        let mut layers = Vec::new();
        for l in 0..config.n_layers {
            layers.push(TransformerLayer::init(&mut ps, &format!("enc.{l}"), config.attn(), &mut rng));
        }
        let head = Mlp::init(&mut ps, "head", &[config.d_model, 1], Act::Linear, &mut rng);
        Ok(Self {
            config: config.clone(),
            input_dim,
            params: ps,
            proj,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &BTConfig {
        &self.config
    }

    fn traj_input(&self, traj: &Trajectory) -> Result<Array2<f64>> {
        let dim = traj.state_dim() + traj.action_dim();
        if dim != self.input_dim {
            return Err(Error::DimMismatch {
                context: "trajectory dims vs reward model input",
                expected: self.input_dim,
                got: dim,
            });
        }
        Ok(ndarray::concatenate(Axis(1), &[traj.states().view(), traj.actions().view()]).unwrap())
    }

    /// Per-timestep rewards for a whole segment (history-conditioned).
    pub fn per_step_rewards(&self, traj: &Trajectory) -> Result<Array1<f64>> {
        let input = self.traj_input(traj)?;
        let h = input.nrows();
        let mut x = self.proj.forward(&self.params, &input);
        x += &sinusoidal_pe(h, self.config.d_model);
        for layer in &self.layers {
            x = layer.forward(&self.params, &x, false);
        }
        Ok(self.head.forward(&self.params, &x).column(0).to_owned())
    }

    pub fn reward_sum(&self, traj: &Trajectory) -> Result<f64> {
        Ok(self.per_step_rewards(traj)?.sum())
    }

    /// Non-Markovian transition reward: feed the prefix up to and including
    /// `t` and read the head output at the final position.
    pub fn prefix_reward(&self, traj: &Trajectory, t: usize) -> Result<f64> {
        if t >= traj.len() {
            return Err(Error::Invalid {
                what: "prefix index",
                why: format!("t = {t} out of 0..{}", traj.len()),
            });
        }
        let prefix = traj.slice(0, t + 1)?;
        let rewards = self.per_step_rewards(&prefix)?;
        Ok(rewards[t])
    }

    fn reward_sum_taped(&self, tape: &mut Tape, bound: &Bound, input: &Array2<f64>) -> VarId {
        let h = input.nrows();
        let x0 = tape.leaf(input.clone());
        let xp = self.proj.forward_taped(tape, bound, x0);
        let mut x = tape.add_const_arr(xp, &sinusoidal_pe(h, self.config.d_model));
        for layer in &self.layers {
            x = layer.forward_taped(tape, bound, x, false);
        }
        let r = self.head.forward_taped(tape, bound, x);
        tape.sum_all(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let config = serde_json::json!({
            "bt": serde_json::to_value(&self.config)?,
            "input_dim": self.input_dim as u64,
        });
        self.params.save(path, config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        let config: BTConfig = serde_json::from_value(
            meta.get("bt")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing bt config".into()))?,
        )?;
        let input_dim = meta
            .get("input_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("checkpoint missing input_dim".into()))? as usize;
        let mut model = Self::init(&config, input_dim)?;
        if model.params.len() != params.len() {
            return Err(Error::Format("checkpoint parameter count mismatch".into()));
        }
        model.params = params;
        Ok(model)
    }
}

/// `P[seg1 > seg0] = exp(sum r1) / (exp(sum r1) + exp(sum r0))`, computed in
/// the numerically stable logistic form.
pub fn bt_probability_from_sums(sum0: f64, sum1: f64) -> f64 {
    sigmoid(sum1 - sum0)
}

pub fn bt_probability(model: &BTRewardModel, seg0: &Trajectory, seg1: &Trajectory) -> Result<f64> {
    Ok(bt_probability_from_sums(
        model.reward_sum(seg0)?,
        model.reward_sum(seg1)?,
    ))
}

/// Per-pair binary cross-entropy between the label and the BT probability;
/// neutral labels use target 0.5.
pub fn bt_pair_loss_from_sums(sum0: f64, sum1: f64, y: f64) -> f64 {
    let delta = sum1 - sum0;
    // -[y ln P + (1-y) ln (1-P)] in softplus form
    y * crate::nn::stable_softplus(-delta) + (1.0 - y) * crate::nn::stable_softplus(delta)
}

/// Mean BCE over a batch of labeled pairs.
pub fn bt_loss(model: &BTRewardModel, batch: &[PreferencePair]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("bt loss batch"));
    }
    let mut total = 0.0;
    for pair in batch {
        total += bt_pair_loss_from_sums(
            model.reward_sum(&pair.seg0)?,
            model.reward_sum(&pair.seg1)?,
            pair.label.as_f64(),
        );
    }
    Ok(total / batch.len() as f64)
}

fn pair_loss_taped(
    model: &BTRewardModel,
    tape: &mut Tape,
    bound: &Bound,
    pair: &PreferencePair,
) -> Result<VarId> {
    let in0 = model.traj_input(&pair.seg0)?;
    let in1 = model.traj_input(&pair.seg1)?;
    let s0 = model.reward_sum_taped(tape, bound, &in0);
    let s1 = model.reward_sum_taped(tape, bound, &in1);
    let delta = tape.sub(s1, s0);
    let y = pair.label.as_f64();
    let neg_delta = tape.neg(delta);
    let sp_neg = tape.softplus(neg_delta);
    let sp_pos = tape.softplus(delta);
    let a = tape.scale(sp_neg, y);
    let b = tape.scale(sp_pos, 1.0 - y);
    Ok(tape.add(a, b))
}

/// Gradient of the mean pair loss with respect to every model parameter;
/// used by gradient-check tests.
pub fn bt_loss_grad(
    model: &BTRewardModel,
    batch: &[PreferencePair],
) -> Result<(f64, Vec<Option<Array2<f64>>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("bt loss batch"));
    }
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let mut losses = Vec::with_capacity(batch.len());
    for pair in batch {
        losses.push(pair_loss_taped(model, &mut tape, &bound, pair)?);
    }
    let mut sum = losses[0];
    for &l in &losses[1..] {
        sum = tape.add(sum, l);
    }
    let mean = tape.scale(sum, 1.0 / batch.len() as f64);
    let value = tape.value(mean)[[0, 0]];
    let pass = tape.backward(mean);
    Ok((value, tape.param_grads(&pass, model.params.len())))
}

/// Train a fresh model. Each step draws a seeded batch, computes per-query
/// losses, optionally drops the `ceil(tau(t) * B)` largest-loss queries, and
/// takes one Adam step on the mean of the rest under a cosine schedule.
pub fn train_bt(
    config: &BTConfig,
    dataset: &PreferenceDataset,
    use_adt: bool,
    seed: u64,
) -> Result<(BTRewardModel, Vec<f64>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("preference dataset"));
    }
    let first = &dataset.pairs[0].seg0;
    let input_dim = first.state_dim() + first.action_dim();
    let mut model = BTRewardModel::init(&BTConfig { seed, ..config.clone() }, input_dim)?;
    let mut adam = Adam::new(&model.params);
    let n = dataset.len();
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let lr = crate::nn::cosine_lr(step, config.steps, config.lr_init, config.lr_min);
        let idx: Vec<usize> = if config.batch_size >= n {
            (0..n).collect()
        } else {
            let mut rng = rng::rng_for(seed, "bt-batch", step as u64);
            sample(&mut rng, n, config.batch_size).into_iter().collect()
        };
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let mut losses = Vec::with_capacity(idx.len());
        for &i in &idx {
            losses.push(pair_loss_taped(&model, &mut tape, &bound, &dataset.pairs[i])?);
        }
        // Adaptive denoising: exclude the largest-loss queries this step.
        let kept: Vec<VarId> = if use_adt {
            let tau = adt_fraction(step, &config.adt);
            let n_drop = ((tau * losses.len() as f64).ceil() as usize).min(losses.len() - 1);
            let mut order: Vec<usize> = (0..losses.len()).collect();
            order.sort_by(|&a, &b| {
                let la = tape.value(losses[a])[[0, 0]];
                let lb = tape.value(losses[b])[[0, 0]];
                lb.partial_cmp(&la).unwrap().then(a.cmp(&b))
            });
            let mut keep: Vec<usize> = order[n_drop..].to_vec();
            keep.sort_unstable();
            keep.into_iter().map(|i| losses[i]).collect()
        } else {
            losses.clone()
        };
        let mut sum = kept[0];
        for &l in &kept[1..] {
            sum = tape.add(sum, l);
        }
        let mean = tape.scale(sum, 1.0 / kept.len() as f64);
        let loss_val = tape.value(mean)[[0, 0]];
        if !loss_val.is_finite() {
            return Err(Error::Diverged { step });
        }
        history.push(loss_val);
        let pass = tape.backward(mean);
        let grads = tape.param_grads(&pass, model.params.len());
        adam.step(&mut model.params, &grads, lr);
    }
    Ok((model, history))
}

/// Fraction of non-neutral pairs whose predicted direction matches the
/// label.
pub fn held_out_accuracy(model: &BTRewardModel, dataset: &PreferenceDataset) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for pair in &dataset.pairs {
        if pair.label.is_neutral() {
            continue;
        }
        let p = bt_probability(model, &pair.seg0, &pair.seg1)?;
        let predicted_one = p > 0.5;
        if predicted_one == (pair.label == PrefLabel::One) {
            correct += 1;
        }
        total += 1;
    }
    if total == 0 {
        return Err(Error::Empty("non-neutral pairs"));
    }
    Ok(correct as f64 / total as f64)
}

/// Relabel an offline dataset with the learned per-timestep rewards,
/// prefix-conditioned like the similarity path.
pub fn bt_relabel(
    model: &BTRewardModel,
    offline: &OfflineDataset,
    normalize: Normalize,
) -> Result<OfflineDataset> {
    relabel_with(
        offline,
        |episode| (0..episode.len()).map(|t| model.prefix_reward(episode, t)).collect(),
        normalize,
    )
}
