//! Contrastive two-stage set encoder.
//!
//! Stage 1 encodes each trajectory (states and actions concatenated per
//! timestep, projected to `d_model`, plus sinusoidal positional encodings)
//! with a transformer layer stack and mean-pools over timesteps into one
//! vector `u` per trajectory. Each category's `u`s are partitioned into `k`
//! random subsets, re-shuffled every epoch; stage 2 encodes each subset with
//! a second transformer stack (no positional encoding, members attend to
//! each other), mean-pools over members, and maps to a `z_dim` latent. An
//! NT-Xent loss over cosine similarities pulls same-category subset latents
//! together and pushes the two categories apart.
//!
//! After training, feeding an entire category through stage 2 as a single
//! subset yields the frozen group latent used for reward inference.

use crate::data::{Trajectory, TrajectorySets};
use crate::error::{Error, Result};
use crate::nn::{
    cosine, sinusoidal_pe, transformer::mean_pool, Adam, AttnConfig, Bound, Mlp, ParamSet, Tape,
    TransformerLayer, VarId,
};
use crate::rng;
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub ff_dim: usize,
    pub z_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub k_subsets: usize,
    pub temperature: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub lr_schedule: LrSchedule,
    /// Stage-1 attention restricted to past timesteps. Off by default; it
    /// made no difference or slightly hurt downstream learning.
    pub causal_mask: bool,
    /// Train on random-length subsequences with random starts.
    pub subseq_augment: bool,
    pub subseq_lengths: Vec<usize>,
    pub seed: u64,
}

impl EncoderConfig {
    /// Full-scale settings used for the reported benchmark runs.
    pub fn paper() -> Self {
        Self {
            d_model: 256,
            ff_dim: 256,
            z_dim: 16,
            n_layers: 1,
            n_heads: 4,
            dropout: 0.0,
            k_subsets: 2,
            temperature: 0.1,
            batch_size: 256,
            epochs: 4000,
            lr_init: 1e-5,
            lr_min: 1e-6,
            lr_schedule: LrSchedule::Cosine,
            causal_mask: false,
            subseq_augment: false,
            subseq_lengths: vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
            seed: 0,
        }
    }

    /// Minute-scale CPU settings for the synthetic tasks.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            ff_dim: 64,
            z_dim: 16,
            n_layers: 1,
            n_heads: 4,
            dropout: 0.0,
            k_subsets: 2,
            temperature: 0.1,
            batch_size: usize::MAX, // full set
            epochs: 500,
            lr_init: 1e-3,
            lr_min: 1e-4,
            lr_schedule: LrSchedule::Cosine,
            causal_mask: false,
            subseq_augment: false,
            subseq_lengths: vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Invalid {
                what: "encoder config",
                why: format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads),
            });
        }
        if self.k_subsets < 1 {
            return Err(Error::Invalid {
                what: "encoder config",
                why: "k_subsets must be >= 1".into(),
            });
        }
        if self.temperature <= 0.0 {
            return Err(Error::Invalid {
                what: "encoder config",
                why: "temperature must be positive".into(),
            });
        }
        if self.lr_min > self.lr_init {
            return Err(Error::Invalid {
                what: "encoder config",
                why: "lr_min must not exceed lr_init".into(),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid {
                what: "encoder config",
                why: "dropout must be in [0, 1)".into(),
            });
        }
        if self.z_dim == 0 || self.n_layers == 0 || self.epochs == 0 {
            return Err(Error::Invalid {
                what: "encoder config",
                why: "z_dim, n_layers and epochs must be positive".into(),
            });
        }
        Ok(())
    }

    fn attn(&self) -> AttnConfig {
        AttnConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            ff_dim: self.ff_dim,
        }
    }
}

/// Which of the two labeled sets a latent summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Preferred,
    NonPreferred,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Preferred => "preferred",
            Category::NonPreferred => "non-preferred",
        }
    }
}

/// Frozen representation of a full labeled set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLatent {
    pub z_star: Array1<f64>,
    pub category: Category,
    pub source_set_size: usize,
}

/// The trained two-stage encoder. Inference methods are read-only and safe
/// to call concurrently.
#[derive(Debug, Clone)]
pub struct SetEncoder {
    config: EncoderConfig,
    input_dim: usize,
    params: ParamSet,
    proj: Mlp,
    stage1: Vec<TransformerLayer>,
    stage2: Vec<TransformerLayer>,
    head: Mlp,
}

impl SetEncoder {
    /// Fresh encoder with seeded initialization.
    pub fn init(config: &EncoderConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Invalid {
                what: "encoder input dim",
                why: "zero".into(),
            });
        }
        let mut ps = ParamSet::new();
        let mut rng = rng::rng_for(config.seed, "encoder-init", 0);
        let proj = Mlp::init(
            &mut ps,
            "proj",
            &[input_dim, config.d_model],
            crate::nn::Act::Linear,
            &mut rng,
        );
        let mut stage1 = Vec::new();
        for l in 0..config.n_layers {
            stage1.push(TransformerLayer::init(&mut ps, &format!("stage1.{l}"), config.attn(), &mut rng));
        }
        let mut stage2 = Vec::new();
        for l in 0..config.n_layers {
            stage2.push(TransformerLayer::init(&mut ps, &format!("stage2.{l}"), config.attn(), &mut rng));
        }
        let head = Mlp::init(
            &mut ps,
            "head",
            &[config.d_model, config.z_dim],
            crate::nn::Act::Linear,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            input_dim,
            params: ps,
            proj,
            stage1,
            stage2,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// States and actions concatenated per timestep, `(H, input_dim)`.
    fn traj_input(&self, traj: &Trajectory) -> Result<Array2<f64>> {
        let dim = traj.state_dim() + traj.action_dim();
        if dim != self.input_dim {
            return Err(Error::DimMismatch {
                context: "trajectory dims vs encoder input",
                expected: self.input_dim,
                got: dim,
            });
        }
        Ok(ndarray::concatenate(Axis(1), &[traj.states().view(), traj.actions().view()]).unwrap())
    }

    /// Stage 1: one `d_model` vector per trajectory (mean over timesteps).
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Array1<f64>> {
        let input = self.traj_input(traj)?;
        let h = input.nrows();
        let mut x = self.proj.forward(&self.params, &input);
        x += &sinusoidal_pe(h, self.config.d_model);
        for layer in &self.stage1 {
            x = layer.forward(&self.params, &x, self.config.causal_mask);
        }
        Ok(mean_pool(&x).row(0).to_owned())
    }

    /// Stage 2: one `z_dim` latent per subset of trajectory encodings.
    /// Singletons are valid (used by reward inference).
    pub fn encode_subset(&self, members: &[Array1<f64>]) -> Result<Array1<f64>> {
        if members.is_empty() {
            return Err(Error::Empty("subset"));
        }
        for m in members {
            if m.len() != self.config.d_model {
                return Err(Error::DimMismatch {
                    context: "subset member vs d_model",
                    expected: self.config.d_model,
                    got: m.len(),
                });
            }
        }
        let mut x = Array2::zeros((members.len(), self.config.d_model));
        for (i, m) in members.iter().enumerate() {
            x.row_mut(i).assign(m);
        }
        for layer in &self.stage2 {
            x = layer.forward(&self.params, &x, false);
        }
        let pooled = mean_pool(&x);
        Ok(self.head.forward(&self.params, &pooled).row(0).to_owned())
    }

    /// Full-trajectory latent: stage 1 then stage 2 as a singleton subset.
    pub fn trajectory_latent(&self, traj: &Trajectory) -> Result<Array1<f64>> {
        let u = self.encode_trajectory(traj)?;
        self.encode_subset(std::slice::from_ref(&u))
    }

    fn stage1_taped(&self, tape: &mut Tape, bound: &Bound, input: &Array2<f64>, dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>) -> VarId {
        let h = input.nrows();
        let x0 = tape.leaf(input.clone());
        let xp = self.proj.forward_taped(tape, bound, x0);
        let mut x = tape.add_const_arr(xp, &sinusoidal_pe(h, self.config.d_model));
        let mut rng = dropout_rng;
        for layer in &self.stage1 {
            x = layer.forward_taped_dropout(
                tape,
                bound,
                x,
                self.config.causal_mask,
                self.config.dropout,
                rng.as_deref_mut(),
            );
        }
        tape.mean_rows(x)
    }

    fn stage2_taped(&self, tape: &mut Tape, bound: &Bound, member_ids: &[VarId], mut dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>) -> VarId {
        let mut x = tape.concat_rows(member_ids);
        for layer in &self.stage2 {
            x = layer.forward_taped_dropout(tape, bound, x, false, self.config.dropout, dropout_rng.as_deref_mut());
        }
        let pooled = tape.mean_rows(x);
        self.head.forward_taped(tape, bound, pooled)
    }

    /// Persist parameters together with the config; loading reproduces
    /// inference outputs bitwise on the same platform.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let config = serde_json::json!({
            "encoder": serde_json::to_value(&self.config)?,
            "input_dim": self.input_dim as u64,
        });
        self.params.save(path, config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        let config: EncoderConfig = serde_json::from_value(
            meta.get("encoder")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint missing encoder config".into()))?,
        )?;
        let input_dim = meta
            .get("input_dim")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("checkpoint missing input_dim".into()))? as usize;
        let mut enc = Self::init(&config, input_dim)?;
        if enc.params.len() != params.len() {
            return Err(Error::Format("checkpoint parameter count mismatch".into()));
        }
        for i in 0..params.len() {
            if enc.params.name(i) != params.name(i) {
                return Err(Error::Format(format!(
                    "checkpoint parameter {} name mismatch: {} vs {}",
                    i,
                    enc.params.name(i),
                    params.name(i)
                )));
            }
        }
        enc.params = params;
        Ok(enc)
    }
}

/// Uniformly random partition of `0..n` into `k` subsets whose sizes differ
/// by at most one. A fresh seed gives a fresh partition.
pub fn form_subsets(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::Invalid {
            what: "subset count",
            why: "k = 0".into(),
        });
    }
    if n < k {
        return Err(Error::Invalid {
            what: "subset formation",
            why: format!("{n} items cannot form {k} non-empty subsets"),
        });
    }
    let mut rng = rng::rng_for(seed, "subsets", 0);
    let perm: Vec<usize> = sample(&mut rng, n, n).into_iter().collect();
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut off = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        out.push(perm[off..off + size].to_vec());
        off += size;
    }
    Ok(out)
}

fn check_latents(name: &'static str, zs: &[Array1<f64>]) -> Result<()> {
    if zs.len() < 2 {
        return Err(Error::Invalid {
            what: name,
            why: "each category needs at least 2 latents (every anchor needs a positive)".into(),
        });
    }
    Ok(())
}

/// NT-Xent over cosine similarities. For each anchor the positives are the
/// other latents of its category and the candidates are all other latents:
///
/// `loss_i = -ln( sum_pos exp(cos/T) / sum_{m != i} exp(cos/T) )`
///
/// returned as the mean over all anchors. Non-negative, and zero only in the
/// limit of perfect within-category alignment and cross-category opposition.
pub fn contrastive_loss(z_p: &[Array1<f64>], z_n: &[Array1<f64>], temperature: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(Error::Invalid {
            what: "temperature",
            why: format!("{temperature} <= 0"),
        });
    }
    check_latents("preferred latents", z_p)?;
    check_latents("non-preferred latents", z_n)?;
    let all: Vec<&Array1<f64>> = z_p.iter().chain(z_n.iter()).collect();
    let n_p = z_p.len();
    let n = all.len();
    let mut sim = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let s = cosine(all[i].view(), all[j].view());
            sim[[i, j]] = s;
            sim[[j, i]] = s;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let same = |j: usize| (j < n_p) == (i < n_p);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = (sim[[i, j]] / temperature).exp();
            den += e;
            if same(j) {
                num += e;
            }
        }
        total += den.ln() - num.ln();
    }
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::Invalid {
            what: "contrastive loss",
            why: "non-finite".into(),
        });
    }
    Ok(loss)
}

/// Taped NT-Xent over latent variables; same formula as [`contrastive_loss`].
fn contrastive_loss_taped(
    tape: &mut Tape,
    z_p: &[VarId],
    z_n: &[VarId],
    temperature: f64,
) -> VarId {
    let all: Vec<VarId> = z_p.iter().chain(z_n.iter()).copied().collect();
    let n_p = z_p.len();
    let n = all.len();
    let inv_t = 1.0 / temperature;
    // exp(cos / T) per unordered pair
    let mut e = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let c = tape.cosine(all[i], all[j]);
            let sc = tape.scale(c, inv_t);
            let ex = tape.exp(sc);
            e[i][j] = ex;
            e[j][i] = ex;
        }
    }
    let mut anchor_losses = Vec::with_capacity(n);
    for i in 0..n {
        let same = |j: usize| (j < n_p) == (i < n_p);
        let mut num: Option<VarId> = None;
        let mut den: Option<VarId> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            den = Some(match den {
                Some(d) => tape.add(d, e[i][j]),
                None => e[i][j],
            });
            if same(j) {
                num = Some(match num {
                    Some(d) => tape.add(d, e[i][j]),
                    None => e[i][j],
                });
            }
        }
        let ln_den = tape.ln(den.expect("n >= 2"));
        let ln_num = tape.ln(num.expect("each category has >= 2 latents"));
        anchor_losses.push(tape.sub(ln_den, ln_num));
    }
    let mut sum = anchor_losses[0];
    for &l in &anchor_losses[1..] {
        sum = tape.add(sum, l);
    }
    tape.scale(sum, 1.0 / n as f64)
}

/// Gradient of [`contrastive_loss`] with respect to every latent, computed
/// by the tape. Used by gradient-check tests.
pub fn contrastive_loss_grad(
    z_p: &[Array1<f64>],
    z_n: &[Array1<f64>],
    temperature: f64,
) -> Result<(f64, Vec<Array1<f64>>)> {
    check_latents("preferred latents", z_p)?;
    check_latents("non-preferred latents", z_n)?;
    let mut tape = Tape::new();
    let to_row = |z: &Array1<f64>| z.clone().insert_axis(Axis(0));
    let p_ids: Vec<VarId> = z_p.iter().map(|z| tape.leaf(to_row(z))).collect();
    let n_ids: Vec<VarId> = z_n.iter().map(|z| tape.leaf(to_row(z))).collect();
    let loss = contrastive_loss_taped(&mut tape, &p_ids, &n_ids, temperature);
    let value = tape.value(loss)[[0, 0]];
    let pass = tape.backward(loss);
    let grads = p_ids
        .iter()
        .chain(n_ids.iter())
        .map(|&id| {
            pass.grad(id)
                .map(|g| g.row(0).to_owned())
                .unwrap_or_else(|| Array1::zeros(z_p[0].len()))
        })
        .collect();
    Ok((value, grads))
}

/// Training record: loss per epoch.
pub type LossHistory = Vec<f64>;

/// Train a fresh encoder on the two sets. One optimizer step per epoch on a
/// freshly shuffled subset partition, Adam under a cosine schedule.
/// Single-threaded and bitwise deterministic for a fixed config.
pub fn train_encoder(config: &EncoderConfig, sets: &TrajectorySets) -> Result<(SetEncoder, LossHistory)> {
    config.validate()?;
    if sets.preferred.is_empty() || sets.non_preferred.is_empty() {
        return Err(Error::Empty("trajectory sets"));
    }
    let k = config.k_subsets.max(2); // every anchor needs a positive
    if sets.preferred.len() < k || sets.non_preferred.len() < k {
        return Err(Error::Invalid {
            what: "trajectory sets",
            why: format!("each category needs at least k={k} trajectories"),
        });
    }
    let input_dim = sets.preferred[0].state_dim() + sets.preferred[0].action_dim();
    let mut enc = SetEncoder::init(config, input_dim)?;
    let mut adam = Adam::new(&enc.params);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = match config.lr_schedule {
            LrSchedule::Cosine => crate::nn::cosine_lr(epoch, config.epochs, config.lr_init, config.lr_min),
        };
        let idx_p = select_batch(sets.preferred.len(), config.batch_size / 2, k, config.seed, "batch-p", epoch);
        let idx_n = select_batch(sets.non_preferred.len(), config.batch_size / 2, k, config.seed, "batch-n", epoch);

        let mut tape = Tape::new();
        let bound = enc.params.bind(&mut tape);
        let mut dropout_rng = (config.dropout > 0.0)
            .then(|| rng::rng_for(config.seed, "dropout", epoch as u64));
        let mut aug_rng = config
            .subseq_augment
            .then(|| rng::rng_for(config.seed, "subseq", epoch as u64));

        let encode_all = |tape: &mut Tape,
                              dropout_rng: &mut Option<rand_chacha::ChaCha8Rng>,
                              aug_rng: &mut Option<rand_chacha::ChaCha8Rng>,
                              trajs: &[Trajectory],
                              idx: &[usize]|
         -> Result<Vec<VarId>> {
            idx.iter()
                .map(|&i| {
                    let traj = &trajs[i];
                    let input = match aug_rng {
                        Some(rng) => enc.traj_input(&augment_slice(traj, &config.subseq_lengths, rng)?)?,
                        None => enc.traj_input(traj)?,
                    };
                    Ok(enc.stage1_taped(tape, &bound, &input, dropout_rng.as_mut()))
                })
                .collect()
        };
        let u_p = encode_all(&mut tape, &mut dropout_rng, &mut aug_rng, &sets.preferred, &idx_p)?;
        let u_n = encode_all(&mut tape, &mut dropout_rng, &mut aug_rng, &sets.non_preferred, &idx_n)?;

        let parts_p = form_subsets(u_p.len(), k, rng::derive_seed(config.seed, "shuffle-p", epoch as u64))?;
        let parts_n = form_subsets(u_n.len(), k, rng::derive_seed(config.seed, "shuffle-n", epoch as u64))?;
        let z_of = |tape: &mut Tape, dropout_rng: &mut Option<rand_chacha::ChaCha8Rng>, us: &[VarId], parts: &[Vec<usize>]| -> Vec<VarId> {
            parts
                .iter()
                .map(|part| {
                    let members: Vec<VarId> = part.iter().map(|&m| us[m]).collect();
                    enc.stage2_taped(tape, &bound, &members, dropout_rng.as_mut())
                })
                .collect()
        };
        let z_p = z_of(&mut tape, &mut dropout_rng, &u_p, &parts_p);
        let z_n = z_of(&mut tape, &mut dropout_rng, &u_n, &parts_n);

        let loss = contrastive_loss_taped(&mut tape, &z_p, &z_n, config.temperature);
        let loss_val = tape.value(loss)[[0, 0]];
        if !loss_val.is_finite() {
            return Err(Error::Diverged { step: epoch });
        }
        history.push(loss_val);

        let pass = tape.backward(loss);
        let grads = tape.param_grads(&pass, enc.params.len());
        adam.step(&mut enc.params, &grads, lr);
    }
    Ok((enc, history))
}

/// Choose the epoch's trajectories for one category: all of them when the
/// cap allows, otherwise a seeded sample without replacement (never fewer
/// than `k`).
fn select_batch(n: usize, cap: usize, k: usize, seed: u64, tag: &str, epoch: usize) -> Vec<usize> {
    let take = cap.clamp(k, n);
    if take >= n {
        (0..n).collect()
    } else {
        let mut rng = rng::rng_for(seed, tag, epoch as u64);
        sample(&mut rng, n, take).into_iter().collect()
    }
}

/// Random-length, random-start slice for subsequence augmentation.
fn augment_slice(
    traj: &Trajectory,
    lengths: &[usize],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Trajectory> {
    let h = traj.len();
    let usable: Vec<usize> = lengths.iter().copied().filter(|&l| l >= 1 && l <= h).collect();
    if usable.is_empty() {
        return Ok(traj.clone());
    }
    let len = usable[rand::Rng::random_range(rng, 0..usable.len())];
    let start = if h == len {
        0
    } else {
        rand::Rng::random_range(rng, 0..=(h - len))
    };
    traj.slice(start, len)
}

/// Encode an entire category as one subset through the frozen encoder.
pub fn infer_group_latent(
    enc: &SetEncoder,
    full_set: &[Trajectory],
    category: Category,
) -> Result<GroupLatent> {
    if full_set.is_empty() {
        return Err(Error::Empty("group latent set"));
    }
    let us = crate::par::map_slice(full_set, |t| enc.encode_trajectory(t));
    let mut members = Vec::with_capacity(us.len());
    for u in us {
        members.push(u?);
    }
    let z_star = enc.encode_subset(&members)?;
    if !z_star.iter().all(|v| v.is_finite()) {
        return Err(Error::Invalid {
            what: "group latent",
            why: "non-finite".into(),
        });
    }
    Ok(GroupLatent {
        z_star,
        category,
        source_set_size: full_set.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, PolicyKind};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            d_model: 16,
            ff_dim: 16,
            z_dim: 8,
            n_layers: 1,
            n_heads: 2,
            epochs: 30,
            lr_init: 1e-3,
            lr_min: 1e-4,
            seed: 11,
            ..EncoderConfig::desk()
        }
    }

    fn toy_traj(seed: u64, kind: PolicyKind) -> Trajectory {
        let env = envs::env_by_name("line-hopper").unwrap();
        let policy = envs::scripted_policy("line-hopper", kind).unwrap();
        envs::rollout(env.as_ref(), policy.as_ref(), 12, seed).unwrap()
    }

    fn toy_encoder() -> SetEncoder {
        SetEncoder::init(&small_config(), 5).unwrap()
    }

    #[test]
    fn encode_trajectory_shape_and_determinism() {
        let enc = toy_encoder();
        let t = toy_traj(3, PolicyKind::Medium);
        let u1 = enc.encode_trajectory(&t).unwrap();
        let u2 = enc.encode_trajectory(&t).unwrap();
        assert_eq!(u1.len(), 16);
        assert_eq!(u1, u2);
    }

    #[test]
    fn timestep_reversal_changes_encoding() {
        // positional encodings break time symmetry
        let enc = toy_encoder();
        let t = toy_traj(4, PolicyKind::Medium);
        let u = enc.encode_trajectory(&t).unwrap();
        let u_rev = enc.encode_trajectory(&t.reversed()).unwrap();
        assert!((&u - &u_rev).iter().any(|d| d.abs() > 1e-9));
    }

    #[test]
    fn encode_trajectory_rejects_wrong_dims() {
        let enc = toy_encoder();
        let env = envs::env_by_name("twin-walker").unwrap();
        let policy = envs::scripted_policy("twin-walker", PolicyKind::Random).unwrap();
        let t = envs::rollout(env.as_ref(), policy.as_ref(), 12, 0).unwrap();
        assert!(enc.encode_trajectory(&t).is_err());
    }

    #[test]
    fn subset_encoding_is_permutation_invariant() {
        let enc = toy_encoder();
        let us: Vec<Array1<f64>> = (0..4)
            .map(|i| enc.encode_trajectory(&toy_traj(i, PolicyKind::Medium)).unwrap())
            .collect();
        let z = enc.encode_subset(&us).unwrap();
        assert_eq!(z.len(), 8);
        // exhaustive permutations of 4 members
        let perms = permutations(4);
        for perm in perms {
            let shuffled: Vec<Array1<f64>> = perm.iter().map(|&i| us[i].clone()).collect();
            let z2 = enc.encode_subset(&shuffled).unwrap();
            let max_dev = (&z - &z2).iter().map(|d| d.abs()).fold(0.0, f64::max);
            assert!(max_dev < 1e-6, "deviation {max_dev}");
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q: Vec<usize> = p.iter().map(|&x| x + usize::from(x >= pos)).collect();
                q.insert(0, pos);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn singleton_subset_is_valid_and_distinct_sets_differ() {
        let enc = toy_encoder();
        let u1 = enc.encode_trajectory(&toy_traj(1, PolicyKind::Expert)).unwrap();
        let u2 = enc.encode_trajectory(&toy_traj(2, PolicyKind::Random)).unwrap();
        let z1 = enc.encode_subset(std::slice::from_ref(&u1)).unwrap();
        let z2 = enc.encode_subset(std::slice::from_ref(&u2)).unwrap();
        assert_eq!(z1.len(), 8);
        assert!((&z1 - &z2).iter().any(|d| d.abs() > 1e-9));
        assert!(enc.encode_subset(&[]).is_err());
    }

    #[test]
    fn form_subsets_partition_laws() {
        // 6 items over k=2: two of size 3; 5 items: sizes {3, 2}
        let parts = form_subsets(6, 2, 1).unwrap();
        assert_eq!(parts[0].len(), 3);
        assert_eq!(parts[1].len(), 3);
        let parts = form_subsets(5, 2, 1).unwrap();
        assert_eq!(parts[0].len(), 3);
        assert_eq!(parts[1].len(), 2);
        // union is the full index set, pairwise disjoint
        let mut seen: Vec<usize> = parts.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert!(form_subsets(1, 2, 0).is_err());
        // fresh seeds reshuffle
        assert_ne!(form_subsets(20, 2, 1).unwrap(), form_subsets(20, 2, 2).unwrap());
    }

    #[test]
    fn subset_shuffle_covers_all_pairs() {
        // over many epochs every same-category pair co-occurs at least once
        let n = 8;
        let mut co = vec![vec![false; n]; n];
        for epoch in 0..200 {
            for part in form_subsets(n, 2, epoch).unwrap() {
                for &a in &part {
                    for &b in &part {
                        co[a][b] = true;
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                assert!(co[a][b], "{a},{b} never co-occurred");
            }
        }
    }

    #[test]
    fn contrastive_loss_known_values() {
        let t = 0.1;
        // aligned within category, orthogonal across: loss = ln(1 + 2 e^{-10})
        let zp = vec![ndarray::array![1.0, 0.0], ndarray::array![1.0, 0.0]];
        let zn = vec![ndarray::array![0.0, 1.0], ndarray::array![0.0, 1.0]];
        let loss = contrastive_loss(&zp, &zn, t).unwrap();
        let expected = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((loss - 9.08e-5).abs() < 1e-6);

        // all four identical: 1 positive of 3 equal candidates -> ln 3
        let same = vec![ndarray::array![0.3, 0.4], ndarray::array![0.3, 0.4]];
        let loss = contrastive_loss(&same, &same, t).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn contrastive_loss_scale_invariant_and_nonnegative() {
        let mut rng = rng::rng_for(5, "cl", 0);
        for trial in 0..20 {
            let z = |rng: &mut rand_chacha::ChaCha8Rng| {
                Array1::from_shape_fn(6, |_| rand::Rng::random_range(rng, -1.0..1.0))
            };
            let zp = vec![z(&mut rng), z(&mut rng), z(&mut rng)];
            let zn = vec![z(&mut rng), z(&mut rng)];
            let l = contrastive_loss(&zp, &zn, 0.1).unwrap();
            assert!(l >= 0.0, "trial {trial}: loss {l}");
            let scale = 3.7;
            let zp_s: Vec<_> = zp.iter().map(|v| v * scale).collect();
            let zn_s: Vec<_> = zn.iter().map(|v| v * scale).collect();
            let l_s = contrastive_loss(&zp_s, &zn_s, 0.1).unwrap();
            assert!((l - l_s).abs() < 1e-9, "scale changed loss: {l} vs {l_s}");
        }
    }

    #[test]
    fn contrastive_loss_requires_positives() {
        let zp = vec![ndarray::array![1.0, 0.0]];
        let zn = vec![ndarray::array![0.0, 1.0], ndarray::array![0.0, 1.0]];
        assert!(contrastive_loss(&zp, &zn, 0.1).is_err());
    }

    #[test]
    fn contrastive_grad_matches_finite_differences() {
        let mut rng = rng::rng_for(6, "clg", 0);
        let z = |rng: &mut rand_chacha::ChaCha8Rng, d: usize| {
            Array1::from_shape_fn(d, |_| rand::Rng::random_range(rng, -1.0..1.0))
        };
        for &(np, nn, d) in &[(2usize, 2usize, 4usize), (3, 2, 8), (4, 4, 6)] {
            let zp: Vec<_> = (0..np).map(|_| z(&mut rng, d)).collect();
            let zn: Vec<_> = (0..nn).map(|_| z(&mut rng, d)).collect();
            let (loss, grads) = contrastive_loss_grad(&zp, &zn, 0.1).unwrap();
            assert!(loss.is_finite());
            let h = 1e-5;
            let all: Vec<Array1<f64>> = zp.iter().chain(zn.iter()).cloned().collect();
            for (k, zk) in all.iter().enumerate() {
                for c in 0..zk.len() {
                    let perturb = |delta: f64| {
                        let mut zs = all.clone();
                        zs[k][c] += delta;
                        let (zp2, zn2) = zs.split_at(np);
                        contrastive_loss(zp2, zn2, 0.1).unwrap()
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let a = grads[k][c];
                    let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                    assert!(rel < 1e-4, "latent {k} dim {c}: fd {fd} vs {a}");
                }
            }
        }
    }

    #[test]
    fn group_latent_consistency_and_duplication() {
        let enc = toy_encoder();
        let trajs: Vec<Trajectory> = (0..3).map(|i| toy_traj(i, PolicyKind::Expert)).collect();
        // singleton set equals encode_subset of that singleton
        let single = infer_group_latent(&enc, &trajs[..1], Category::Preferred).unwrap();
        let u = enc.encode_trajectory(&trajs[0]).unwrap();
        let direct = enc.encode_subset(std::slice::from_ref(&u)).unwrap();
        assert_eq!(single.z_star, direct);
        assert_eq!(single.source_set_size, 1);

        // permuting the full set leaves z* unchanged within tolerance
        let g1 = infer_group_latent(&enc, &trajs, Category::Preferred).unwrap();
        let permuted: Vec<Trajectory> = vec![trajs[2].clone(), trajs[0].clone(), trajs[1].clone()];
        let g2 = infer_group_latent(&enc, &permuted, Category::Preferred).unwrap();
        let dev = (&g1.z_star - &g2.z_star).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6);

        // duplicating every member: attention weights halve but the weighted
        // sums and mean pool are unchanged; observed deviation is ~1e-15
        let doubled: Vec<Trajectory> = trajs.iter().chain(trajs.iter()).cloned().collect();
        let g3 = infer_group_latent(&enc, &doubled, Category::Preferred).unwrap();
        let dev = (&g1.z_star - &g3.z_star).iter().map(|d| d.abs()).fold(0.0, f64::max);
        assert!(dev < 1e-5, "duplication deviation {dev}");
        assert!(infer_group_latent(&enc, &[], Category::Preferred).is_err());
    }

    #[test]
    fn training_decreases_loss_and_separates_groups() {
        // preferred = expert rollouts (fast), non-preferred = random rollouts
        let preferred: Vec<Trajectory> = (0..8).map(|i| toy_traj(i, PolicyKind::Expert)).collect();
        let non_preferred: Vec<Trajectory> = (0..8).map(|i| toy_traj(100 + i, PolicyKind::Random)).collect();
        let sets = TrajectorySets {
            preferred,
            non_preferred,
        };
        let config = EncoderConfig {
            epochs: 120,
            ..small_config()
        };
        let init_enc = SetEncoder::init(&config, 5).unwrap();
        let cos_groups = |enc: &SetEncoder| {
            let zp = infer_group_latent(enc, &sets.preferred, Category::Preferred).unwrap();
            let zn = infer_group_latent(enc, &sets.non_preferred, Category::NonPreferred).unwrap();
            cosine(zp.z_star.view(), zn.z_star.view())
        };
        let cos_before = cos_groups(&init_enc);
        let (enc, history) = train_encoder(&config, &sets).unwrap();
        assert_eq!(history.len(), 120);
        let head: f64 = history[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = history[history.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "loss did not trend down: {head} -> {tail}");
        let cos_after = cos_groups(&enc);
        assert!(cos_after < cos_before, "groups did not separate: {cos_before} -> {cos_after}");
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let sets = TrajectorySets {
            preferred: (0..4).map(|i| toy_traj(i, PolicyKind::Expert)).collect(),
            non_preferred: (0..4).map(|i| toy_traj(50 + i, PolicyKind::Random)).collect(),
        };
        let config = EncoderConfig {
            epochs: 10,
            ..small_config()
        };
        let (_, h1) = train_encoder(&config, &sets).unwrap();
        let (_, h2) = train_encoder(&config, &sets).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn checkpoint_reproduces_inference_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.rlc");
        let enc = toy_encoder();
        enc.save(&path).unwrap();
        let loaded = SetEncoder::load(&path).unwrap();
        let t = toy_traj(8, PolicyKind::Medium);
        assert_eq!(enc.encode_trajectory(&t).unwrap(), loaded.encode_trajectory(&t).unwrap());
        assert_eq!(enc.trajectory_latent(&t).unwrap(), loaded.trajectory_latent(&t).unwrap());
    }
}
