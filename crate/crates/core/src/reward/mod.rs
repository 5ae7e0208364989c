//! Reward inference from the frozen encoder: cosine similarity of a
//! trajectory-prefix latent to the preferred group latent, the logistic
//! probability proxy, dataset relabeling, and latent-distance filtering.

use crate::data::{OfflineDataset, Trajectory};
use crate::encoder::{GroupLatent, SetEncoder};
use crate::error::{Error, Result};
use crate::nn::{cosine, sigmoid};
use crate::par;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    MinMax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefixMode {
    /// The prefix latent at time t encodes the whole history 0..=t.
    FullHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Trade-off on the non-preferred term: `r = cos_p - alpha * cos_n`.
    /// Zero was optimal in every reported experiment.
    pub alpha: f64,
    pub normalize: Normalize,
    pub prefix_mode: PrefixMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            normalize: Normalize::MinMax,
            prefix_mode: PrefixMode::FullHistory,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::Invalid {
                what: "reward config",
                why: format!("alpha {} < 0", self.alpha),
            });
        }
        Ok(())
    }
}

/// Latent of the prefix `0..=t` through the frozen encoder.
pub fn prefix_latent(enc: &SetEncoder, traj: &Trajectory, t: usize) -> Result<Array1<f64>> {
    if t >= traj.len() {
        return Err(Error::Invalid {
            what: "prefix index",
            why: format!("t = {t} out of 0..{}", traj.len()),
        });
    }
    let prefix = traj.slice(0, t + 1)?;
    enc.trajectory_latent(&prefix)
}

/// All prefix latents of one trajectory, index t -> latent of `0..=t`.
pub fn prefix_latents(enc: &SetEncoder, traj: &Trajectory) -> Result<Vec<Array1<f64>>> {
    (0..traj.len()).map(|t| prefix_latent(enc, traj, t)).collect()
}

fn reward_from_latent(
    z_t: &Array1<f64>,
    zp: &GroupLatent,
    alpha: f64,
    zn: Option<&GroupLatent>,
) -> Result<f64> {
    let cos_p = cosine(z_t.view(), zp.z_star.view());
    if alpha == 0.0 {
        return Ok(cos_p);
    }
    let zn = zn.ok_or(Error::Missing("non-preferred latent required when alpha > 0"))?;
    Ok(cos_p - alpha * cosine(z_t.view(), zn.z_star.view()))
}

/// Per-step reward `cos(z_t, z*_p) - alpha * cos(z_t, z*_n)`, bounded in
/// `[-(1 + alpha), 1 + alpha]`. `z_t` encodes the prefix up to and including
/// time `t`.
pub fn similarity_reward(
    enc: &SetEncoder,
    zp: &GroupLatent,
    traj: &Trajectory,
    t: usize,
    config: &RewardConfig,
    zn: Option<&GroupLatent>,
) -> Result<f64> {
    config.validate()?;
    let z_t = prefix_latent(enc, traj, t)?;
    reward_from_latent(&z_t, zp, config.alpha, zn)
}

/// Proxy probability that a latent belongs to the preferred set:
/// `1 / (1 + exp(-(cos(z, z*_p) - cos(z, z*_n))))`. Swapping the two group
/// latents maps P to 1 - P.
pub fn preference_probability(z_t: &Array1<f64>, zp: &GroupLatent, zn: &GroupLatent) -> f64 {
    sigmoid(cosine(z_t.view(), zp.z_star.view()) - cosine(z_t.view(), zn.z_star.view()))
}

/// Replace every transition reward with a model-computed reward; the
/// generic path shared by the similarity and learned-reward-model pipelines.
/// `per_episode` maps an episode trajectory to its per-step rewards.
pub fn relabel_with<F>(offline: &OfflineDataset, per_episode: F, normalize: Normalize) -> Result<OfflineDataset>
where
    F: Fn(&Trajectory) -> Result<Vec<f64>> + Sync,
{
    let n_eps = offline.n_episodes();
    let per_ep: Vec<Result<Vec<f64>>> =
        par::map_indices(n_eps, |k| per_episode(&offline.episode_trajectory(k)));
    let mut rewards = Array1::zeros(offline.n_transitions());
    for (k, ep) in per_ep.into_iter().enumerate() {
        let ep = ep?;
        let range = offline.episode_range(k);
        if ep.len() != range.len() {
            return Err(Error::DimMismatch {
                context: "relabeled episode rewards",
                expected: range.len(),
                got: ep.len(),
            });
        }
        for (t, idx) in range.enumerate() {
            rewards[idx] = ep[t];
        }
    }
    if normalize == Normalize::MinMax && rewards.len() > 0 {
        let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > min {
            rewards.mapv_inplace(|r| (r - min) / (max - min));
        } else {
            // degenerate all-equal dataset
            rewards.fill(0.5);
        }
    }
    let mut out = offline.clone();
    out.replace_rewards(rewards)?;
    Ok(out)
}

/// Relabel with similarity rewards from the frozen encoder. With min-max
/// normalization the rewards span [0, 1] over the whole dataset; the
/// original rewards stay available in the shadow column.
pub fn relabel_dataset(
    enc: &SetEncoder,
    zp: &GroupLatent,
    offline: &OfflineDataset,
    config: &RewardConfig,
    zn: Option<&GroupLatent>,
) -> Result<OfflineDataset> {
    config.validate()?;
    if config.alpha > 0.0 && zn.is_none() {
        return Err(Error::Missing("non-preferred latent required when alpha > 0"));
    }
    relabel_with(
        offline,
        |episode| {
            let latents = prefix_latents(enc, episode)?;
            latents
                .iter()
                .map(|z_t| reward_from_latent(z_t, zp, config.alpha, zn))
                .collect()
        },
        config.normalize,
    )
}

/// Result of latent-distance filtering.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    /// Indices into the input, in input order.
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    /// `max(cos(z, z*_p), cos(z, z*_n))` per trajectory.
    pub scores: Vec<f64>,
    pub threshold: f64,
}

/// Drop trajectories far from both group latents: score each trajectory by
/// its best similarity to either group and drop those below the `(1 - q)`
/// quantile. `q = 1` keeps everything.
pub fn filter_trajectories(
    enc: &SetEncoder,
    zp: &GroupLatent,
    zn: &GroupLatent,
    trajs: &[Trajectory],
    keep_quantile: f64,
) -> Result<FilterOutcome> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectories to filter"));
    }
    if !(keep_quantile > 0.0 && keep_quantile <= 1.0) {
        return Err(Error::Invalid {
            what: "keep quantile",
            why: format!("{keep_quantile} not in (0, 1]"),
        });
    }
    let latents = par::map_slice(trajs, |t| enc.trajectory_latent(t));
    let mut scores = Vec::with_capacity(trajs.len());
    for z in latents {
        let z = z?;
        scores.push(
            cosine(z.view(), zp.z_star.view()).max(cosine(z.view(), zn.z_star.view())),
        );
    }
    let threshold = if keep_quantile >= 1.0 {
        f64::NEG_INFINITY
    } else {
        quantile(&scores, 1.0 - keep_quantile)
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if s < threshold {
            dropped.push(i);
        } else {
            kept.push(i);
        }
    }
    Ok(FilterOutcome {
        kept,
        dropped,
        scores,
        threshold,
    })
}

/// Linear-interpolation empirical quantile (like numpy's default).
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Online reward shaping hook: maps the episode-so-far to a preference
/// reward for its final step.
pub trait RewardShaper: Send + Sync {
    fn shaped_reward(&self, prefix: &Trajectory) -> Result<f64>;
}

/// Similarity-reward shaper around a frozen encoder.
pub struct SimilarityShaper {
    pub encoder: SetEncoder,
    pub zp: GroupLatent,
    pub zn: Option<GroupLatent>,
    pub alpha: f64,
}

impl RewardShaper for SimilarityShaper {
    fn shaped_reward(&self, prefix: &Trajectory) -> Result<f64> {
        let z_t = enc_latent(&self.encoder, prefix)?;
        reward_from_latent(&z_t, &self.zp, self.alpha, self.zn.as_ref())
    }
}

fn enc_latent(enc: &SetEncoder, prefix: &Trajectory) -> Result<Array1<f64>> {
    enc.trajectory_latent(prefix)
}
