//! Trajectories, preference pairs, offline transition stores, and the
//! labeling protocols that produce dataset variants (script labels, neutral
//! bands, label noise).

mod container;

pub use container::{Container, Section};

use crate::error::{Error, Result};
use crate::rng;
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;

/// Fixed-length sequence of state/action vectors, optionally with the
/// environment's true per-step rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    env_id: String,
    states: Array2<f64>,  // (H, state_dim)
    actions: Array2<f64>, // (H, action_dim)
    true_rewards: Option<Array1<f64>>,
}

impl Trajectory {
    pub fn new(
        env_id: impl Into<String>,
        states: Array2<f64>,
        actions: Array2<f64>,
        true_rewards: Option<Array1<f64>>,
    ) -> Result<Self> {
        let h = states.nrows();
        if h == 0 {
            return Err(Error::Empty("trajectory"));
        }
        if actions.nrows() != h {
            return Err(Error::DimMismatch {
                context: "trajectory actions vs states",
                expected: h,
                got: actions.nrows(),
            });
        }
        if let Some(r) = &true_rewards {
            if r.len() != h {
                return Err(Error::DimMismatch {
                    context: "trajectory rewards vs states",
                    expected: h,
                    got: r.len(),
                });
            }
        }
        let finite = states.iter().all(|v| v.is_finite())
            && actions.iter().all(|v| v.is_finite())
            && true_rewards.iter().all(|r| r.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Invalid {
                what: "trajectory",
                why: "non-finite entry".into(),
            });
        }
        Ok(Self {
            env_id: env_id.into(),
            states,
            actions,
            true_rewards,
        })
    }

    pub fn env_id(&self) -> &str {
        &self.env_id
    }

    /// Number of state-action transitions.
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn actions(&self) -> &Array2<f64> {
        &self.actions
    }

    pub fn true_rewards(&self) -> Option<&Array1<f64>> {
        self.true_rewards.as_ref()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    /// Sum of true rewards, if present.
    pub fn total_return(&self) -> Option<f64> {
        self.true_rewards.as_ref().map(|r| r.sum())
    }

    /// The sub-trajectory covering steps `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Trajectory> {
        if start + len > self.len() || len == 0 {
            return Err(Error::Invalid {
                what: "trajectory slice",
                why: format!("range {start}..{} out of 1..={}", start + len, self.len()),
            });
        }
        Ok(Trajectory {
            env_id: self.env_id.clone(),
            states: self.states.slice(ndarray::s![start..start + len, ..]).to_owned(),
            actions: self.actions.slice(ndarray::s![start..start + len, ..]).to_owned(),
            true_rewards: self
                .true_rewards
                .as_ref()
                .map(|r| r.slice(ndarray::s![start..start + len]).to_owned()),
        })
    }

    /// Same trajectory with timesteps reversed.
    pub fn reversed(&self) -> Trajectory {
        let rev = |m: &Array2<f64>| {
            let mut out = m.clone();
            out.invert_axis(Axis(0));
            out
        };
        Trajectory {
            env_id: self.env_id.clone(),
            states: rev(&self.states),
            actions: rev(&self.actions),
            true_rewards: self.true_rewards.as_ref().map(|r| {
                let mut out = r.clone();
                out.invert_axis(Axis(0));
                out
            }),
        }
    }
}

/// Preference label over a trajectory pair: 0 prefers `seg0`, 1 prefers
/// `seg1`, 0.5 is neutral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefLabel {
    Zero,
    Neutral,
    One,
}

impl PrefLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            PrefLabel::Zero => 0.0,
            PrefLabel::Neutral => 0.5,
            PrefLabel::One => 1.0,
        }
    }

    pub fn from_f64(v: f64) -> Result<Self> {
        if v == 0.0 {
            Ok(PrefLabel::Zero)
        } else if v == 0.5 {
            Ok(PrefLabel::Neutral)
        } else if v == 1.0 {
            Ok(PrefLabel::One)
        } else {
            Err(Error::Invalid {
                what: "preference label",
                why: format!("{v} not in {{0, 0.5, 1}}"),
            })
        }
    }

    pub fn is_neutral(self) -> bool {
        matches!(self, PrefLabel::Neutral)
    }

    /// 0 <-> 1; neutral stays neutral.
    pub fn flipped(self) -> Self {
        match self {
            PrefLabel::Zero => PrefLabel::One,
            PrefLabel::Neutral => PrefLabel::Neutral,
            PrefLabel::One => PrefLabel::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub seg0: Trajectory,
    pub seg1: Trajectory,
    pub label: PrefLabel,
}

impl PreferencePair {
    pub fn new(seg0: Trajectory, seg1: Trajectory, label: PrefLabel) -> Result<Self> {
        if seg0.env_id() != seg1.env_id() {
            return Err(Error::Invalid {
                what: "preference pair",
                why: format!("env mismatch: {} vs {}", seg0.env_id(), seg1.env_id()),
            });
        }
        if seg0.len() != seg1.len() {
            return Err(Error::DimMismatch {
                context: "preference pair segment lengths",
                expected: seg0.len(),
                got: seg1.len(),
            });
        }
        Ok(Self { seg0, seg1, label })
    }
}

/// How a preference dataset's labels were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    /// Labeler that may declare indifference (neutral labels allowed).
    HumanStyle,
    /// Oracle comparison of total returns; always binary.
    Script,
    /// A fraction of non-neutral labels was flipped.
    Noisy(f64),
}

impl Provenance {
    pub fn kind(&self) -> &'static str {
        match self {
            Provenance::HumanStyle => "human-style",
            Provenance::Script => "script",
            Provenance::Noisy(_) => "noisy",
        }
    }

    pub fn rate(&self) -> Option<f64> {
        match self {
            Provenance::Noisy(r) => Some(*r),
            _ => None,
        }
    }
}

/// Labeled trajectory pairs sharing an environment and segment length.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub env_id: String,
    pub h: usize,
    pub pairs: Vec<PreferencePair>,
    pub provenance: Provenance,
}

impl PreferenceDataset {
    pub fn new(
        env_id: impl Into<String>,
        h: usize,
        pairs: Vec<PreferencePair>,
        provenance: Provenance,
    ) -> Result<Self> {
        let env_id = env_id.into();
        for p in &pairs {
            if p.seg0.env_id() != env_id {
                return Err(Error::Invalid {
                    what: "preference dataset",
                    why: format!("pair env {} differs from dataset env {env_id}", p.seg0.env_id()),
                });
            }
            if p.seg0.len() != h {
                return Err(Error::DimMismatch {
                    context: "preference dataset segment length",
                    expected: h,
                    got: p.seg0.len(),
                });
            }
        }
        Ok(Self {
            env_id,
            h,
            pairs,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn n_neutral(&self) -> usize {
        self.pairs.iter().filter(|p| p.label.is_neutral()).count()
    }

    /// Copy without the neutral-labeled pairs.
    pub fn without_neutral(&self) -> PreferenceDataset {
        PreferenceDataset {
            env_id: self.env_id.clone(),
            h: self.h,
            pairs: self
                .pairs
                .iter()
                .filter(|p| !p.label.is_neutral())
                .cloned()
                .collect(),
            provenance: self.provenance,
        }
    }
}

/// Unpaired preferred / non-preferred trajectory sets.
#[derive(Debug, Clone)]
pub struct TrajectorySets {
    pub preferred: Vec<Trajectory>,
    pub non_preferred: Vec<Trajectory>,
}

/// Break labeled pairs into the two sets. The ranking between pair members is
/// discarded: label 0 sends `seg0` to preferred and `seg1` to non-preferred,
/// label 1 the reverse, and neutral pairs contribute both segments to both
/// sets.
pub fn build_sets(dataset: &PreferenceDataset) -> Result<TrajectorySets> {
    if dataset.is_empty() {
        return Err(Error::Empty("no pairs"));
    }
    let mut preferred = Vec::new();
    let mut non_preferred = Vec::new();
    for pair in &dataset.pairs {
        match pair.label {
            PrefLabel::Zero => {
                preferred.push(pair.seg0.clone());
                non_preferred.push(pair.seg1.clone());
            }
            PrefLabel::One => {
                preferred.push(pair.seg1.clone());
                non_preferred.push(pair.seg0.clone());
            }
            PrefLabel::Neutral => {
                preferred.push(pair.seg0.clone());
                preferred.push(pair.seg1.clone());
                non_preferred.push(pair.seg0.clone());
                non_preferred.push(pair.seg1.clone());
            }
        }
    }
    Ok(TrajectorySets {
        preferred,
        non_preferred,
    })
}

/// Flip exactly `round(rate * n_nonneutral)` non-neutral labels, chosen
/// uniformly without replacement. Neutral labels are untouched.
pub fn inject_label_noise(
    dataset: &PreferenceDataset,
    rate: f64,
    seed: u64,
) -> Result<PreferenceDataset> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Invalid {
            what: "noise rate",
            why: format!("{rate} not in [0, 1]"),
        });
    }
    let nonneutral: Vec<usize> = dataset
        .pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.label.is_neutral())
        .map(|(i, _)| i)
        .collect();
    let n_flip = (rate * nonneutral.len() as f64).round() as usize;
    let mut out = dataset.clone();
    if n_flip > 0 {
        let mut rng = rng::rng_for(seed, "label-noise", 0);
        for pick in sample(&mut rng, nonneutral.len(), n_flip) {
            let idx = nonneutral[pick];
            out.pairs[idx].label = out.pairs[idx].label.flipped();
        }
    }
    out.provenance = Provenance::Noisy(rate);
    Ok(out)
}

/// Oracle labeler: compares total true returns. Returns 1 iff `seg1`'s return
/// strictly exceeds `seg0`'s; ties go to 0. Never neutral.
pub fn script_label(seg0: &Trajectory, seg1: &Trajectory) -> Result<PrefLabel> {
    let r0 = seg0.total_return().ok_or(Error::Missing("true_rewards on seg0"))?;
    let r1 = seg1.total_return().ok_or(Error::Missing("true_rewards on seg1"))?;
    Ok(if r1 > r0 { PrefLabel::One } else { PrefLabel::Zero })
}

/// Relabel every pair with [`script_label`]; provenance becomes `Script`.
pub fn apply_script_labels(dataset: &mut PreferenceDataset) -> Result<()> {
    for pair in &mut dataset.pairs {
        pair.label = script_label(&pair.seg0, &pair.seg1)?;
    }
    dataset.provenance = Provenance::Script;
    Ok(())
}

/// Labeler that declares indifference when the two returns are within `band`
/// of each other, mimicking annotators who may call a pair a tie; otherwise
/// falls back to the return comparison. Provenance becomes `HumanStyle`.
pub fn apply_band_labels(dataset: &mut PreferenceDataset, band: f64) -> Result<()> {
    if band < 0.0 {
        return Err(Error::Invalid {
            what: "neutral band",
            why: format!("{band} < 0"),
        });
    }
    for pair in &mut dataset.pairs {
        let r0 = pair.seg0.total_return().ok_or(Error::Missing("true_rewards on seg0"))?;
        let r1 = pair.seg1.total_return().ok_or(Error::Missing("true_rewards on seg1"))?;
        pair.label = if (r1 - r0).abs() <= band {
            PrefLabel::Neutral
        } else if r1 > r0 {
            PrefLabel::One
        } else {
            PrefLabel::Zero
        };
    }
    dataset.provenance = Provenance::HumanStyle;
    Ok(())
}

/// Transition store `(s, a, r, s', done)` segmented into episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub env_id: String,
    states: Array2<f64>,
    actions: Array2<f64>,
    rewards: Array1<f64>,
    next_states: Array2<f64>,
    dones: Vec<bool>,
    /// Start index of each episode; episode k covers
    /// `episode_offsets[k]..episode_offsets[k+1]` (or the end, for the last).
    episode_offsets: Vec<usize>,
    /// Pre-relabel rewards, kept for evaluation after `rewards` is replaced.
    orig_rewards: Option<Array1<f64>>,
}

impl OfflineDataset {
    pub fn new(
        env_id: impl Into<String>,
        states: Array2<f64>,
        actions: Array2<f64>,
        rewards: Array1<f64>,
        next_states: Array2<f64>,
        dones: Vec<bool>,
        episode_offsets: Vec<usize>,
    ) -> Result<Self> {
        let n = states.nrows();
        if actions.nrows() != n || rewards.len() != n || next_states.nrows() != n || dones.len() != n
        {
            return Err(Error::Invalid {
                what: "offline dataset",
                why: "column lengths differ".into(),
            });
        }
        if !rewards.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid {
                what: "offline dataset",
                why: "non-finite reward".into(),
            });
        }
        // Offsets must partition 0..n exactly.
        let valid = if n == 0 {
            episode_offsets.is_empty()
        } else {
            !episode_offsets.is_empty()
                && episode_offsets[0] == 0
                && episode_offsets.windows(2).all(|w| w[0] < w[1])
                && *episode_offsets.last().unwrap() < n
        };
        if !valid {
            return Err(Error::Invalid {
                what: "offline dataset",
                why: "episode offsets do not partition the transitions".into(),
            });
        }
        Ok(Self {
            env_id: env_id.into(),
            states,
            actions,
            rewards,
            next_states,
            dones,
            episode_offsets,
            orig_rewards: None,
        })
    }

    pub fn n_transitions(&self) -> usize {
        self.states.nrows()
    }

    pub fn n_episodes(&self) -> usize {
        self.episode_offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn actions(&self) -> &Array2<f64> {
        &self.actions
    }

    pub fn rewards(&self) -> &Array1<f64> {
        &self.rewards
    }

    pub fn next_states(&self) -> &Array2<f64> {
        &self.next_states
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn episode_offsets(&self) -> &[usize] {
        &self.episode_offsets
    }

    pub fn orig_rewards(&self) -> Option<&Array1<f64>> {
        self.orig_rewards.as_ref()
    }

    /// Transition index range of episode `k`.
    pub fn episode_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.episode_offsets[k];
        let end = self
            .episode_offsets
            .get(k + 1)
            .copied()
            .unwrap_or(self.states.nrows());
        start..end
    }

    pub fn episode_len(&self, k: usize) -> usize {
        self.episode_range(k).len()
    }

    /// Episode `k` as a trajectory carrying the dataset's current rewards.
    pub fn episode_trajectory(&self, k: usize) -> Trajectory {
        let r = self.episode_range(k);
        Trajectory {
            env_id: self.env_id.clone(),
            states: self.states.slice(ndarray::s![r.clone(), ..]).to_owned(),
            actions: self.actions.slice(ndarray::s![r.clone(), ..]).to_owned(),
            true_rewards: Some(self.rewards.slice(ndarray::s![r]).to_owned()),
        }
    }

    /// Length-`len` segment of episode `k` starting at `start`.
    pub fn segment(&self, k: usize, start: usize, len: usize) -> Result<Trajectory> {
        self.episode_trajectory(k).slice(start, len)
    }

    /// Replace the reward column, stashing the previous rewards the first
    /// time so evaluation can still reach the environment's values.
    pub fn replace_rewards(&mut self, rewards: Array1<f64>) -> Result<()> {
        if rewards.len() != self.rewards.len() {
            return Err(Error::DimMismatch {
                context: "replacement rewards",
                expected: self.rewards.len(),
                got: rewards.len(),
            });
        }
        if !rewards.iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid {
                what: "replacement rewards",
                why: "non-finite entry".into(),
            });
        }
        if self.orig_rewards.is_none() {
            self.orig_rewards = Some(self.rewards.clone());
        }
        self.rewards = rewards;
        Ok(())
    }

    /// Install rewards and shadow directly; used when deserializing.
    pub(crate) fn set_rewards_with_shadow(&mut self, rewards: Array1<f64>, shadow: Array1<f64>) {
        self.rewards = rewards;
        self.orig_rewards = Some(shadow);
    }

    /// Mean un-discounted episode return under the current rewards.
    pub fn mean_episode_return(&self) -> f64 {
        if self.n_episodes() == 0 {
            return 0.0;
        }
        let total: f64 = (0..self.n_episodes())
            .map(|k| self.rewards.slice(ndarray::s![self.episode_range(k)]).sum())
            .sum();
        total / self.n_episodes() as f64
    }
}

/// Sample `n_pairs` pairs of length-`h` segments, choosing the episode and
/// the start index uniformly. Labels are placeholders (neutral) until a
/// labeling protocol fills them.
pub fn sample_pairs(
    offline: &OfflineDataset,
    h: usize,
    n_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if h == 0 {
        return Err(Error::Invalid {
            what: "segment length",
            why: "h = 0".into(),
        });
    }
    if n_pairs > 0 {
        if offline.n_episodes() == 0 {
            return Err(Error::Empty("offline dataset"));
        }
        for k in 0..offline.n_episodes() {
            if offline.episode_len(k) < h {
                return Err(Error::Invalid {
                    what: "episode",
                    why: format!("episode {k} shorter than segment length {h}"),
                });
            }
        }
    }
    let mut rng = rng::rng_for(seed, "sample-pairs", 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Result<Trajectory> {
        let ep = rng.random_range(0..offline.n_episodes());
        let max_start = offline.episode_len(ep) - h;
        let start = if max_start == 0 {
            0
        } else {
            rng.random_range(0..=max_start)
        };
        offline.segment(ep, start, h)
    };
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let seg0 = draw(&mut rng)?;
        let seg1 = draw(&mut rng)?;
        pairs.push(PreferencePair::new(seg0, seg1, PrefLabel::Neutral)?);
    }
    PreferenceDataset::new(offline.env_id.clone(), h, pairs, Provenance::HumanStyle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn traj(env: &str, h: usize, fill: f64, rewards: Option<Vec<f64>>) -> Trajectory {
        Trajectory::new(
            env,
            Array2::from_elem((h, 3), fill),
            Array2::from_elem((h, 1), fill),
            rewards.map(Array1::from_vec),
        )
        .unwrap()
    }

    fn pair(label: PrefLabel) -> PreferencePair {
        PreferencePair::new(traj("e", 4, 0.0, None), traj("e", 4, 1.0, None), label).unwrap()
    }

    #[test]
    fn trajectory_invariants() {
        assert!(Trajectory::new("e", Array2::zeros((0, 3)), Array2::zeros((0, 1)), None).is_err());
        assert!(Trajectory::new("e", Array2::zeros((4, 3)), Array2::zeros((3, 1)), None).is_err());
        assert!(Trajectory::new(
            "e",
            array![[f64::NAN, 0.0]],
            Array2::zeros((1, 1)),
            None
        )
        .is_err());
        assert!(Trajectory::new(
            "e",
            Array2::zeros((4, 3)),
            Array2::zeros((4, 1)),
            Some(Array1::zeros(3))
        )
        .is_err());
    }

    #[test]
    fn build_sets_label_routing() {
        // y = 1 means seg1 is preferred.
        let p = PreferencePair::new(traj("e", 4, 0.0, None), traj("e", 4, 1.0, None), PrefLabel::One)
            .unwrap();
        let ds = PreferenceDataset::new("e", 4, vec![p], Provenance::HumanStyle).unwrap();
        let sets = build_sets(&ds).unwrap();
        assert_eq!(sets.preferred.len(), 1);
        assert_eq!(sets.non_preferred.len(), 1);
        assert_eq!(sets.preferred[0].states()[[0, 0]], 1.0);
        assert_eq!(sets.non_preferred[0].states()[[0, 0]], 0.0);
    }

    #[test]
    fn build_sets_neutral_goes_both_ways() {
        let ds = PreferenceDataset::new("e", 4, vec![pair(PrefLabel::Neutral)], Provenance::HumanStyle)
            .unwrap();
        let sets = build_sets(&ds).unwrap();
        assert_eq!(sets.preferred.len(), 2);
        assert_eq!(sets.non_preferred.len(), 2);
    }

    #[test]
    fn build_sets_cardinality_law() {
        // n0 + n1 + 2 * n_neutral on both sides.
        let pairs = vec![
            pair(PrefLabel::Zero),
            pair(PrefLabel::One),
            pair(PrefLabel::Neutral),
            pair(PrefLabel::Neutral),
            pair(PrefLabel::One),
        ];
        let ds = PreferenceDataset::new("e", 4, pairs, Provenance::HumanStyle).unwrap();
        let sets = build_sets(&ds).unwrap();
        assert_eq!(sets.preferred.len(), 3 + 2 * 2);
        assert_eq!(sets.non_preferred.len(), 3 + 2 * 2);
    }

    #[test]
    fn build_sets_empty_errors() {
        let ds = PreferenceDataset::new("e", 4, vec![], Provenance::HumanStyle).unwrap();
        assert!(matches!(build_sets(&ds), Err(Error::Empty(_))));
    }

    #[test]
    fn noise_flips_exact_count() {
        let pairs: Vec<_> = (0..10).map(|_| pair(PrefLabel::Zero)).collect();
        let ds = PreferenceDataset::new("e", 4, pairs, Provenance::HumanStyle).unwrap();
        let noisy = inject_label_noise(&ds, 0.2, 7).unwrap();
        let flipped = noisy
            .pairs
            .iter()
            .filter(|p| p.label == PrefLabel::One)
            .count();
        assert_eq!(flipped, 2);
        assert_eq!(noisy.provenance, Provenance::Noisy(0.2));
    }

    #[test]
    fn noise_zero_rate_is_identity() {
        let pairs: Vec<_> = (0..5).map(|_| pair(PrefLabel::One)).collect();
        let ds = PreferenceDataset::new("e", 4, pairs, Provenance::HumanStyle).unwrap();
        let out = inject_label_noise(&ds, 0.0, 7).unwrap();
        assert_eq!(out.pairs, ds.pairs);
    }

    #[test]
    fn noise_ignores_neutral_only_dataset() {
        let pairs: Vec<_> = (0..6).map(|_| pair(PrefLabel::Neutral)).collect();
        let ds = PreferenceDataset::new("e", 4, pairs, Provenance::HumanStyle).unwrap();
        let out = inject_label_noise(&ds, 0.5, 7).unwrap();
        assert!(out.pairs.iter().all(|p| p.label == PrefLabel::Neutral));
    }

    #[test]
    fn noise_same_seed_flips_same_set() {
        let pairs: Vec<_> = (0..20).map(|_| pair(PrefLabel::Zero)).collect();
        let ds = PreferenceDataset::new("e", 4, pairs, Provenance::HumanStyle).unwrap();
        let a = inject_label_noise(&ds, 0.25, 42).unwrap();
        let b = inject_label_noise(&ds, 0.25, 42).unwrap();
        assert_eq!(a.pairs, b.pairs);
        // Flipping the same index set twice restores the original labels.
        let twice = inject_label_noise(&a, 0.25, 42).unwrap();
        let restored: Vec<_> = twice.pairs.iter().map(|p| p.label).collect();
        let orig: Vec<_> = ds.pairs.iter().map(|p| p.label).collect();
        assert_eq!(restored, orig);
    }

    #[test]
    fn script_label_compares_returns() {
        let lo = traj("e", 2, 0.0, Some(vec![2.0, 1.0])); // R = 3
        let hi = traj("e", 2, 0.0, Some(vec![2.0, 3.0])); // R = 5
        assert_eq!(script_label(&hi, &lo).unwrap(), PrefLabel::Zero);
        assert_eq!(script_label(&lo, &hi).unwrap(), PrefLabel::One);
        let tie = traj("e", 2, 0.0, Some(vec![2.0, 2.0]));
        assert_eq!(script_label(&tie, &tie).unwrap(), PrefLabel::Zero);
        let none = traj("e", 2, 0.0, None);
        assert!(script_label(&none, &hi).is_err());
    }

    #[test]
    fn script_label_antisymmetric_off_ties() {
        let a = traj("e", 2, 0.0, Some(vec![1.0, 1.0]));
        let b = traj("e", 2, 0.0, Some(vec![3.0, 1.0]));
        assert_eq!(script_label(&a, &b).unwrap(), PrefLabel::One);
        assert_eq!(script_label(&b, &a).unwrap(), PrefLabel::Zero);
    }

    fn toy_offline(n_eps: usize, ep_len: usize) -> OfflineDataset {
        let n = n_eps * ep_len;
        let states = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        let actions = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let rewards = Array1::from_shape_fn(n, |i| i as f64);
        let next_states = &states + 1.0;
        let dones = (0..n).map(|i| (i + 1) % ep_len == 0).collect();
        let offsets = (0..n_eps).map(|k| k * ep_len).collect();
        OfflineDataset::new("e", states, actions, rewards, next_states, dones, offsets).unwrap()
    }

    #[test]
    fn sample_pairs_shapes_and_determinism() {
        let off = toy_offline(5, 30);
        let ds = sample_pairs(&off, 20, 100, 3).unwrap();
        assert_eq!(ds.len(), 100);
        assert!(ds.pairs.iter().all(|p| p.seg0.len() == 20 && p.seg1.len() == 20));
        let ds2 = sample_pairs(&off, 20, 100, 3).unwrap();
        assert_eq!(ds, ds2);
        let empty = sample_pairs(&off, 20, 0, 3).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn sample_pairs_rejects_short_episodes() {
        let off = toy_offline(3, 10);
        assert!(sample_pairs(&off, 11, 5, 3).is_err());
    }

    #[test]
    fn replace_rewards_keeps_shadow() {
        let mut off = toy_offline(2, 5);
        let orig = off.rewards().clone();
        off.replace_rewards(Array1::zeros(10)).unwrap();
        assert_eq!(off.orig_rewards().unwrap(), &orig);
        assert_eq!(off.rewards().sum(), 0.0);
        // Second replacement keeps the first shadow.
        off.replace_rewards(Array1::ones(10)).unwrap();
        assert_eq!(off.orig_rewards().unwrap(), &orig);
    }

    #[test]
    fn band_labels_mark_close_returns_neutral() {
        let off = toy_offline(4, 20);
        let mut ds = sample_pairs(&off, 10, 40, 9).unwrap();
        apply_band_labels(&mut ds, 5.0).unwrap();
        assert_eq!(ds.provenance, Provenance::HumanStyle);
        for p in &ds.pairs {
            let d = p.seg1.total_return().unwrap() - p.seg0.total_return().unwrap();
            match p.label {
                PrefLabel::Neutral => assert!(d.abs() <= 5.0),
                PrefLabel::One => assert!(d > 5.0),
                PrefLabel::Zero => assert!(d < -5.0),
            }
        }
        let mut scripted = ds.clone();
        apply_script_labels(&mut scripted).unwrap();
        assert_eq!(scripted.provenance, Provenance::Script);
        assert_eq!(scripted.n_neutral(), 0);
    }
}
