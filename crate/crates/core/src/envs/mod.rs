//! Synthetic continuous-control environments with analytic true rewards.
//!
//! All dynamics are closed-form Euler integrations (dt = 0.05), smooth and
//! bounded, so thousands of rollouts run in seconds on one core. Actions are
//! clipped to [-1, 1] per dimension inside `step`. Control cost is
//! `0.01 * ||a||^2` everywhere.

mod disk_reacher;
mod line_hopper;
mod twin_walker;

pub use disk_reacher::{ccw_policy, net_rotation, DiskReacher, TargetMode};
pub use line_hopper::LineHopper;
pub use twin_walker::TwinWalker;

use crate::data::{OfflineDataset, Trajectory};
use crate::error::{Error, Result};
use crate::par;
use crate::rng;
use ndarray::{Array1, Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.05;
pub const CONTROL_COST: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub dt: f64,
}

/// Deterministic environment: `step` is a pure function of (state, action).
pub trait Env: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Draw an initial state. All stochasticity lives here and in policies.
    fn init_state(&self, rng: &mut ChaCha8Rng) -> Array1<f64>;

    /// One transition. Returns `(next_state, reward)` where the reward is
    /// `r(s_t, a_t)` for the incoming state-action.
    fn step(&self, state: ArrayView1<f64>, action: ArrayView1<f64>) -> (Array1<f64>, f64);
}

/// Maps state vectors to action vectors; `rng` carries any policy noise.
pub trait Policy: Send + Sync {
    fn act(&self, state: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> Array1<f64>;
}

impl<F> Policy for F
where
    F: Fn(ArrayView1<f64>, &mut ChaCha8Rng) -> Array1<f64> + Send + Sync,
{
    fn act(&self, state: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
        self(state, rng)
    }
}

/// Scripted controller tiers used to build offline data mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    /// Near-optimal hand-coded controller.
    Expert,
    /// Detuned controller with mild action dither.
    Medium,
    /// Uniform random actions.
    Random,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(PolicyKind::Expert),
            "medium" => Ok(PolicyKind::Medium),
            "random" => Ok(PolicyKind::Random),
            other => Err(Error::Invalid {
                what: "policy kind",
                why: format!("unknown `{other}`"),
            }),
        }
    }
}

/// Environment registry, addressed by name.
pub fn env_by_name(name: &str) -> Result<Box<dyn Env>> {
    match name {
        "line-hopper" => Ok(Box::new(LineHopper::new())),
        "twin-walker" => Ok(Box::new(TwinWalker::new())),
        "disk-reacher-easy" => Ok(Box::new(DiskReacher::new(TargetMode::Easy))),
        "disk-reacher-hard" => Ok(Box::new(DiskReacher::new(TargetMode::Hard))),
        other => Err(Error::Invalid {
            what: "env name",
            why: format!("unknown `{other}`"),
        }),
    }
}

pub fn env_names() -> &'static [&'static str] {
    &["line-hopper", "twin-walker", "disk-reacher-easy", "disk-reacher-hard"]
}

/// Scripted policy for a registered environment.
pub fn scripted_policy(env_name: &str, kind: PolicyKind) -> Result<Box<dyn Policy>> {
    match env_name {
        "line-hopper" => Ok(line_hopper::policy(kind)),
        "twin-walker" => Ok(twin_walker::policy(kind)),
        "disk-reacher-easy" | "disk-reacher-hard" => Ok(disk_reacher::policy(kind)),
        other => Err(Error::Invalid {
            what: "env name",
            why: format!("unknown `{other}`"),
        }),
    }
}

/// Frozen normalization references `(random_ref, expert_ref)`: mean returns
/// of the random and expert controllers over 100 episodes, as measured by
/// [`measure_score_refs`] with seed 77. A test pins these to a fresh
/// measurement.
pub fn score_refs(env_name: &str) -> Result<(f64, f64)> {
    match env_name {
        "line-hopper" => Ok((18.439274893368193, 76.00964701439435)),
        "twin-walker" => Ok((18.675392182957257, 75.94796319667161)),
        "disk-reacher-easy" => Ok((-71.60927230760119, -16.020791676051473)),
        "disk-reacher-hard" => Ok((-121.77794545195783, -31.22152727716551)),
        other => Err(Error::Invalid {
            what: "env name",
            why: format!("unknown `{other}`"),
        }),
    }
}

/// Measurement protocol behind [`score_refs`].
pub fn measure_score_refs(env_name: &str, n_episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let env = env_by_name(env_name)?;
    let mean_return = |kind: PolicyKind, tag: &str| -> Result<f64> {
        let policy = scripted_policy(env_name, kind)?;
        let returns = par::map_indices(n_episodes, |i| {
            rollout(env.as_ref(), policy.as_ref(), env.spec().horizon, rng::derive_seed(seed, tag, i as u64))
                .map(|t| t.total_return().unwrap())
        });
        let mut total = 0.0;
        for r in returns {
            total += r?;
        }
        Ok(total / n_episodes as f64)
    };
    Ok((
        mean_return(PolicyKind::Random, "ref-random")?,
        mean_return(PolicyKind::Expert, "ref-expert")?,
    ))
}

fn check_action_dim(spec: &EnvSpec, got: usize) -> Result<()> {
    if got != spec.action_dim {
        return Err(Error::DimMismatch {
            context: "policy action vs env action_dim",
            expected: spec.action_dim,
            got,
        });
    }
    Ok(())
}

/// Roll a policy for `horizon` steps from a seeded initial state.
pub fn rollout(env: &dyn Env, policy: &dyn Policy, horizon: usize, seed: u64) -> Result<Trajectory> {
    let mut rng = rng::rng_for(seed, "rollout", 0);
    let s0 = env.init_state(&mut rng);
    rollout_from(env, s0, policy, horizon, &mut rng)
}

/// Roll a policy from an explicit initial state; `rng` drives policy noise.
pub fn rollout_from(
    env: &dyn Env,
    init: Array1<f64>,
    policy: &dyn Policy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let spec = env.spec();
    if init.len() != spec.state_dim {
        return Err(Error::DimMismatch {
            context: "initial state vs env state_dim",
            expected: spec.state_dim,
            got: init.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::Empty("rollout horizon"));
    }
    let mut states = Array2::zeros((horizon, spec.state_dim));
    let mut actions = Array2::zeros((horizon, spec.action_dim));
    let mut rewards = Array1::zeros(horizon);
    let mut s = init;
    for t in 0..horizon {
        let a = policy.act(s.view(), rng);
        check_action_dim(spec, a.len())?;
        let (next, r) = env.step(s.view(), a.view());
        states.row_mut(t).assign(&s);
        actions.row_mut(t).assign(&a);
        rewards[t] = r;
        s = next;
    }
    Trajectory::new(spec.name.clone(), states, actions, Some(rewards))
}

/// One rollout plus the post-horizon state, for transition stores.
fn rollout_transitions(
    env: &dyn Env,
    policy: &dyn Policy,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>, Array2<f64>)> {
    let spec = env.spec();
    let mut states = Array2::zeros((horizon, spec.state_dim));
    let mut actions = Array2::zeros((horizon, spec.action_dim));
    let mut rewards = Array1::zeros(horizon);
    let mut next_states = Array2::zeros((horizon, spec.state_dim));
    let mut s = env.init_state(rng);
    for t in 0..horizon {
        let a = policy.act(s.view(), rng);
        check_action_dim(spec, a.len())?;
        let (next, r) = env.step(s.view(), a.view());
        states.row_mut(t).assign(&s);
        actions.row_mut(t).assign(&a);
        next_states.row_mut(t).assign(&next);
        rewards[t] = r;
        s = next;
    }
    Ok((states, actions, rewards, next_states))
}

/// Generate `n_traj` episodes with policies drawn by weight; horizon-end
/// transitions are marked done. Each episode derives its own RNG from
/// `(seed, index)`, so results do not depend on scheduling.
pub fn generate_offline_dataset(
    env: &dyn Env,
    mixture: &[(Box<dyn Policy>, f64)],
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if mixture.is_empty() {
        return Err(Error::Empty("policy mixture"));
    }
    let total_w: f64 = mixture.iter().map(|(_, w)| w).sum();
    if mixture.iter().any(|(_, w)| *w < 0.0) || total_w <= 0.0 {
        return Err(Error::Invalid {
            what: "policy mixture",
            why: "weights must be non-negative with positive sum".into(),
        });
    }
    let spec = env.spec();
    let episodes = par::map_indices(n_traj, |i| -> Result<_> {
        let mut rng = rng::rng_for(seed, "offline-episode", i as u64);
        // Weighted policy draw by cumulative weight.
        let u: f64 = rand::Rng::random::<f64>(&mut rng) * total_w;
        let mut acc = 0.0;
        let mut pick = mixture.len() - 1;
        for (j, (_, w)) in mixture.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = j;
                break;
            }
        }
        rollout_transitions(env, mixture[pick].0.as_ref(), horizon, &mut rng)
    });

    let n = n_traj * horizon;
    let mut states = Array2::zeros((n, spec.state_dim));
    let mut actions = Array2::zeros((n, spec.action_dim));
    let mut rewards = Array1::zeros(n);
    let mut next_states = Array2::zeros((n, spec.state_dim));
    let mut dones = vec![false; n];
    let mut offsets = Vec::with_capacity(n_traj);
    for (i, ep) in episodes.into_iter().enumerate() {
        let (s, a, r, ns) = ep?;
        let r0 = i * horizon;
        offsets.push(r0);
        states.slice_mut(ndarray::s![r0..r0 + horizon, ..]).assign(&s);
        actions.slice_mut(ndarray::s![r0..r0 + horizon, ..]).assign(&a);
        next_states
            .slice_mut(ndarray::s![r0..r0 + horizon, ..])
            .assign(&ns);
        for t in 0..horizon {
            rewards[r0 + t] = r[t];
        }
        dones[r0 + horizon - 1] = true;
    }
    OfflineDataset::new(spec.name.clone(), states, actions, rewards, next_states, dones, offsets)
}

/// Copies each source dimension to one or more target dimensions; the
/// generic form of mapping a simple morphology onto a symmetric larger one.
#[derive(Debug, Clone, PartialEq)]
pub struct DimMapping {
    pub target_env_id: String,
    pub source_state_dim: usize,
    pub target_state_dim: usize,
    pub source_action_dim: usize,
    pub target_action_dim: usize,
    /// (source state dim -> target state dims)
    pub state_map: Vec<(usize, Vec<usize>)>,
    /// (source action dim -> target action dims)
    pub action_map: Vec<(usize, Vec<usize>)>,
}

impl DimMapping {
    /// Every target dimension must be covered exactly once and all source
    /// dims must be in bounds.
    pub fn validate(&self) -> Result<()> {
        let check = |map: &[(usize, Vec<usize>)], sdim: usize, tdim: usize, what: &'static str| {
            let mut covered = vec![0usize; tdim];
            for (src, tgts) in map {
                if *src >= sdim {
                    return Err(Error::Invalid {
                        what,
                        why: format!("source dim {src} out of bounds {sdim}"),
                    });
                }
                for &t in tgts {
                    if t >= tdim {
                        return Err(Error::Invalid {
                            what,
                            why: format!("target dim {t} out of bounds {tdim}"),
                        });
                    }
                    covered[t] += 1;
                }
            }
            if covered.iter().any(|&c| c != 1) {
                return Err(Error::Invalid {
                    what,
                    why: "target dimensions not covered exactly once".into(),
                });
            }
            Ok(())
        };
        check(&self.state_map, self.source_state_dim, self.target_state_dim, "state mapping")?;
        check(
            &self.action_map,
            self.source_action_dim,
            self.target_action_dim,
            "action mapping",
        )
    }

    /// The one-leg to two-leg duplication: torque and joint state copied to
    /// both legs, shared dims passed through.
    pub fn hopper_to_walker() -> DimMapping {
        DimMapping {
            target_env_id: "twin-walker".into(),
            source_state_dim: 4,
            target_state_dim: 6,
            source_action_dim: 1,
            target_action_dim: 2,
            state_map: vec![(0, vec![0]), (1, vec![1]), (2, vec![2, 4]), (3, vec![3, 5])],
            action_map: vec![(0, vec![0, 1])],
        }
    }

    pub fn identity(env_id: &str, state_dim: usize, action_dim: usize) -> DimMapping {
        DimMapping {
            target_env_id: env_id.into(),
            source_state_dim: state_dim,
            target_state_dim: state_dim,
            source_action_dim: action_dim,
            target_action_dim: action_dim,
            state_map: (0..state_dim).map(|i| (i, vec![i])).collect(),
            action_map: (0..action_dim).map(|i| (i, vec![i])).collect(),
        }
    }
}

/// Duplicate a simple-morphology trajectory into the target's dimensions.
/// True rewards are dropped: they are undefined in target units.
pub fn map_simple_to_complex(traj: &Trajectory, mapping: &DimMapping) -> Result<Trajectory> {
    mapping.validate()?;
    if traj.state_dim() != mapping.source_state_dim || traj.action_dim() != mapping.source_action_dim
    {
        return Err(Error::DimMismatch {
            context: "trajectory dims vs mapping source spec",
            expected: mapping.source_state_dim,
            got: traj.state_dim(),
        });
    }
    let h = traj.len();
    let mut states = Array2::zeros((h, mapping.target_state_dim));
    let mut actions = Array2::zeros((h, mapping.target_action_dim));
    for (src, tgts) in &mapping.state_map {
        for &tgt in tgts {
            for t in 0..h {
                states[[t, tgt]] = traj.states()[[t, *src]];
            }
        }
    }
    for (src, tgts) in &mapping.action_map {
        for &tgt in tgts {
            for t in 0..h {
                actions[[t, tgt]] = traj.actions()[[t, *src]];
            }
        }
    }
    Trajectory::new(mapping.target_env_id.clone(), states, actions, None)
}

/// Project a mapped trajectory back onto the source dims (first target of
/// each source dim). Exact inverse of [`map_simple_to_complex`] on its image.
pub fn project_to_source(
    traj: &Trajectory,
    mapping: &DimMapping,
    source_env_id: &str,
) -> Result<Trajectory> {
    mapping.validate()?;
    let h = traj.len();
    let mut states = Array2::zeros((h, mapping.source_state_dim));
    let mut actions = Array2::zeros((h, mapping.source_action_dim));
    for (src, tgts) in &mapping.state_map {
        for t in 0..h {
            states[[t, *src]] = traj.states()[[t, tgts[0]]];
        }
    }
    for (src, tgts) in &mapping.action_map {
        for t in 0..h {
            actions[[t, *src]] = traj.actions()[[t, tgts[0]]];
        }
    }
    Trajectory::new(source_env_id, states, actions, None)
}

pub(crate) fn clip(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rollout_is_deterministic() {
        for name in env_names() {
            let env = env_by_name(name).unwrap();
            let policy = scripted_policy(name, PolicyKind::Medium).unwrap();
            let a = rollout(env.as_ref(), policy.as_ref(), 30, 5).unwrap();
            let b = rollout(env.as_ref(), policy.as_ref(), 30, 5).unwrap();
            assert_eq!(a, b, "{name}");
            let c = rollout(env.as_ref(), policy.as_ref(), 30, 6).unwrap();
            assert_ne!(a, c, "{name}");
        }
    }

    #[test]
    fn rollout_horizon_one() {
        let env = env_by_name("line-hopper").unwrap();
        let policy = scripted_policy("line-hopper", PolicyKind::Random).unwrap();
        let t = rollout(env.as_ref(), policy.as_ref(), 1, 0).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn zero_policy_from_rest_is_fixed_point() {
        let env = LineHopper::new();
        let zero = |_s: ArrayView1<f64>, _r: &mut ChaCha8Rng| Array1::zeros(1);
        let mut rng = rng::rng_for(0, "test", 0);
        let t = rollout_from(&env, Array1::zeros(4), &zero, 20, &mut rng).unwrap();
        // Velocity stays zero and the control cost vanishes: reward exactly 0.
        assert!(t.states().column(1).iter().all(|&v| v == 0.0));
        assert!(t.true_rewards().unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn expert_beats_random_everywhere() {
        for name in env_names() {
            let env = env_by_name(name).unwrap();
            let horizon = env.spec().horizon;
            let mean = |kind: PolicyKind| -> f64 {
                let p = scripted_policy(name, kind).unwrap();
                (0..20)
                    .map(|i| {
                        rollout(env.as_ref(), p.as_ref(), horizon, 100 + i)
                            .unwrap()
                            .total_return()
                            .unwrap()
                    })
                    .sum::<f64>()
                    / 20.0
            };
            let (e, m, r) = (mean(PolicyKind::Expert), mean(PolicyKind::Medium), mean(PolicyKind::Random));
            assert!(e > m && m > r, "{name}: expert {e:.2} medium {m:.2} random {r:.2}");
        }
    }

    #[test]
    fn frozen_score_refs_match_measurement() {
        for name in env_names() {
            let frozen = score_refs(name).unwrap();
            let measured = measure_score_refs(name, 100, 77).unwrap();
            assert!(
                (frozen.0 - measured.0).abs() < 1e-9 && (frozen.1 - measured.1).abs() < 1e-9,
                "{name}: frozen {frozen:?} vs measured {measured:?}"
            );
        }
    }

    #[test]
    fn offline_generation_shapes_and_returns() {
        let env = env_by_name("line-hopper").unwrap();
        let expert = scripted_policy("line-hopper", PolicyKind::Expert).unwrap();
        let ds = generate_offline_dataset(env.as_ref(), &[(expert, 1.0)], 10, 40, 3).unwrap();
        assert_eq!(ds.n_episodes(), 10);
        assert_eq!(ds.n_transitions(), 400);
        assert!(ds.dones()[39] && !ds.dones()[38]);

        let random = scripted_policy("line-hopper", PolicyKind::Random).unwrap();
        let ds_r = generate_offline_dataset(env.as_ref(), &[(random, 1.0)], 10, 40, 3).unwrap();
        assert!(ds_r.mean_episode_return() < ds.mean_episode_return());

        assert!(generate_offline_dataset(env.as_ref(), &[], 1, 10, 0).is_err());
        let zero_t = generate_offline_dataset(
            env.as_ref(),
            &[(scripted_policy("line-hopper", PolicyKind::Random).unwrap(), 1.0)],
            0,
            10,
            0,
        )
        .unwrap();
        assert!(zero_t.is_empty());
    }

    #[test]
    fn mapping_duplicates_and_projects_back() {
        let env = env_by_name("line-hopper").unwrap();
        let policy = scripted_policy("line-hopper", PolicyKind::Expert).unwrap();
        let traj = rollout(env.as_ref(), policy.as_ref(), 25, 9).unwrap();
        let mapping = DimMapping::hopper_to_walker();
        let mapped = map_simple_to_complex(&traj, &mapping).unwrap();
        assert_eq!(mapped.state_dim(), 6);
        assert_eq!(mapped.action_dim(), 2);
        assert!(mapped.true_rewards().is_none());
        for t in 0..25 {
            assert_eq!(mapped.states()[[t, 2]], mapped.states()[[t, 4]]);
            assert_eq!(mapped.states()[[t, 3]], mapped.states()[[t, 5]]);
            assert_eq!(mapped.actions()[[t, 0]], mapped.actions()[[t, 1]]);
        }
        let back = project_to_source(&mapped, &mapping, "line-hopper").unwrap();
        assert_eq!(back.states(), traj.states());
        assert_eq!(back.actions(), traj.actions());

        let ident = DimMapping::identity("line-hopper", 4, 1);
        let same = map_simple_to_complex(&traj, &ident).unwrap();
        assert_eq!(same.states(), traj.states());
    }

    #[test]
    fn mapping_validation_catches_gaps() {
        let mut m = DimMapping::hopper_to_walker();
        m.state_map[2].1 = vec![2]; // leaves target dim 4 uncovered
        assert!(m.validate().is_err());
        let mut dup = DimMapping::hopper_to_walker();
        dup.state_map[0].1 = vec![0, 1]; // covers dim 1 twice
        assert!(dup.validate().is_err());
    }

    #[test]
    fn reacher_rotation_sign_is_target_invariant() {
        let env = DiskReacher::new(TargetMode::Easy);
        let ccw = disk_reacher::ccw_policy();
        for seed in 0..5 {
            let t = rollout(&env, ccw.as_ref(), 60, seed).unwrap();
            assert!(net_rotation(&t) > 0.0);
        }
    }
}
