//! Policy learning: offline expectile Q-learning on relabeled datasets and
//! online deterministic actor-critic with additive reward shaping, plus
//! policy evaluation rollouts.

pub mod ddpg;
pub mod iql;

pub use ddpg::{train_ddpg_shaped, DdpgTrainer, DDPGConfig};
pub use iql::{expectile_loss, train_iql, IqlTrainer, IQLConfig};

use crate::envs::{rollout, Env, Policy};
use crate::error::{Error, Result};
use crate::nn::{Act, Mlp, ParamSet};
use crate::par;
use crate::rng;
use ndarray::{Array1, Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// Deterministic MLP policy with tanh-bounded actions.
#[derive(Debug, Clone)]
pub struct MlpPolicy {
    params: ParamSet,
    net: Mlp,
    state_dim: usize,
    action_dim: usize,
    hidden: usize,
}

impl MlpPolicy {
    pub fn init(state_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = rng::rng_for(seed, "policy-init", 0);
        let net = Mlp::init(
            &mut params,
            "pi",
            &[state_dim, hidden, hidden, action_dim],
            Act::Tanh,
            &mut rng,
        );
        Self {
            params,
            net,
            state_dim,
            action_dim,
            hidden,
        }
    }

    pub(crate) fn from_parts(params: ParamSet, net: Mlp, state_dim: usize, action_dim: usize, hidden: usize) -> Self {
        Self {
            params,
            net,
            state_dim,
            action_dim,
            hidden,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn action(&self, state: ArrayView1<f64>) -> Array1<f64> {
        let x = state.insert_axis(ndarray::Axis(0)).to_owned();
        self.net.forward(&self.params, &x).row(0).to_owned()
    }

    /// Batched actions, `(B, action_dim)`.
    pub fn actions(&self, states: &Array2<f64>) -> Array2<f64> {
        self.net.forward(&self.params, states)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(
            path,
            serde_json::json!({
                "kind": "mlp-policy",
                "state_dim": self.state_dim as u64,
                "action_dim": self.action_dim as u64,
                "hidden": self.hidden as u64,
            }),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta) = ParamSet::load(path)?;
        let dim = |key: &str| -> Result<usize> {
            meta.get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("policy checkpoint missing {key}")))
        };
        let (state_dim, action_dim, hidden) = (dim("state_dim")?, dim("action_dim")?, dim("hidden")?);
        let mut fresh = Self::init(state_dim, action_dim, hidden, 0);
        if fresh.params.len() != params.len() {
            return Err(Error::Format("policy checkpoint parameter count mismatch".into()));
        }
        fresh.params = params;
        Ok(fresh)
    }
}

impl Policy for MlpPolicy {
    fn act(&self, state: ArrayView1<f64>, _rng: &mut ChaCha8Rng) -> Array1<f64> {
        self.action(state)
    }
}

/// Roll `n_episodes` evaluation episodes and return raw episode returns in
/// true reward units. Episodes use per-index derived seeds, so the result
/// does not depend on scheduling.
pub fn evaluate_policy(
    env: &dyn Env,
    policy: &dyn Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_episodes == 0 {
        return Err(Error::Empty("evaluation episodes"));
    }
    let horizon = env.spec().horizon;
    let returns = par::map_indices(n_episodes, |i| {
        rollout(env, policy, horizon, rng::derive_seed(seed, "eval-episode", i as u64))
            .map(|t| t.total_return().expect("rollout carries true rewards"))
    });
    returns.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, PolicyKind};

    #[test]
    fn evaluate_policy_shapes_and_determinism() {
        let env = envs::env_by_name("line-hopper").unwrap();
        let policy = envs::scripted_policy("line-hopper", PolicyKind::Medium).unwrap();
        let r = evaluate_policy(env.as_ref(), policy.as_ref(), 10, 3).unwrap();
        assert_eq!(r.len(), 10);
        let r2 = evaluate_policy(env.as_ref(), policy.as_ref(), 10, 3).unwrap();
        assert_eq!(r, r2);
        assert!(evaluate_policy(env.as_ref(), policy.as_ref(), 0, 3).is_err());
    }

    #[test]
    fn random_policy_underperforms_expert_on_every_env() {
        for name in envs::env_names() {
            let env = envs::env_by_name(name).unwrap();
            let rand = envs::scripted_policy(name, PolicyKind::Random).unwrap();
            let expert = envs::scripted_policy(name, PolicyKind::Expert).unwrap();
            let mean = |p: &dyn crate::envs::Policy| {
                let r = evaluate_policy(env.as_ref(), p, 12, 9).unwrap();
                r.iter().sum::<f64>() / r.len() as f64
            };
            assert!(mean(rand.as_ref()) < mean(expert.as_ref()), "{name}");
        }
    }

    #[test]
    fn policy_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.rlc");
        let policy = MlpPolicy::init(4, 1, 16, 5);
        policy.save(&path).unwrap();
        let loaded = MlpPolicy::load(&path).unwrap();
        let s = ndarray::array![0.3, -0.2, 0.9, 0.0];
        assert_eq!(policy.action(s.view()), loaded.action(s.view()));
    }
}
