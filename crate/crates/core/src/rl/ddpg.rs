//! Online deterministic actor-critic with additive reward shaping.
//!
//! Standard replay-buffer DDPG with Gaussian exploration noise and soft
//! target updates. When a reward shaper is supplied with `lambda > 0`, each
//! collected transition's reward becomes `r_task + lambda * r_pref`, where
//! `r_pref` is computed from the episode-so-far state-action history at
//! collection time. With `lambda = 0` the shaper is never consulted and
//! training is identical to the unshaped run.

use super::MlpPolicy;
use crate::data::Trajectory;
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::nn::{Act, Adam, Mlp, ParamSet, Tape};
use crate::reward::RewardShaper;
use crate::rng;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DDPGConfig {
    /// Gaussian exploration noise scale in action units.
    pub noise_scale: f64,
    /// Weight on the preference reward added to the task reward.
    pub lambda: f64,
    pub gamma_disc: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub target_rate: f64,
    pub replay_capacity: usize,
    /// Total environment steps.
    pub steps: usize,
    /// Steps of uniform-random warmup before updates begin.
    pub warmup: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DDPGConfig {
    fn default() -> Self {
        Self {
            noise_scale: 0.15,
            lambda: 1.0,
            gamma_disc: 0.99,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            target_rate: 0.005,
            replay_capacity: 20_000,
            steps: 12_000,
            warmup: 600,
            batch_size: 64,
            hidden: 64,
            seed: 0,
        }
    }
}

impl DDPGConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Invalid {
                what: "ddpg config",
                why: "lambda must be >= 0".into(),
            });
        }
        if self.steps == 0 || self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::Invalid {
                what: "ddpg config",
                why: "steps, batch_size and replay_capacity must be positive and consistent".into(),
            });
        }
        Ok(())
    }
}

struct Replay {
    states: Vec<Array1<f64>>,
    actions: Vec<Array1<f64>>,
    rewards: Vec<f64>,
    next_states: Vec<Array1<f64>>,
    dones: Vec<bool>,
    capacity: usize,
    next: usize,
    full: bool,
}

impl Replay {
    fn new(capacity: usize) -> Self {
        Self {
            states: Vec::with_capacity(capacity),
            actions: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            next_states: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            capacity,
            next: 0,
            full: false,
        }
    }

    fn len(&self) -> usize {
        if self.full {
            self.capacity
        } else {
            self.next
        }
    }

    fn push(&mut self, s: Array1<f64>, a: Array1<f64>, r: f64, ns: Array1<f64>, done: bool) {
        if self.full {
            self.states[self.next] = s;
            self.actions[self.next] = a;
            self.rewards[self.next] = r;
            self.next_states[self.next] = ns;
            self.dones[self.next] = done;
        } else {
            self.states.push(s);
            self.actions.push(a);
            self.rewards.push(r);
            self.next_states.push(ns);
            self.dones.push(done);
        }
        self.next += 1;
        if self.next == self.capacity {
            self.next = 0;
            self.full = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DdpgMetricRow {
    pub step: usize,
    pub critic_loss: f64,
    pub actor_objective: f64,
}

/// Incremental trainer; callers interleave env steps with evaluations.
pub struct DdpgTrainer<'a> {
    config: DDPGConfig,
    env: &'a dyn Env,
    shaper: Option<&'a dyn RewardShaper>,
    params: ParamSet,
    actor: Mlp,
    critic: Mlp,
    actor_param_idx: Vec<usize>,
    critic_param_idx: Vec<usize>,
    target: ParamSet,
    actor_adam: Adam,
    critic_adam: Adam,
    replay: Replay,
    rng: ChaCha8Rng,
    state: Array1<f64>,
    // episode-so-far history for prefix shaping
    ep_states: Vec<Array1<f64>>,
    ep_actions: Vec<Array1<f64>>,
    step: usize,
    episodes_done: usize,
    metrics: Vec<DdpgMetricRow>,
}

impl<'a> DdpgTrainer<'a> {
    pub fn new(env: &'a dyn Env, shaper: Option<&'a dyn RewardShaper>, config: &DDPGConfig) -> Result<Self> {
        config.validate()?;
        if config.lambda > 0.0 && shaper.is_none() {
            return Err(Error::Missing("reward shaper required when lambda > 0"));
        }
        let spec = env.spec();
        let (sdim, adim, h) = (spec.state_dim, spec.action_dim, config.hidden);
        let mut params = ParamSet::new();
        let mut init_rng = rng::rng_for(config.seed, "ddpg-init", 0);
        let a0 = params.len();
        let actor = Mlp::init(&mut params, "actor", &[sdim, h, h, adim], Act::Tanh, &mut init_rng);
        let a1 = params.len();
        let critic = Mlp::init(&mut params, "critic", &[sdim + adim, h, h, 1], Act::Linear, &mut init_rng);
        let c1 = params.len();
        let target = params.clone();
        let actor_adam = Adam::new(&params);
        let critic_adam = Adam::new(&params);
        let mut rng = rng::rng_for(config.seed, "ddpg-train", 0);
        let state = env.init_state(&mut rng);
        Ok(Self {
            config: config.clone(),
            env,
            shaper,
            params,
            actor,
            critic,
            actor_param_idx: (a0..a1).collect(),
            critic_param_idx: (a1..c1).collect(),
            target,
            actor_adam,
            critic_adam,
            replay: Replay::new(config.replay_capacity),
            rng,
            state,
            ep_states: Vec::new(),
            ep_actions: Vec::new(),
            step: 0,
            episodes_done: 0,
            metrics: Vec::new(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn metrics(&self) -> &[DdpgMetricRow] {
        &self.metrics
    }

    pub fn policy(&self) -> MlpPolicy {
        // The actor's parameters sit at indices 0..n in the shared set, so
        // the cloned Mlp's indices line up with the extracted subset.
        let mut ps = ParamSet::new();
        for &i in &self.actor_param_idx {
            ps.add(self.params.name(i).to_string(), self.params.value(i).clone());
        }
        let spec = self.env.spec();
        MlpPolicy::from_parts(ps, self.actor.clone(), spec.state_dim, spec.action_dim, self.config.hidden)
    }

    fn explore_action(&mut self) -> Array1<f64> {
        let mut a = {
            let x = self.state.view().insert_axis(Axis(0)).to_owned();
            let out = self.actor.forward(&self.params, &x);
            out.row(0).to_owned()
        };
        for v in a.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            *v = (*v + self.config.noise_scale * n).clamp(-1.0, 1.0);
        }
        a
    }

    fn shaped_reward(&self, r_task: f64) -> Result<f64> {
        if self.config.lambda == 0.0 {
            return Ok(r_task);
        }
        let shaper = self.shaper.expect("validated in new");
        let h = self.ep_states.len();
        let sdim = self.env.spec().state_dim;
        let adim = self.env.spec().action_dim;
        let mut states = Array2::zeros((h, sdim));
        let mut actions = Array2::zeros((h, adim));
        for (t, (s, a)) in self.ep_states.iter().zip(&self.ep_actions).enumerate() {
            states.row_mut(t).assign(s);
            actions.row_mut(t).assign(a);
        }
        let prefix = Trajectory::new(self.env.spec().name.clone(), states, actions, None)?;
        Ok(r_task + self.config.lambda * shaper.shaped_reward(&prefix)?)
    }

    fn update(&mut self) -> Result<(f64, f64)> {
        let b = self.config.batch_size;
        let n = self.replay.len();
        let idx: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..n)).collect();
        let sdim = self.env.spec().state_dim;
        let adim = self.env.spec().action_dim;
        let mut s = Array2::zeros((b, sdim));
        let mut a = Array2::zeros((b, adim));
        let mut ns = Array2::zeros((b, sdim));
        let mut r = Array2::zeros((b, 1));
        let mut not_done = Array2::zeros((b, 1));
        for (row, &i) in idx.iter().enumerate() {
            s.row_mut(row).assign(&self.replay.states[i]);
            a.row_mut(row).assign(&self.replay.actions[i]);
            ns.row_mut(row).assign(&self.replay.next_states[i]);
            r[[row, 0]] = self.replay.rewards[i];
            not_done[[row, 0]] = if self.replay.dones[i] { 0.0 } else { 1.0 };
        }

        // critic target: r + gamma * (1 - done) * Q_t(s', mu_t(s'))
        let next_a = self.actor.forward(&self.target, &ns);
        let nsa = ndarray::concatenate(Axis(1), &[ns.view(), next_a.view()]).unwrap();
        let q_next = self.critic.forward(&self.target, &nsa);
        let targets = &r + &(self.config.gamma_disc * &not_done * &q_next);

        let critic_loss = {
            let sa = ndarray::concatenate(Axis(1), &[s.view(), a.view()]).unwrap();
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let sa_leaf = tape.leaf(sa);
            let q = self.critic.forward_taped(&mut tape, &bound, sa_leaf);
            let t_leaf = tape.leaf(targets);
            let diff = tape.sub(q, t_leaf);
            let sq = tape.mul(diff, diff);
            let sum = tape.sum_all(sq);
            let loss = tape.scale(sum, 1.0 / b as f64);
            let val = tape.value(loss)[[0, 0]];
            if !val.is_finite() {
                return Err(Error::Diverged { step: self.step });
            }
            let pass = tape.backward(loss);
            let mut grads = tape.param_grads(&pass, self.params.len());
            for &i in &self.actor_param_idx {
                grads[i] = None;
            }
            self.critic_adam.step(&mut self.params, &grads, self.config.lr_critic);
            val
        };

        let actor_objective = {
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let s_leaf = tape.leaf(s.clone());
            let mu = self.actor.forward_taped(&mut tape, &bound, s_leaf);
            let s_const = tape.leaf(s);
            let sa = tape.concat_cols(&[s_const, mu]);
            let q = self.critic.forward_taped(&mut tape, &bound, sa);
            let sum = tape.sum_all(q);
            let neg_mean = tape.scale(sum, -1.0 / b as f64);
            let val = tape.value(neg_mean)[[0, 0]];
            if !val.is_finite() {
                return Err(Error::Diverged { step: self.step });
            }
            let pass = tape.backward(neg_mean);
            let mut grads = tape.param_grads(&pass, self.params.len());
            for &i in &self.critic_param_idx {
                grads[i] = None;
            }
            self.actor_adam.step(&mut self.params, &grads, self.config.lr_actor);
            -val
        };

        self.target.soft_update_from(&self.params, self.config.target_rate);
        Ok((critic_loss, actor_objective))
    }

    /// Advance `n` environment steps (collect + update after warmup).
    pub fn train_steps(&mut self, n: usize) -> Result<()> {
        let horizon = self.env.spec().horizon;
        for _ in 0..n {
            let action = if self.step < self.config.warmup {
                Array1::from_shape_fn(self.env.spec().action_dim, |_| {
                    self.rng.random_range(-1.0..1.0)
                })
            } else {
                self.explore_action()
            };
            let (next_state, r_task) = self.env.step(self.state.view(), action.view());
            self.ep_states.push(self.state.clone());
            self.ep_actions.push(action.clone());
            let r = self.shaped_reward(r_task)?;
            let done = self.ep_states.len() >= horizon;
            self.replay
                .push(self.state.clone(), action, r, next_state.clone(), done);
            if done {
                self.episodes_done += 1;
                self.ep_states.clear();
                self.ep_actions.clear();
                self.state = self.env.init_state(&mut self.rng);
            } else {
                self.state = next_state;
            }
            if self.step >= self.config.warmup && self.replay.len() >= self.config.batch_size {
                let (critic_loss, actor_objective) = self.update()?;
                if self.step % 100 == 0 {
                    self.metrics.push(DdpgMetricRow {
                        step: self.step,
                        critic_loss,
                        actor_objective,
                    });
                }
            }
            self.step += 1;
        }
        Ok(())
    }
}

/// Full shaped training run.
pub fn train_ddpg_shaped(
    env: &dyn Env,
    shaper: Option<&dyn RewardShaper>,
    config: &DDPGConfig,
) -> Result<(MlpPolicy, Vec<DdpgMetricRow>)> {
    let mut trainer = DdpgTrainer::new(env, shaper, config)?;
    trainer.train_steps(config.steps)?;
    let policy = trainer.policy();
    let metrics = std::mem::take(&mut trainer.metrics);
    Ok((policy, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, TargetMode};
    use crate::rl::evaluate_policy;

    #[test]
    fn lambda_zero_matches_unshaped_traces() {
        let env = envs::DiskReacher::new(TargetMode::Hard);
        let config = DDPGConfig {
            steps: 300,
            warmup: 100,
            batch_size: 16,
            hidden: 16,
            lambda: 0.0,
            seed: 4,
            ..DDPGConfig::default()
        };
        let (_, m1) = train_ddpg_shaped(&env, None, &config).unwrap();
        let (_, m2) = train_ddpg_shaped(&env, None, &config).unwrap();
        assert_eq!(m1, m2);
        assert!(!m1.is_empty());
    }

    #[test]
    fn lambda_positive_requires_shaper() {
        let env = envs::DiskReacher::new(TargetMode::Hard);
        let config = DDPGConfig {
            steps: 10,
            lambda: 1.0,
            ..DDPGConfig::default()
        };
        assert!(DdpgTrainer::new(&env, None, &config).is_err());
    }

    #[test]
    fn policy_extraction_matches_actor() {
        let env = envs::DiskReacher::new(TargetMode::Hard);
        let config = DDPGConfig {
            steps: 150,
            warmup: 50,
            batch_size: 16,
            hidden: 16,
            lambda: 0.0,
            seed: 2,
            ..DDPGConfig::default()
        };
        let (policy, _) = train_ddpg_shaped(&env, None, &config).unwrap();
        let r1 = evaluate_policy(&env, &policy, 3, 1).unwrap();
        let r2 = evaluate_policy(&env, &policy, 3, 1).unwrap();
        assert_eq!(r1, r2);
    }
}
