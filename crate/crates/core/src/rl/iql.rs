//! Offline policy learning by implicit (expectile) Q-learning.
//!
//! The value net is fit by expectile regression against the minimum of two
//! target Q nets; the Q nets regress on one-step Bellman targets
//! `r + gamma * V(s') * (1 - done)`; the policy is extracted by
//! advantage-weighted regression with weights `exp(beta * A)` clipped at a
//! constant. Training touches only the dataset's reward column, so swapping
//! true rewards for relabeled ones changes nothing else about the data path.

use super::MlpPolicy;
use crate::data::OfflineDataset;
use crate::error::{Error, Result};
use crate::nn::{Act, Adam, Mlp, ParamSet, Tape};
use crate::rng;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IQLConfig {
    /// Expectile for the value regression.
    pub tau_e: f64,
    /// Advantage-weighted-regression inverse temperature.
    pub awr_beta: f64,
    pub gamma_disc: f64,
    /// Soft update rate for the target Q nets.
    pub target_rate: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    /// Cap on AWR weights.
    pub awr_clip: f64,
    pub seed: u64,
}

impl Default for IQLConfig {
    fn default() -> Self {
        Self {
            tau_e: 0.7,
            awr_beta: 3.0,
            gamma_disc: 0.99,
            target_rate: 0.005,
            lr: 3e-4,
            steps: 3000,
            batch_size: 128,
            hidden: 64,
            awr_clip: 100.0,
            seed: 0,
        }
    }
}

impl IQLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau_e && self.tau_e < 1.0) {
            return Err(Error::Invalid {
                what: "iql config",
                why: format!("tau_e {} not in (0, 1)", self.tau_e),
            });
        }
        if self.awr_beta < 0.0 {
            return Err(Error::Invalid {
                what: "iql config",
                why: "awr_beta must be >= 0".into(),
            });
        }
        if !(0.0 < self.gamma_disc && self.gamma_disc <= 1.0) {
            return Err(Error::Invalid {
                what: "iql config",
                why: format!("gamma_disc {} not in (0, 1]", self.gamma_disc),
            });
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Invalid {
                what: "iql config",
                why: "steps and batch_size must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Asymmetric squared loss `|tau - 1[u < 0]| * u^2`.
pub fn expectile_loss(u: f64, tau_e: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau_e } else { tau_e };
    w * u * u
}

/// One-step regression target `r + gamma * v_next * (1 - done)`.
pub fn bellman_target(reward: f64, gamma: f64, v_next: f64, done: bool) -> f64 {
    reward + gamma * v_next * if done { 0.0 } else { 1.0 }
}

/// AWR weight `min(exp(beta * advantage), clip)`.
pub fn awr_weight(advantage: f64, beta: f64, clip: f64) -> f64 {
    (beta * advantage).exp().min(clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IqlMetricRow {
    pub step: usize,
    pub v_loss: f64,
    pub q_loss: f64,
    pub pi_loss: f64,
}

/// Incremental trainer so callers can interleave gradient steps with
/// evaluation rollouts.
pub struct IqlTrainer {
    config: IQLConfig,
    states: Array2<f64>,
    actions: Array2<f64>,
    rewards: Array1<f64>,
    next_states: Array2<f64>,
    dones: Vec<bool>,
    v_ps: ParamSet,
    v_net: Mlp,
    q1_ps: ParamSet,
    q1_net: Mlp,
    q2_ps: ParamSet,
    q2_net: Mlp,
    q1_target: ParamSet,
    q2_target: ParamSet,
    pi_ps: ParamSet,
    pi_net: Mlp,
    v_adam: Adam,
    q1_adam: Adam,
    q2_adam: Adam,
    pi_adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
    metrics: Vec<IqlMetricRow>,
}

impl IqlTrainer {
    pub fn new(offline: &OfflineDataset, config: &IQLConfig) -> Result<Self> {
        config.validate()?;
        if offline.is_empty() {
            return Err(Error::Empty("offline dataset"));
        }
        if !offline.rewards().iter().all(|r| r.is_finite()) {
            return Err(Error::Invalid {
                what: "offline dataset",
                why: "non-finite reward".into(),
            });
        }
        let sdim = offline.state_dim();
        let adim = offline.action_dim();
        let h = config.hidden;
        let mut rng = rng::rng_for(config.seed, "iql-init", 0);
        let build = |tag: &str, dims: &[usize], act: Act, rng: &mut ChaCha8Rng| {
            let mut ps = ParamSet::new();
            let net = Mlp::init(&mut ps, tag, dims, act, rng);
            (ps, net)
        };
        let (v_ps, v_net) = build("v", &[sdim, h, h, 1], Act::Linear, &mut rng);
        let (q1_ps, q1_net) = build("q1", &[sdim + adim, h, h, 1], Act::Linear, &mut rng);
        let (q2_ps, q2_net) = build("q2", &[sdim + adim, h, h, 1], Act::Linear, &mut rng);
        let (pi_ps, pi_net) = build("pi", &[sdim, h, h, adim], Act::Tanh, &mut rng);
        let v_adam = Adam::new(&v_ps);
        let q1_adam = Adam::new(&q1_ps);
        let q2_adam = Adam::new(&q2_ps);
        let pi_adam = Adam::new(&pi_ps);
        Ok(Self {
            config: config.clone(),
            states: offline.states().clone(),
            actions: offline.actions().clone(),
            rewards: offline.rewards().clone(),
            next_states: offline.next_states().clone(),
            dones: offline.dones().to_vec(),
            q1_target: q1_ps.clone(),
            q2_target: q2_ps.clone(),
            v_ps,
            v_net,
            q1_ps,
            q1_net,
            q2_ps,
            q2_net,
            pi_ps,
            pi_net,
            v_adam,
            q1_adam,
            q2_adam,
            pi_adam,
            rng: rng::rng_for(config.seed, "iql-train", 0),
            step: 0,
            metrics: Vec::new(),
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn metrics(&self) -> &[IqlMetricRow] {
        &self.metrics
    }

    pub fn policy(&self) -> MlpPolicy {
        MlpPolicy::from_parts(
            self.pi_ps.clone(),
            self.pi_net.clone(),
            self.states.ncols(),
            self.actions.ncols(),
            self.config.hidden,
        )
    }

    fn gather(src: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), src.ncols()));
        for (row, &i) in idx.iter().enumerate() {
            out.row_mut(row).assign(&src.row(i));
        }
        out
    }

    /// Run `n` gradient steps.
    pub fn train_steps(&mut self, n: usize) -> Result<()> {
        let b = self.config.batch_size;
        let n_data = self.states.nrows();
        for _ in 0..n {
            let idx: Vec<usize> = (0..b).map(|_| self.rng.random_range(0..n_data)).collect();
            let s = Self::gather(&self.states, &idx);
            let a = Self::gather(&self.actions, &idx);
            let ns = Self::gather(&self.next_states, &idx);
            let sa = ndarray::concatenate(Axis(1), &[s.view(), a.view()]).unwrap();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let done: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();

            // Expectile regression of V against the min of the target Qs.
            let q_min: Array2<f64> = {
                let q1 = self.q1_net.forward(&self.q1_target, &sa);
                let q2 = self.q2_net.forward(&self.q2_target, &sa);
                ndarray::Zip::from(&q1).and(&q2).map_collect(|&x, &y| x.min(y))
            };
            let v_loss = {
                let mut tape = Tape::new();
                let bound = self.v_ps.bind(&mut tape);
                let s_leaf = tape.leaf(s.clone());
                let v = self.v_net.forward_taped(&mut tape, &bound, s_leaf);
                let q_leaf = tape.leaf(q_min.clone());
                let u = tape.sub(q_leaf, v);
                let weights = tape.value(u).mapv(|e| if e < 0.0 {
                    1.0 - self.config.tau_e
                } else {
                    self.config.tau_e
                });
                let u2 = tape.mul(u, u);
                let weighted = tape.mul_const(u2, weights);
                let sum = tape.sum_all(weighted);
                let loss = tape.scale(sum, 1.0 / b as f64);
                let val = tape.value(loss)[[0, 0]];
                if !val.is_finite() {
                    return Err(Error::Diverged { step: self.step });
                }
                let pass = tape.backward(loss);
                let grads = tape.param_grads(&pass, self.v_ps.len());
                self.v_adam.step(&mut self.v_ps, &grads, self.config.lr);
                val
            };

            // Q regression on r + gamma * V(s') * (1 - done).
            let v_next = self.v_net.forward(&self.v_ps, &ns);
            let targets = Array2::from_shape_fn((b, 1), |(i, _)| {
                bellman_target(r[i], self.config.gamma_disc, v_next[[i, 0]], done[i])
            });
            let mut q_loss_total = 0.0;
            for (ps, net, adam) in [
                (&mut self.q1_ps, &self.q1_net, &mut self.q1_adam),
                (&mut self.q2_ps, &self.q2_net, &mut self.q2_adam),
            ] {
                let mut tape = Tape::new();
                let bound = ps.bind(&mut tape);
                let sa_leaf = tape.leaf(sa.clone());
                let q = net.forward_taped(&mut tape, &bound, sa_leaf);
                let t_leaf = tape.leaf(targets.clone());
                let diff = tape.sub(q, t_leaf);
                let sq = tape.mul(diff, diff);
                let sum = tape.sum_all(sq);
                let loss = tape.scale(sum, 1.0 / b as f64);
                let val = tape.value(loss)[[0, 0]];
                if !val.is_finite() {
                    return Err(Error::Diverged { step: self.step });
                }
                q_loss_total += val;
                let pass = tape.backward(loss);
                let grads = tape.param_grads(&pass, ps.len());
                adam.step(ps, &grads, self.config.lr);
            }

            // Advantage-weighted regression toward dataset actions.
            let advantage = {
                let v = self.v_net.forward(&self.v_ps, &s);
                &q_min - &v
            };
            let weights = Array2::from_shape_fn((b, 1), |(i, _)| {
                awr_weight(advantage[[i, 0]], self.config.awr_beta, self.config.awr_clip)
            });
            let pi_loss = {
                let mut tape = Tape::new();
                let bound = self.pi_ps.bind(&mut tape);
                let s_leaf = tape.leaf(s.clone());
                let pi = self.pi_net.forward_taped(&mut tape, &bound, s_leaf);
                let a_leaf = tape.leaf(a.clone());
                let diff = tape.sub(pi, a_leaf);
                let sq = tape.mul(diff, diff);
                let per_row = tape.sum_rowwise(sq);
                let weighted = tape.mul_const(per_row, weights);
                let sum = tape.sum_all(weighted);
                let loss = tape.scale(sum, 1.0 / b as f64);
                let val = tape.value(loss)[[0, 0]];
                if !val.is_finite() {
                    return Err(Error::Diverged { step: self.step });
                }
                let pass = tape.backward(loss);
                let grads = tape.param_grads(&pass, self.pi_ps.len());
                self.pi_adam.step(&mut self.pi_ps, &grads, self.config.lr);
                val
            };

            self.q1_target.soft_update_from(&self.q1_ps, self.config.target_rate);
            self.q2_target.soft_update_from(&self.q2_ps, self.config.target_rate);

            if self.step % 50 == 0 {
                self.metrics.push(IqlMetricRow {
                    step: self.step,
                    v_loss,
                    q_loss: q_loss_total / 2.0,
                    pi_loss,
                });
            }
            self.step += 1;
        }
        Ok(())
    }
}

/// Full training run; returns the extracted policy and the metric stream.
pub fn train_iql(offline: &OfflineDataset, config: &IQLConfig) -> Result<(MlpPolicy, Vec<IqlMetricRow>)> {
    let mut trainer = IqlTrainer::new(offline, config)?;
    trainer.train_steps(config.steps)?;
    let policy = trainer.policy();
    Ok((policy, trainer.metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, PolicyKind};

    #[test]
    fn expectile_loss_values() {
        assert!((expectile_loss(1.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((expectile_loss(-1.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((expectile_loss(1.0, 0.7) - 0.7).abs() < 1e-15);
        assert!((expectile_loss(-1.0, 0.7) - 0.3).abs() < 1e-15);
        // tau = 0.5 reduces to u^2 / 2
        for u in [-2.5, -0.3, 0.0, 0.7, 3.1] {
            assert!((expectile_loss(u, 0.5) - u * u / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn bellman_target_done_consistency() {
        // with done = 1 the target equals the immediate reward exactly
        assert_eq!(bellman_target(2.5, 0.99, 100.0, true), 2.5);
        assert!((bellman_target(2.5, 0.99, 10.0, false) - 12.4).abs() < 1e-12);
    }

    #[test]
    fn awr_weights_positive_and_clipped()  {
        assert!(awr_weight(-5.0, 3.0, 100.0) > 0.0);
        assert_eq!(awr_weight(10.0, 3.0, 100.0), 100.0);
        assert!((awr_weight(0.0, 3.0, 100.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let env = envs::env_by_name("line-hopper").unwrap();
        let mix: Vec<(Box<dyn envs::Policy>, f64)> = vec![
            (envs::scripted_policy("line-hopper", PolicyKind::Expert).unwrap(), 0.5),
            (envs::scripted_policy("line-hopper", PolicyKind::Random).unwrap(), 0.5),
        ];
        let off = envs::generate_offline_dataset(env.as_ref(), &mix, 6, 20, 3).unwrap();
        let config = IQLConfig {
            steps: 40,
            batch_size: 32,
            hidden: 16,
            seed: 1,
            ..IQLConfig::default()
        };
        let (_, m1) = train_iql(&off, &config).unwrap();
        let (_, m2) = train_iql(&off, &config).unwrap();
        assert_eq!(m1, m2);
        assert!(!m1.is_empty());
        assert!(m1.iter().all(|r| r.v_loss.is_finite() && r.q_loss.is_finite() && r.pi_loss.is_finite()));
    }
}
