//! Planar rotor reaching an angular target. State
//! `(cos theta, sin theta, omega, cos target, sin target)`, action = torque.
//!
//! Task reward penalizes angular distance beyond the target tolerance plus
//! control cost. The rotation direction (counterclockwise iff omega > 0) is a
//! style attribute independent of the task reward: in `Hard` mode the target
//! sits so that the clockwise path is shorter from the start angle.

use super::{clip, Env, EnvSpec, Policy, PolicyKind, CONTROL_COST, DT};
use crate::data::Trajectory;
use ndarray::{array, Array1, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const TORQUE_GAIN: f64 = 4.0;
const ROT_DAMP: f64 = 0.5;
const HARD_START: f64 = PI / 2.0;
const HARD_TARGET: f64 = PI / 2.0 - 2.0 * PI / 3.0;

/// Wrap an angle to (-pi, pi].
fn wrap_pi(mut a: f64) -> f64 {
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Counterclockwise distance from `from` to `to`, in [0, 2*pi).
fn ccw_dist(from: f64, to: f64) -> f64 {
    let d = (to - from) % (2.0 * PI);
    if d < 0.0 {
        d + 2.0 * PI
    } else {
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Wide tolerance, random start and target.
    Easy,
    /// Narrow tolerance, fixed start/target with the clockwise path shorter.
    Hard,
}

impl TargetMode {
    fn tolerance(self) -> f64 {
        match self {
            TargetMode::Easy => 0.4,
            TargetMode::Hard => 0.05,
        }
    }
}

pub struct DiskReacher {
    spec: EnvSpec,
    mode: TargetMode,
}

impl DiskReacher {
    pub fn new(mode: TargetMode) -> Self {
        let name = match mode {
            TargetMode::Easy => "disk-reacher-easy",
            TargetMode::Hard => "disk-reacher-hard",
        };
        Self {
            spec: EnvSpec {
                name: name.into(),
                state_dim: 5,
                action_dim: 1,
                horizon: 60,
                dt: DT,
            },
            mode,
        }
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }
}

fn angle_of(state: ArrayView1<f64>) -> f64 {
    state[1].atan2(state[0])
}

fn target_of(state: ArrayView1<f64>) -> f64 {
    state[4].atan2(state[3])
}

impl Env for DiskReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let (theta, target) = match self.mode {
            TargetMode::Easy => (
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            ),
            TargetMode::Hard => (HARD_START + rng.random_range(-0.05..0.05), HARD_TARGET),
        };
        array![theta.cos(), theta.sin(), 0.0, target.cos(), target.sin()]
    }

    fn step(&self, state: ArrayView1<f64>, action: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let theta = angle_of(state);
        let omega = state[2];
        let target = target_of(state);
        let a = clip(action[0], -1.0, 1.0);

        let dist = wrap_pi(theta - target).abs();
        let reward = -(dist - self.mode.tolerance()).max(0.0) - CONTROL_COST * a * a;

        let omega_next = omega + DT * (TORQUE_GAIN * a - ROT_DAMP * omega);
        let theta_next = theta + DT * omega_next;
        (
            array![
                theta_next.cos(),
                theta_next.sin(),
                omega_next,
                state[3],
                state[4]
            ],
            reward,
        )
    }
}

/// Signed net rotation of a reacher trajectory (sum of omega * dt); positive
/// means counterclockwise. Depends only on the angular velocity column, so
/// it is invariant to the target location.
pub fn net_rotation(traj: &Trajectory) -> f64 {
    traj.states().column(2).iter().map(|&w| w * DT).sum()
}

pub(super) fn policy(kind: PolicyKind) -> Box<dyn Policy> {
    match kind {
        // Shortest-path PD controller; direction depends on the wrapped error.
        PolicyKind::Expert => Box::new(|s: ArrayView1<f64>, _rng: &mut ChaCha8Rng| {
            let err = wrap_pi(target_of(s) - angle_of(s));
            array![clip(2.5 * err - 0.8 * s[2], -1.0, 1.0)]
        }),
        PolicyKind::Medium => Box::new(|s: ArrayView1<f64>, rng: &mut ChaCha8Rng| {
            let err = wrap_pi(target_of(s) - angle_of(s));
            let dither = rng.random_range(-0.1..0.1);
            array![clip(1.2 * err - 0.4 * s[2] + dither, -1.0, 1.0)]
        }),
        PolicyKind::Random => {
            Box::new(|_s: ArrayView1<f64>, rng: &mut ChaCha8Rng| array![rng.random_range(-1.0..1.0)])
        }
    }
}

/// Controller that always approaches the target counterclockwise, then holds.
pub fn ccw_policy() -> Box<dyn Policy> {
    Box::new(|s: ArrayView1<f64>, _rng: &mut ChaCha8Rng| {
        let theta = angle_of(s);
        let target = target_of(s);
        let remaining = ccw_dist(theta, target);
        let a = if remaining > 0.2 && remaining < 2.0 * PI - 0.2 {
            // Drive forward (positive torque) until close.
            1.5 * remaining.min(1.2) - 0.6 * s[2]
        } else {
            // Arrived: hold with a local PD law.
            2.5 * wrap_pi(target - theta) - 0.8 * s[2]
        };
        array![clip(a, -1.0, 1.0)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::rollout;

    #[test]
    fn hard_mode_shortest_path_is_clockwise() {
        let env = DiskReacher::new(TargetMode::Hard);
        let expert = policy(PolicyKind::Expert);
        for seed in 0..5 {
            let t = rollout(&env, expert.as_ref(), 60, seed).unwrap();
            assert!(net_rotation(&t) < 0.0, "seed {seed}");
        }
    }

    #[test]
    fn ccw_controller_reaches_target_counterclockwise() {
        let env = DiskReacher::new(TargetMode::Easy);
        let ccw = ccw_policy();
        for seed in 0..10 {
            let t = rollout(&env, ccw.as_ref(), 60, seed).unwrap();
            assert!(net_rotation(&t) > 0.0, "seed {seed}");
            // Ends near the target: final distance within ~2 tolerances.
            let last = t.states().row(t.len() - 1);
            let dist = wrap_pi(angle_of(last) - target_of(last)).abs();
            assert!(dist < 0.8, "seed {seed}: final distance {dist}");
        }
    }

    #[test]
    fn wrap_helpers() {
        assert!((wrap_pi(3.0 * PI) - PI).abs() < 1e-12);
        assert!((ccw_dist(0.0, -PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!((ccw_dist(-PI / 2.0, 0.0) - 0.5 * PI).abs() < 1e-12);
    }
}
