//! Two-legged counterpart of the one-legged hopper. State
//! `(x, v, theta_r, omega_r, theta_l, omega_l)`, action = per-leg torques.
//!
//! Each leg follows the hopper's leg dynamics and forward speed is driven by
//! the mean swing of the two legs, so a symmetrically duplicated hopper
//! trajectory is exactly realizable here. Joint dims are arranged to mirror
//! the hopper under `DimMapping::hopper_to_walker`.

use super::line_hopper::swing_drive;
use super::{clip, Env, EnvSpec, Policy, PolicyKind, CONTROL_COST, DT};
use ndarray::{array, Array1, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TORQUE_GAIN: f64 = 6.0;
const SPRING: f64 = 3.0;
const LEG_DAMP: f64 = 1.0;
const DRIVE_GAIN: f64 = 2.0;
const DRAG: f64 = 0.5;

pub struct TwinWalker {
    spec: EnvSpec,
}

impl TwinWalker {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "twin-walker".into(),
                state_dim: 6,
                action_dim: 2,
                horizon: 60,
                dt: DT,
            },
        }
    }
}

impl Default for TwinWalker {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for TwinWalker {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let theta_r = rng.random_range(-0.5..0.5);
        let omega_r = rng.random_range(-0.5..0.5);
        let theta_l = rng.random_range(-0.5..0.5);
        let omega_l = rng.random_range(-0.5..0.5);
        array![0.0, 0.0, theta_r, omega_r, theta_l, omega_l]
    }

    fn step(&self, state: ArrayView1<f64>, action: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let (x, v) = (state[0], state[1]);
        let a_r = clip(action[0], -1.0, 1.0);
        let a_l = clip(action[1], -1.0, 1.0);
        let reward = v - CONTROL_COST * (a_r * a_r + a_l * a_l);

        let leg = |theta: f64, omega: f64, a: f64| {
            let omega_next = omega + DT * (TORQUE_GAIN * a - SPRING * theta - LEG_DAMP * omega);
            let theta_next = theta + DT * omega_next;
            (theta_next, omega_next)
        };
        let (theta_r, omega_r) = leg(state[2], state[3], a_r);
        let (theta_l, omega_l) = leg(state[4], state[5], a_l);
        let drive = 0.5 * (swing_drive(omega_r) + swing_drive(omega_l));
        let v_next = v + DT * (DRIVE_GAIN * drive - DRAG * v);
        let x_next = x + DT * v_next;
        (
            array![x_next, v_next, theta_r, omega_r, theta_l, omega_l],
            reward,
        )
    }
}

pub(super) fn policy(kind: PolicyKind) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Expert => Box::new(|s: ArrayView1<f64>, _rng: &mut ChaCha8Rng| {
            array![
                clip((3.0 * s[3]).tanh(), -1.0, 1.0),
                clip((3.0 * s[5]).tanh(), -1.0, 1.0)
            ]
        }),
        PolicyKind::Medium => Box::new(|s: ArrayView1<f64>, rng: &mut ChaCha8Rng| {
            let d_r = rng.random_range(-0.1..0.1);
            let d_l = rng.random_range(-0.1..0.1);
            array![
                clip(0.45 * (3.0 * s[3]).tanh() + d_r, -1.0, 1.0),
                clip(0.45 * (3.0 * s[5]).tanh() + d_l, -1.0, 1.0)
            ]
        }),
        PolicyKind::Random => Box::new(|_s: ArrayView1<f64>, rng: &mut ChaCha8Rng| {
            array![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        }),
    }
}
