//! One-legged forward locomotion: a torque-driven leg oscillator whose swing
//! pumps forward speed. State `(x, v, theta, omega)`, action = leg torque.
//!
//! Speed builds only while the leg keeps swinging, so high return requires a
//! rhythmic phase-dependent policy rather than constant torque.

use super::{clip, Env, EnvSpec, Policy, PolicyKind, CONTROL_COST, DT};
use ndarray::{array, Array1, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TORQUE_GAIN: f64 = 6.0;
const SPRING: f64 = 3.0;
const LEG_DAMP: f64 = 1.0;
const DRIVE_GAIN: f64 = 2.0;
const DRAG: f64 = 0.5;

/// Swing drive: saturating function of leg angular speed.
pub(super) fn swing_drive(omega: f64) -> f64 {
    let w2 = omega * omega;
    w2 / (1.0 + w2)
}

pub struct LineHopper {
    spec: EnvSpec,
}

impl LineHopper {
    pub fn new() -> Self {
        Self {
            spec: EnvSpec {
                name: "line-hopper".into(),
                state_dim: 4,
                action_dim: 1,
                horizon: 60,
                dt: DT,
            },
        }
    }
}

impl Default for LineHopper {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for LineHopper {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn init_state(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let theta = rng.random_range(-0.5..0.5);
        let omega = rng.random_range(-0.5..0.5);
        array![0.0, 0.0, theta, omega]
    }

    fn step(&self, state: ArrayView1<f64>, action: ArrayView1<f64>) -> (Array1<f64>, f64) {
        let (x, v, theta, omega) = (state[0], state[1], state[2], state[3]);
        let a = clip(action[0], -1.0, 1.0);
        let reward = v - CONTROL_COST * a * a;

        let omega_next = omega + DT * (TORQUE_GAIN * a - SPRING * theta - LEG_DAMP * omega);
        let theta_next = theta + DT * omega_next;
        let v_next = v + DT * (DRIVE_GAIN * swing_drive(omega_next) - DRAG * v);
        let x_next = x + DT * v_next;
        (array![x_next, v_next, theta_next, omega_next], reward)
    }
}

pub(super) fn policy(kind: PolicyKind) -> Box<dyn Policy> {
    match kind {
        // Positive velocity feedback pumps the swing to its limit cycle.
        PolicyKind::Expert => Box::new(|s: ArrayView1<f64>, _rng: &mut ChaCha8Rng| {
            array![clip((3.0 * s[3]).tanh(), -1.0, 1.0)]
        }),
        PolicyKind::Medium => Box::new(|s: ArrayView1<f64>, rng: &mut ChaCha8Rng| {
            let dither = rng.random_range(-0.1..0.1);
            array![clip(0.45 * (3.0 * s[3]).tanh() + dither, -1.0, 1.0)]
        }),
        PolicyKind::Random => {
            Box::new(|_s: ArrayView1<f64>, rng: &mut ChaCha8Rng| array![rng.random_range(-1.0..1.0)])
        }
    }
}
