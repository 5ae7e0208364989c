//! Preference-based RL workbench.
//!
//! Learns a latent representation of preferred trajectories with a two-stage
//! contrastive set encoder and assigns rewards by cosine similarity to that
//! latent, then feeds those rewards into offline (expectile Q-learning) and
//! online (deterministic actor-critic) policy learning. Ships Bradley-Terry
//! baselines with adaptive denoising, noisy-label protocols, latent-space
//! trajectory filtering, cross-morphology preference transfer, synthetic
//! continuous-control environments, and the evaluation statistics used to
//! report results.

pub mod baselines;
pub mod data;
pub mod encoder;
pub mod eval;
pub mod envs;
pub mod nn;
pub mod error;
pub mod par;
pub mod reward;
pub mod rl;
pub mod rng;

pub use error::{Error, Result};
