//! Attention-based map-encoding locomotion framework.
//!
//! A desk-scale reinforcement-learning stack for legged locomotion on
//! procedurally generated height-field terrains. The policy encodes a
//! robot-centric map scan with a CNN followed by multi-head attention
//! conditioned on proprioception, and is trained with two-stage PPO
//! (privileged observations first, noisy observations second) under a
//! per-agent terrain difficulty curriculum.
//!
//! Crate layout:
//! - [`tensor`] — dense tensors with reverse-mode automatic differentiation
//! - [`nn`] — weight initialization and small layer containers
//! - [`encoder`] — the attention map encoder and its three ablation variants
//! - [`heads`] — actor/critic MLP heads and the Gaussian action distribution
//! - [`terrain`] — terrain families, difficulty ramps, curriculum, map scans
//! - [`env`] — the kinematic foothold surrogate environment and reward system
//! - [`ppo`] — GAE, clipped-surrogate updates, adaptive LR, stage runner
//! - [`eval`] — episode classification, rate tables, attention export
//! - [`io`] — run configuration and binary checkpoints

pub mod encoder;
pub mod env;
pub mod error;
pub mod eval;
pub mod heads;
pub mod io;
pub mod nn;
pub mod ppo;
pub mod tensor;
pub mod terrain;

pub use error::{Error, Result};
pub use tensor::{Dtype, Graph, Scalar, Tensor, Var};
