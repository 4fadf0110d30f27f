//! Energy-oriented diffusion bridge, desk scale.
//!
//! The crate implements a bridge process whose mean path is the
//! constant-velocity geodesic between a clean state and its degraded
//! observation over a controllable horizon, a closed-form single-step
//! consistency solver for that trajectory, flow-matching pretraining plus
//! continuous-time consistency fine-tuning, baseline trajectories and
//! samplers, synthetic restoration tasks, and a numerical verification suite
//! for the underlying energy propositions.
//!
//! Everything runs on the CPU in `f64`; determinism is end to end given a
//! seed.

pub mod checkpoint;
pub mod energy;
pub mod error;
pub mod numcore;
pub mod solver;
pub mod tasks;
pub mod training;
pub mod trajectory;
pub mod verify;

pub use error::{Error, Result};
pub use numcore::{Denoiser, EpsModel, SeededRng, Tensor};
pub use trajectory::{BridgeBatch, TrajectoryKind, TrajectoryParams};
