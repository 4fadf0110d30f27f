//! Numeric substrate: tensors, seeded randomness, the noise-prediction MLP,
//! and the optimizer step.

pub mod net;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use net::{
    Activation, Denoiser, DenoiserView, EpsModel, Grads, NetParams, OracleEps, ParamSel,
};
pub use optim::{adam_step, OptState};
pub use rng::SeededRng;
pub use tensor::Tensor;
