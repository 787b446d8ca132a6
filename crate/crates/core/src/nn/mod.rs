//! Minimal differentiable network layer used by every model in the crate.

mod adam;
pub(crate) mod io;
mod mlp;
mod real;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{
    Activation, BatchNorm, Dense, Grads, LayerGrads, Mlp, MlpSpec, Mode, OutputActivation, Tape,
    BN_EPS, BN_MOMENTUM, DEFAULT_LEAKY_SLOPE,
};
pub use real::Real;

#[cfg(test)]
mod tests;
