//! CausalEGM: an encoding generative model for estimating causal effects of
//! continuous and binary treatments from high-dimensional covariates.
//!
//! Covariates `V` are encoded into a latent vector `Z = (Z0, Z1, Z2, Z3)`
//! whose distribution is pushed towards a standard normal by adversarial
//! training, while an outcome network `F(x, z0, z1)` and a treatment network
//! `H(z0, z2)` are fit on the encoded features. The average dose-response
//! is then estimated as `μ̂(x) = mean_i F(x, z0_i, z1_i)`.

pub mod baselines;
pub mod data;
pub mod datagen;
pub mod egm;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod runner;

pub use error::{Error, Result};
