//! The CausalEGM model: encoder `E`, decoder `G`, outcome network `F`,
//! treatment network `H` and the two critics `D_z`, `D_v` over a partitioned
//! latent space.

mod config;
mod losses;
mod model;
mod persist;
mod train;

pub use config::{LatentPartition, ModelConfig, TreatmentKind};
pub use losses::{
    critic_gradients, gan_pair_losses, reconstruction_loss, supervised_losses, GanLosses,
    ReconstructionLoss,
};
pub use model::{CausalEgm, Latent};
pub use train::{GeneratorGradients, StepRecord, Trainer, TrainingTrace};
