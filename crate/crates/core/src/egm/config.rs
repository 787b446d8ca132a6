use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::DEFAULT_LEAKY_SLOPE;

/// Dimensions of the latent blocks `(Z0, Z1, Z2, Z3)`.
///
/// `Z0` feeds both the outcome and treatment networks, `Z1` only the outcome
/// network, `Z2` only the treatment network, and `Z3` is used for
/// reconstruction alone. Blocks are contiguous in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentPartition {
    pub q0: usize,
    pub q1: usize,
    pub q2: usize,
    pub q3: usize,
}

impl LatentPartition {
    pub fn new(q0: usize, q1: usize, q2: usize, q3: usize) -> Result<Self> {
        let p = Self { q0, q1, q2, q3 };
        p.validate()?;
        Ok(p)
    }

    /// `(k, k, k, 7k)`, the continuous-treatment family.
    pub fn continuous_default(k: usize) -> Self {
        Self {
            q0: k,
            q1: k,
            q2: k,
            q3: 7 * k,
        }
    }

    /// `(k, k, 2k, 2k)`, the binary-treatment family.
    pub fn binary_default(k: usize) -> Self {
        Self {
            q0: k,
            q1: k,
            q2: 2 * k,
            q3: 2 * k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q0 == 0 {
            return Err(Error::config("latent block Z0 must have dimension >= 1"));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.q0 + self.q1 + self.q2 + self.q3
    }

    pub fn z0(&self) -> Range<usize> {
        0..self.q0
    }

    pub fn z1(&self) -> Range<usize> {
        self.q0..self.q0 + self.q1
    }

    pub fn z2(&self) -> Range<usize> {
        let start = self.q0 + self.q1;
        start..start + self.q2
    }

    pub fn z3(&self) -> Range<usize> {
        let start = self.q0 + self.q1 + self.q2;
        start..start + self.q3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TreatmentKind {
    Continuous,
    Binary,
}

impl TreatmentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TreatmentKind::Continuous => "continuous",
            TreatmentKind::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(TreatmentKind::Continuous),
            "binary" => Ok(TreatmentKind::Binary),
            other => Err(Error::config(format!(
                "treatment kind must be continuous or binary, got {other:?}"
            ))),
        }
    }

    pub fn default_partition(self) -> LatentPartition {
        match self {
            TreatmentKind::Continuous => LatentPartition::continuous_default(1),
            TreatmentKind::Binary => LatentPartition::binary_default(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Covariate dimension.
    pub p: usize,
    pub partition: LatentPartition,
    pub treatment_kind: TreatmentKind,
    /// Hidden widths of the encoder `E`.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the decoder `G`.
    pub decoder_hidden: Vec<usize>,
    /// Hidden widths of the outcome network `F`.
    pub outcome_hidden: Vec<usize>,
    /// Hidden widths of the treatment network `H`.
    pub treatment_hidden: Vec<usize>,
    /// Hidden widths of both critics.
    pub critic_hidden: Vec<usize>,
    pub critic_batch_norm: bool,
    pub leaky_slope: f64,
    /// Gradient-penalty coefficient.
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub critic_steps: usize,
    pub use_roundtrip: bool,
    pub use_v_gan: bool,
    pub use_z_rec: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Default architecture and optimizer settings for `p` covariates.
    pub fn new(p: usize, treatment_kind: TreatmentKind) -> Self {
        Self {
            p,
            partition: treatment_kind.default_partition(),
            treatment_kind,
            encoder_hidden: vec![64; 4],
            decoder_hidden: vec![64; 4],
            outcome_hidden: vec![64; 4],
            treatment_hidden: vec![64; 4],
            critic_hidden: vec![64, 32, 8],
            critic_batch_norm: true,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            lambda: 10.0,
            lr: 2e-4,
            batch_size: 32,
            iterations: 30_000,
            critic_steps: 1,
            use_roundtrip: true,
            use_v_gan: true,
            use_z_rec: true,
            seed: 0,
        }
    }

    pub fn with_partition(mut self, partition: LatentPartition) -> Self {
        self.partition = partition;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    /// Apply forced flag implications: without the roundtrip module there is
    /// no decoder and no critic, so the covariate GAN and latent
    /// reconstruction terms are off as well.
    pub fn normalized(mut self) -> Self {
        if !self.use_roundtrip {
            self.use_v_gan = false;
            self.use_z_rec = false;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        if self.p == 0 {
            return Err(Error::config("covariate dimension p must be >= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if self.critic_steps == 0 {
            return Err(Error::config("critic_steps must be >= 1"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::config(format!(
                "leaky_slope must lie in (0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Input width of the outcome network: treatment plus `Z0` and `Z1`.
    pub fn outcome_input_dim(&self) -> usize {
        1 + self.partition.q0 + self.partition.q1
    }

    /// Input width of the treatment network: `Z0` and `Z2`.
    pub fn treatment_input_dim(&self) -> usize {
        self.partition.q0 + self.partition.q2
    }
}
