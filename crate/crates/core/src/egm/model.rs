use ndarray::{concatenate, s, Array2, ArrayView1, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, TreatmentKind};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, Mode, OutputActivation, Real};

/// Latent codes of a batch, split by partition block.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent<T> {
    pub z0: Array2<T>,
    pub z1: Array2<T>,
    pub z2: Array2<T>,
    pub z3: Array2<T>,
}

impl<T: Real> Latent<T> {
    /// Concatenate the blocks back into the full code.
    pub fn joined(&self) -> Array2<T> {
        concatenate(
            Axis(1),
            &[
                self.z0.view(),
                self.z1.view(),
                self.z2.view(),
                self.z3.view(),
            ],
        )
        .expect("blocks share row count")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalEgm<T> {
    pub(crate) config: ModelConfig,
    pub(crate) encoder: Mlp<T>,
    pub(crate) decoder: Option<Mlp<T>>,
    pub(crate) outcome: Mlp<T>,
    pub(crate) treatment: Mlp<T>,
    pub(crate) latent_critic: Option<Mlp<T>>,
    pub(crate) covariate_critic: Option<Mlp<T>>,
}

impl<T: Real> CausalEgm<T> {
    /// Initialize all networks from `config.seed`.
    ///
    /// Without the roundtrip module the decoder and both critics are absent;
    /// without the covariate GAN only `D_v` is absent.
    pub fn build(config: ModelConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let q = config.partition.total();
        let slope = config.leaky_slope;
        let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
        let mut next_seed = || seeds.next_u64();
        let (e_seed, g_seed, f_seed, h_seed, dz_seed, dv_seed) = (
            next_seed(),
            next_seed(),
            next_seed(),
            next_seed(),
            next_seed(),
            next_seed(),
        );

        let encoder = Mlp::init(
            MlpSpec::chain(config.p, &config.encoder_hidden, q).with_slope(slope),
            e_seed,
        )?;
        let outcome = Mlp::init(
            MlpSpec::chain(config.outcome_input_dim(), &config.outcome_hidden, 1).with_slope(slope),
            f_seed,
        )?;
        let treatment_output = match config.treatment_kind {
            TreatmentKind::Continuous => OutputActivation::Linear,
            TreatmentKind::Binary => OutputActivation::Sigmoid,
        };
        let treatment = Mlp::init(
            MlpSpec::chain(config.treatment_input_dim(), &config.treatment_hidden, 1)
                .with_slope(slope)
                .with_output(treatment_output),
            h_seed,
        )?;
        let critic = |input: usize, seed: u64| {
            Mlp::init(
                MlpSpec::chain(input, &config.critic_hidden, 1)
                    .with_slope(slope)
                    .with_batch_norm(config.critic_batch_norm),
                seed,
            )
        };
        let (decoder, latent_critic, covariate_critic) = if config.use_roundtrip {
            let decoder = Mlp::init(
                MlpSpec::chain(q, &config.decoder_hidden, config.p).with_slope(slope),
                g_seed,
            )?;
            let dv = if config.use_v_gan {
                Some(critic(config.p, dv_seed)?)
            } else {
                None
            };
            (Some(decoder), Some(critic(q, dz_seed)?), dv)
        } else {
            (None, None, None)
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            outcome,
            treatment,
            latent_critic,
            covariate_critic,
        })
    }

    /// Assemble a model from explicit networks, checking every dimension
    /// against the configuration.
    pub fn from_parts(
        config: ModelConfig,
        encoder: Mlp<T>,
        decoder: Option<Mlp<T>>,
        outcome: Mlp<T>,
        treatment: Mlp<T>,
        latent_critic: Option<Mlp<T>>,
        covariate_critic: Option<Mlp<T>>,
    ) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let q = config.partition.total();
        let dims = |name: &str, net: &Mlp<T>, input: usize, output: usize| {
            if net.input_dim() != input || net.output_dim() != output {
                Err(Error::config(format!(
                    "{name} maps {}→{}, partition requires {input}→{output}",
                    net.input_dim(),
                    net.output_dim()
                )))
            } else {
                Ok(())
            }
        };
        dims("encoder", &encoder, config.p, q)?;
        dims("outcome network", &outcome, config.outcome_input_dim(), 1)?;
        dims(
            "treatment network",
            &treatment,
            config.treatment_input_dim(),
            1,
        )?;
        let want_sigmoid = config.treatment_kind == TreatmentKind::Binary;
        let has_sigmoid = treatment.spec().output_activation == OutputActivation::Sigmoid;
        if want_sigmoid != has_sigmoid {
            return Err(Error::config(
                "treatment network output must be sigmoid exactly for binary treatment",
            ));
        }
        let presence = |name: &str, net: &Option<Mlp<T>>, wanted: bool| {
            if net.is_some() != wanted {
                Err(Error::config(format!(
                    "{name} presence does not match configuration flags"
                )))
            } else {
                Ok(())
            }
        };
        presence("decoder", &decoder, config.use_roundtrip)?;
        presence("latent critic", &latent_critic, config.use_roundtrip)?;
        presence("covariate critic", &covariate_critic, config.use_v_gan)?;
        if let Some(g) = &decoder {
            dims("decoder", g, q, config.p)?;
        }
        if let Some(d) = &latent_critic {
            dims("latent critic", d, q, 1)?;
        }
        if let Some(d) = &covariate_critic {
            dims("covariate critic", d, config.p, 1)?;
        }
        Ok(Self {
            config,
            encoder,
            decoder,
            outcome,
            treatment,
            latent_critic,
            covariate_critic,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Mlp<T> {
        &self.encoder
    }

    pub fn decoder(&self) -> Option<&Mlp<T>> {
        self.decoder.as_ref()
    }

    pub fn outcome_net(&self) -> &Mlp<T> {
        &self.outcome
    }

    pub fn treatment_net(&self) -> &Mlp<T> {
        &self.treatment
    }

    pub fn latent_critic(&self) -> Option<&Mlp<T>> {
        self.latent_critic.as_ref()
    }

    pub fn covariate_critic(&self) -> Option<&Mlp<T>> {
        self.covariate_critic.as_ref()
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp<T> {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> Option<&mut Mlp<T>> {
        self.decoder.as_mut()
    }

    pub fn outcome_net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.outcome
    }

    pub fn treatment_net_mut(&mut self) -> &mut Mlp<T> {
        &mut self.treatment
    }

    /// Full latent code `E(v)`.
    pub fn encode_full(&self, v: ArrayView2<T>) -> Result<Array2<T>> {
        self.encoder.forward(v, Mode::Eval)
    }

    /// `E(v)` split into `(z0, z1, z2, z3)`.
    pub fn encode(&self, v: ArrayView2<T>) -> Result<Latent<T>> {
        let z = self.encode_full(v)?;
        Ok(self.split(z.view()))
    }

    pub fn split(&self, z: ArrayView2<T>) -> Latent<T> {
        let p = &self.config.partition;
        Latent {
            z0: z.slice(s![.., p.z0()]).to_owned(),
            z1: z.slice(s![.., p.z1()]).to_owned(),
            z2: z.slice(s![.., p.z2()]).to_owned(),
            z3: z.slice(s![.., p.z3()]).to_owned(),
        }
    }

    /// Rows `[x, z0, z1]` for the outcome network, taken from full codes `z`.
    pub fn outcome_input(&self, x: ArrayView1<T>, z: ArrayView2<T>) -> Array2<T> {
        let p = &self.config.partition;
        let mut input = Array2::zeros((z.nrows(), self.config.outcome_input_dim()));
        input.column_mut(0).assign(&x);
        input
            .slice_mut(s![.., 1..])
            .assign(&z.slice(s![.., 0..p.q0 + p.q1]));
        input
    }

    /// Rows `[z0, z2]` for the treatment network, taken from full codes `z`.
    pub fn treatment_input(&self, z: ArrayView2<T>) -> Array2<T> {
        let p = &self.config.partition;
        concatenate(Axis(1), &[z.slice(s![.., p.z0()]), z.slice(s![.., p.z2()])])
            .expect("same row count")
    }

    /// `F(x, z0, z1)` for each row.
    pub fn predict_outcome(&self, x: ArrayView1<T>, z: ArrayView2<T>) -> Result<Array2<T>> {
        if x.len() != z.nrows() {
            return Err(Error::shape(format!(
                "{} treatment values for {} latent rows",
                x.len(),
                z.nrows()
            )));
        }
        self.outcome
            .forward(self.outcome_input(x, z).view(), Mode::Eval)
    }

    /// `H(z0, z2)` for each row.
    pub fn predict_treatment(&self, z: ArrayView2<T>) -> Result<Array2<T>> {
        self.treatment
            .forward(self.treatment_input(z).view(), Mode::Eval)
    }
}
