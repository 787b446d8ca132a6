//! Alternating adversarial training.
//!
//! Each iteration first updates the critics on
//! `L(D_z, D_v) = L_GAN(D_z) + L_GAN(D_v)` (`critic_steps` times), then
//! updates `(E, G, F, H)` once on
//! `L(G, E, F, H) = L_GAN(E) + L_GAN(G) + L_rec(E, G) + L_MSE(F) + L_MSE(H)`.
//! Critics are frozen during the generator update and vice versa.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::losses::{critic_pass, generator_pass, uniform_mix};
use super::{CausalEgm, TreatmentKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Grads, Mode, Real};

/// Loss components of one iteration. Terms switched off by configuration
/// are recorded as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepRecord {
    /// `L_GAN(E) = −mean D_z(E(v))`.
    pub gan_e: f64,
    /// `L_GAN(G) = −mean D_v(G(z))`.
    pub gan_g: f64,
    /// `L_GAN(D_z)`, including its penalty, averaged over critic steps.
    pub critic_z: f64,
    /// `L_GAN(D_v)`, including its penalty, averaged over critic steps.
    pub critic_v: f64,
    pub rec_v: f64,
    pub rec_z: f64,
    pub mse_f: f64,
    pub mse_h: f64,
}

impl StepRecord {
    pub const FIELDS: [&'static str; 8] = [
        "gan_e", "gan_g", "critic_z", "critic_v", "rec_v", "rec_z", "mse_f", "mse_h",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.gan_e,
            self.gan_g,
            self.critic_z,
            self.critic_v,
            self.rec_v,
            self.rec_z,
            self.mse_f,
            self.mse_h,
        ]
    }

    /// `L(G, E, F, H)`.
    pub fn generator_total(&self) -> f64 {
        self.gan_e + self.gan_g + self.rec_v + self.rec_z + self.mse_f + self.mse_h
    }

    /// `L(D_z, D_v)`.
    pub fn critic_total(&self) -> f64 {
        self.critic_z + self.critic_v
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub records: Vec<StepRecord>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

/// Owns the optimizer state and sampling stream for one model.
pub struct Trainer<'a, T: Real> {
    model: &'a mut CausalEgm<T>,
    opt_encoder: AdamState<T>,
    opt_decoder: Option<AdamState<T>>,
    opt_outcome: AdamState<T>,
    opt_treatment: AdamState<T>,
    opt_latent_critic: Option<AdamState<T>>,
    opt_covariate_critic: Option<AdamState<T>>,
    rng: ChaCha8Rng,
    iteration: usize,
}

fn check_finite(value: f64, iteration: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            iteration,
            message: format!("{what} is {value}"),
        })
    }
}

/// Stream offset separating the training sampler from network initialization.
const SAMPLER_STREAM: u64 = 0x5DEE_CE66_D1CE_4E5B;

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(model: &'a mut CausalEgm<T>) -> Self {
        let adam = AdamConfig::with_lr(model.config.lr);
        let opt = |net: &crate::nn::Mlp<T>| AdamState::new(net, adam);
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ SAMPLER_STREAM);
        Self {
            opt_encoder: opt(&model.encoder),
            opt_decoder: model.decoder.as_ref().map(opt),
            opt_outcome: opt(&model.outcome),
            opt_treatment: opt(&model.treatment),
            opt_latent_critic: model.latent_critic.as_ref().map(opt),
            opt_covariate_critic: model.covariate_critic.as_ref().map(opt),
            model,
            rng,
            iteration: 0,
        }
    }

    pub fn model(&self) -> &CausalEgm<T> {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Draw `rows` samples from the standard-normal latent prior.
    pub fn sample_prior(&mut self, rows: usize) -> Array2<T> {
        let q = self.model.config.partition.total();
        let rng = &mut self.rng;
        Array2::from_shape_simple_fn((rows, q), || T::of(rng.sample::<f64, _>(StandardNormal)))
    }

    /// One training iteration on a data batch and a prior batch of equal size.
    pub fn train_step(
        &mut self,
        v: ArrayView2<T>,
        x: ArrayView1<T>,
        y: ArrayView1<T>,
        prior: ArrayView2<T>,
    ) -> Result<StepRecord> {
        let cfg = &self.model.config;
        let n = v.nrows();
        if v.ncols() != cfg.p {
            return Err(Error::shape(format!(
                "batch has {} covariates, model expects {}",
                v.ncols(),
                cfg.p
            )));
        }
        if x.len() != n || y.len() != n || prior.nrows() != n {
            return Err(Error::shape(
                "data batch, treatment, outcome and prior batch must share a row count",
            ));
        }
        if prior.ncols() != cfg.partition.total() {
            return Err(Error::shape(format!(
                "prior batch has width {}, latent dimension is {}",
                prior.ncols(),
                cfg.partition.total()
            )));
        }
        if n < 2 {
            return Err(Error::contract("training batches need at least two rows"));
        }
        let mut record = StepRecord::default();
        if cfg.use_roundtrip {
            let steps = cfg.critic_steps;
            for _ in 0..steps {
                self.critic_step(v, prior, &mut record)?;
            }
            record.critic_z /= steps as f64;
            record.critic_v /= steps as f64;
        }
        self.generator_step(v, x, y, prior, &mut record)?;
        self.iteration += 1;
        Ok(record)
    }

    fn critic_step(
        &mut self,
        v: ArrayView2<T>,
        prior: ArrayView2<T>,
        record: &mut StepRecord,
    ) -> Result<()> {
        let lambda = T::of(self.model.config.lambda);
        let n = v.nrows();
        let model = &mut *self.model;
        let z_fake = model.encoder.forward(v, Mode::Eval)?;
        if let (Some(critic), Some(opt)) = (&mut model.latent_critic, &mut self.opt_latent_critic) {
            let mix = uniform_mix::<T, _>(&mut self.rng, n);
            let mut grads = critic.zero_grads();
            let pass = critic_pass(
                critic,
                prior,
                z_fake.view(),
                lambda,
                mix.view(),
                Some(&mut grads),
            )?;
            let loss = pass.losses.critic.to_f64();
            check_finite(loss, self.iteration, "latent critic loss")?;
            record.critic_z += loss;
            critic.update_running_stats(&pass.tape);
            opt.step(critic, &grads)?;
        }
        if let (Some(critic), Some(opt), Some(decoder)) = (
            &mut model.covariate_critic,
            &mut self.opt_covariate_critic,
            &model.decoder,
        ) {
            let v_fake = decoder.forward(prior, Mode::Eval)?;
            let mix = uniform_mix::<T, _>(&mut self.rng, n);
            let mut grads = critic.zero_grads();
            let pass = critic_pass(
                critic,
                v,
                v_fake.view(),
                lambda,
                mix.view(),
                Some(&mut grads),
            )?;
            let loss = pass.losses.critic.to_f64();
            check_finite(loss, self.iteration, "covariate critic loss")?;
            record.critic_v += loss;
            critic.update_running_stats(&pass.tape);
            opt.step(critic, &grads)?;
        }
        Ok(())
    }

    fn generator_step(
        &mut self,
        v: ArrayView2<T>,
        x: ArrayView1<T>,
        y: ArrayView1<T>,
        prior: ArrayView2<T>,
        record: &mut StepRecord,
    ) -> Result<()> {
        let grads = generator_gradients(self.model, v, x, y, prior, record)?;
        check_finite(record.generator_total(), self.iteration, "generator loss")?;
        let model = &mut *self.model;
        self.opt_encoder.step(&mut model.encoder, &grads.encoder)?;
        self.opt_outcome.step(&mut model.outcome, &grads.outcome)?;
        self.opt_treatment
            .step(&mut model.treatment, &grads.treatment)?;
        if let (Some(decoder), Some(opt), Some(g)) =
            (&mut model.decoder, &mut self.opt_decoder, &grads.decoder)
        {
            opt.step(decoder, g)?;
        }
        Ok(())
    }

    /// Train for `config.iterations` steps on uniformly resampled batches.
    pub fn train(&mut self, data: &Dataset) -> Result<TrainingTrace> {
        let iterations = self.model.config.iterations;
        self.train_for(data, iterations, |_, _| {})
    }

    /// Train for `iterations` steps, calling `observe(iteration, record)`
    /// after each one.
    pub fn train_for(
        &mut self,
        data: &Dataset,
        iterations: usize,
        mut observe: impl FnMut(usize, &StepRecord),
    ) -> Result<TrainingTrace> {
        let cfg = &self.model.config;
        if data.p() != cfg.p {
            return Err(Error::shape(format!(
                "dataset has {} covariates, model expects {}",
                data.p(),
                cfg.p
            )));
        }
        if data.n() < cfg.batch_size {
            return Err(Error::contract(format!(
                "dataset has {} rows, fewer than batch size {}",
                data.n(),
                cfg.batch_size
            )));
        }
        if cfg.treatment_kind == TreatmentKind::Binary && !data.has_binary_treatment() {
            return Err(Error::contract(
                "binary-treatment model requires treatment values in {0, 1}",
            ));
        }
        let batch = cfg.batch_size;
        let v_all: Array2<T> = data.v.mapv(T::of);
        let x_all: Array1<T> = data.x.mapv(T::of);
        let y_all: Array1<T> = data.y.mapv(T::of);
        let mut trace = TrainingTrace {
            records: Vec::with_capacity(iterations),
        };
        let n = data.n();
        for _ in 0..iterations {
            let index: Vec<usize> = (0..batch).map(|_| self.rng.random_range(0..n)).collect();
            let v = v_all.select(Axis(0), &index);
            let x = x_all.select(Axis(0), &index);
            let y = y_all.select(Axis(0), &index);
            let prior = self.sample_prior(batch);
            let record = self.train_step(v.view(), x.view(), y.view(), prior.view())?;
            observe(self.iteration, &record);
            trace.records.push(record);
        }
        Ok(trace)
    }
}

/// Parameter gradients of the generator objective for each network.
#[derive(Debug, Clone)]
pub struct GeneratorGradients<T: Real> {
    pub encoder: Grads<T>,
    pub decoder: Option<Grads<T>>,
    pub outcome: Grads<T>,
    pub treatment: Grads<T>,
}

/// Generator-side loss terms (written into `record`) and their gradients with
/// respect to `E`, `G`, `F` and `H`. Critics are left untouched.
pub(crate) fn generator_gradients<T: Real>(
    model: &CausalEgm<T>,
    v: ArrayView2<T>,
    x: ArrayView1<T>,
    y: ArrayView1<T>,
    prior: ArrayView2<T>,
    record: &mut StepRecord,
) -> Result<GeneratorGradients<T>> {
    let cfg = &model.config;
    let part = cfg.partition;
    let n = v.nrows();
    let inv_n = T::one() / T::of(n as f64);
    let two = T::of(2.0);

    let enc_tape = model.encoder.forward_tape(v, Mode::Train)?;
    let z_hat = enc_tape.output().clone();
    let mut d_z_hat = Array2::<T>::zeros(z_hat.raw_dim());

    let mut g_encoder = model.encoder.zero_grads();
    let mut g_outcome = model.outcome.zero_grads();
    let mut g_treatment = model.treatment.zero_grads();
    let mut g_decoder = model.decoder.as_ref().map(|g| g.zero_grads());

    // Outcome network on [x, z0, z1].
    let f_in = model.outcome_input(x, z_hat.view());
    let f_tape = model.outcome.forward_tape(f_in.view(), Mode::Train)?;
    let f_res = f_tape.output() - &y.insert_axis(Axis(1));
    record.mse_f = (f_res.mapv(|r| r * r).sum() * inv_n).to_f64();
    let d_f_in = model.outcome.backward(
        &f_tape,
        f_res.mapv(|r| two * r * inv_n).view(),
        Some(&mut g_outcome),
    )?;
    let zf = part.q0 + part.q1;
    d_z_hat
        .slice_mut(s![.., 0..zf])
        .scaled_add(T::one(), &d_f_in.slice(s![.., 1..]));

    // Treatment network on [z0, z2].
    let h_in = model.treatment_input(z_hat.view());
    let h_tape = model.treatment.forward_tape(h_in.view(), Mode::Train)?;
    let h_res = h_tape.output() - &x.insert_axis(Axis(1));
    record.mse_h = (h_res.mapv(|r| r * r).sum() * inv_n).to_f64();
    let d_h_in = model.treatment.backward(
        &h_tape,
        h_res.mapv(|r| two * r * inv_n).view(),
        Some(&mut g_treatment),
    )?;
    d_z_hat
        .slice_mut(s![.., part.z0()])
        .scaled_add(T::one(), &d_h_in.slice(s![.., 0..part.q0]));
    d_z_hat
        .slice_mut(s![.., part.z2()])
        .scaled_add(T::one(), &d_h_in.slice(s![.., part.q0..]));

    if let (Some(decoder), Some(g_dec)) = (&model.decoder, g_decoder.as_mut()) {
        // v-reconstruction G(E(v)).
        let rec_tape = decoder.forward_tape(z_hat.view(), Mode::Train)?;
        let v_res = rec_tape.output() - &v;
        record.rec_v = (v_res.mapv(|r| r * r).sum() * inv_n).to_f64();
        let d = decoder.backward(
            &rec_tape,
            v_res.mapv(|r| two * r * inv_n).view(),
            Some(&mut *g_dec),
        )?;
        d_z_hat += &d;

        // Adversarial term for the encoder against D_z.
        if let Some(critic) = &model.latent_critic {
            let (loss, d_fake) = generator_pass(critic, prior, z_hat.view())?;
            record.gan_e = loss.to_f64();
            d_z_hat += &d_fake;
        }

        if cfg.use_z_rec || cfg.use_v_gan {
            let gen_tape = decoder.forward_tape(prior, Mode::Train)?;
            let v_gen = gen_tape.output();
            let mut d_v_gen = Array2::<T>::zeros(v_gen.raw_dim());
            if cfg.use_z_rec {
                let zr_tape = model.encoder.forward_tape(v_gen.view(), Mode::Train)?;
                let z_res = zr_tape.output() - &prior;
                record.rec_z = (z_res.mapv(|r| r * r).sum() * inv_n).to_f64();
                d_v_gen += &model.encoder.backward(
                    &zr_tape,
                    z_res.mapv(|r| two * r * inv_n).view(),
                    Some(&mut g_encoder),
                )?;
            }
            if let Some(critic) = &model.covariate_critic {
                let (loss, d_fake) = generator_pass(critic, v, v_gen.view())?;
                record.gan_g = loss.to_f64();
                d_v_gen += &d_fake;
            }
            decoder.backward(&gen_tape, d_v_gen.view(), Some(g_dec))?;
        }
    }
    model
        .encoder
        .backward(&enc_tape, d_z_hat.view(), Some(&mut g_encoder))?;

    Ok(GeneratorGradients {
        encoder: g_encoder,
        decoder: g_decoder,
        outcome: g_outcome,
        treatment: g_treatment,
    })
}

impl<T: Real> CausalEgm<T> {
    /// Generator-side loss terms on one batch and the gradients of their sum,
    /// `prior` being the draws of `z` paired with the rows of `v`.
    pub fn generator_gradients(
        &self,
        v: ArrayView2<T>,
        x: ArrayView1<T>,
        y: ArrayView1<T>,
        prior: ArrayView2<T>,
    ) -> Result<(StepRecord, GeneratorGradients<T>)> {
        let mut record = StepRecord::default();
        let grads = generator_gradients(self, v, x, y, prior, &mut record)?;
        Ok((record, grads))
    }

    /// Train in place with the model's own configuration.
    pub fn fit(&mut self, data: &Dataset) -> Result<TrainingTrace> {
        Trainer::new(self).train(data)
    }
}
