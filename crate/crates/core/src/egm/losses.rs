//! Loss terms of the generator side `L(G, E, F, H)` and the critic side
//! `L(D_z, D_v)`. All expectations are batch means.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::CausalEgm;
use crate::error::{Error, Result};
use crate::nn::{Grads, Mlp, Mode, Real, Tape};

/// Wasserstein losses of one generator/critic pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLosses<T> {
    /// `−mean D(fake)`.
    pub generator: T,
    /// `−mean D(real) + mean D(fake) + λ · penalty`.
    pub critic: T,
    /// `mean (||∇D(x̂)||₂ − 1)²` over interpolates, before scaling by λ.
    pub penalty: T,
}

pub(crate) struct CriticPass<T> {
    pub losses: GanLosses<T>,
    pub tape: Tape<T>,
}

fn check_pair<T: Real>(real: &ArrayView2<T>, fake: &ArrayView2<T>) -> Result<()> {
    if real.nrows() == 0 || fake.nrows() == 0 {
        return Err(Error::contract("critic batches must be non-empty"));
    }
    if real.dim() != fake.dim() {
        return Err(Error::shape(format!(
            "real batch {:?} and fake batch {:?} must be paired",
            real.dim(),
            fake.dim()
        )));
    }
    Ok(())
}

/// Points `u_i · real_i + (1 − u_i) · fake_i` on the segments between pairs.
pub(crate) fn interpolate<T: Real>(
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
    mix: ArrayView1<T>,
) -> Array2<T> {
    let mut out = fake.to_owned();
    Zip::from(out.rows_mut())
        .and(real.rows())
        .and(&mix)
        .for_each(|mut o, r, &u| {
            Zip::from(&mut o)
                .and(&r)
                .for_each(|o, &r| *o = u * r + (T::one() - u) * *o);
        });
    out
}

/// Critic loss with optional gradient accumulation.
///
/// The critic scores the stacked batch `[real; fake]` in train mode, so batch
/// statistics are shared by both halves. The penalty runs on interpolates
/// with batch norm in eval mode, which keeps it a per-sample quantity.
pub(crate) fn critic_pass<T: Real>(
    critic: &Mlp<T>,
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
    lambda: T,
    mix: ArrayView1<T>,
    grads: Option<&mut Grads<T>>,
) -> Result<CriticPass<T>> {
    check_pair(&real, &fake)?;
    if mix.len() != real.nrows() {
        return Err(Error::shape(format!(
            "{} interpolation weights for {} pairs",
            mix.len(),
            real.nrows()
        )));
    }
    let n = real.nrows();
    let stacked = concatenate(Axis(0), &[real, fake]).expect("same width");
    let tape = critic.forward_tape(stacked.view(), Mode::Train)?;
    let out = tape.output();
    let inv_n = T::one() / T::of(n as f64);
    let mean_real = out.slice(s![..n, 0]).sum() * inv_n;
    let mean_fake = out.slice(s![n.., 0]).sum() * inv_n;
    let hat = interpolate(real, fake, mix);
    let penalty = match grads {
        Some(g) => {
            let mut d_out = Array2::zeros((2 * n, 1));
            d_out.slice_mut(s![..n, 0]).fill(-inv_n);
            d_out.slice_mut(s![n.., 0]).fill(inv_n);
            critic.backward(&tape, d_out.view(), Some(&mut *g))?;
            critic.gradient_penalty(hat.view(), lambda, Some(g))?
        }
        None => critic.gradient_penalty(hat.view(), lambda, None)?,
    };
    Ok(CriticPass {
        losses: GanLosses {
            generator: -mean_fake,
            critic: -mean_real + mean_fake + lambda * penalty,
            penalty,
        },
        tape,
    })
}

/// Generator-side adversarial loss `−mean D(fake)` and its gradient w.r.t.
/// the fake rows; the critic is frozen.
pub(crate) fn generator_pass<T: Real>(
    critic: &Mlp<T>,
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
) -> Result<(T, Array2<T>)> {
    check_pair(&real, &fake)?;
    let n = real.nrows();
    let stacked = concatenate(Axis(0), &[real, fake]).expect("same width");
    let tape = critic.forward_tape(stacked.view(), Mode::Train)?;
    let inv_n = T::one() / T::of(n as f64);
    let loss = -tape.output().slice(s![n.., 0]).sum() * inv_n;
    let mut d_out = Array2::zeros((2 * n, 1));
    d_out.slice_mut(s![n.., 0]).fill(-inv_n);
    let d_in = critic.backward(&tape, d_out.view(), None)?;
    Ok((loss, d_in.slice(s![n.., ..]).to_owned()))
}

/// Generator and critic losses of one adversarial pair for the given
/// interpolation weights `mix` (one per real/fake pair, in `[0, 1]`).
pub fn gan_pair_losses<T: Real>(
    critic: &Mlp<T>,
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
    lambda: T,
    mix: ArrayView1<T>,
) -> Result<GanLosses<T>> {
    Ok(critic_pass(critic, real, fake, lambda, mix, None)?.losses)
}

/// [`gan_pair_losses`] together with the parameter gradient of the critic
/// loss, penalty included.
pub fn critic_gradients<T: Real>(
    critic: &Mlp<T>,
    real: ArrayView2<T>,
    fake: ArrayView2<T>,
    lambda: T,
    mix: ArrayView1<T>,
) -> Result<(GanLosses<T>, Grads<T>)> {
    let mut grads = critic.zero_grads();
    let pass = critic_pass(critic, real, fake, lambda, mix, Some(&mut grads))?;
    Ok((pass.losses, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionLoss<T> {
    /// `mean_i ||v_i − G(E(v_i))||²`.
    pub v_term: T,
    /// `mean_i ||z_i − E(G(z_i))||²`, present only with latent reconstruction.
    pub z_term: Option<T>,
}

impl<T: Real> ReconstructionLoss<T> {
    pub fn total(&self) -> T {
        self.v_term + self.z_term.unwrap_or_else(T::zero)
    }
}

/// Mean over rows of the squared Euclidean distance between `a` and `b`.
pub(crate) fn mean_sq_distance<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> T {
    let n = T::of(a.nrows() as f64);
    Zip::from(&a)
        .and(&b)
        .fold(T::zero(), |acc, &x, &y| acc + (x - y) * (x - y))
        / n
}

/// Roundtrip reconstruction loss; `z` should be a draw from the latent prior.
pub fn reconstruction_loss<T: Real>(
    model: &CausalEgm<T>,
    v: ArrayView2<T>,
    z: ArrayView2<T>,
) -> Result<ReconstructionLoss<T>> {
    let decoder = model
        .decoder()
        .ok_or_else(|| Error::contract("reconstruction loss needs the roundtrip decoder"))?;
    let encoder = model.encoder();
    let v_rec = decoder.forward(encoder.forward(v, Mode::Eval)?.view(), Mode::Eval)?;
    let v_term = mean_sq_distance(v, v_rec.view());
    let z_term = if model.config().use_z_rec {
        let z_rec = encoder.forward(decoder.forward(z, Mode::Eval)?.view(), Mode::Eval)?;
        Some(mean_sq_distance(z, z_rec.view()))
    } else {
        None
    };
    Ok(ReconstructionLoss { v_term, z_term })
}

/// `(mean (y − F(x, z0, z1))², mean (x − H(z0, z2))²)`.
pub fn supervised_losses<T: Real>(
    model: &CausalEgm<T>,
    x: ArrayView1<T>,
    y: ArrayView1<T>,
    z0: ArrayView2<T>,
    z1: ArrayView2<T>,
    z2: ArrayView2<T>,
) -> Result<(T, T)> {
    let n = x.len();
    if y.len() != n || z0.nrows() != n || z1.nrows() != n || z2.nrows() != n {
        return Err(Error::shape("supervised losses need equal batch sizes"));
    }
    let x_col = x.insert_axis(Axis(1));
    let f_in = concatenate(Axis(1), &[x_col, z0, z1]).map_err(|e| Error::shape(e.to_string()))?;
    let h_in = concatenate(Axis(1), &[z0, z2]).map_err(|e| Error::shape(e.to_string()))?;
    let f_out = model.outcome_net().forward(f_in.view(), Mode::Eval)?;
    let h_out = model.treatment_net().forward(h_in.view(), Mode::Eval)?;
    let loss_f = mean_sq_distance(y.insert_axis(Axis(1)), f_out.view());
    let loss_h = mean_sq_distance(x_col, h_out.view());
    Ok((loss_f, loss_h))
}

/// Per-row `u ~ Uniform(0, 1)` interpolation weights.
pub(crate) fn uniform_mix<T: Real, R: rand::Rng>(rng: &mut R, n: usize) -> Array1<T> {
    Array1::from_shape_simple_fn(n, || T::of(rng.random::<f64>()))
}
