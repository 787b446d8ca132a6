//! Synthetic data with known ground truth.
//!
//! Every generator is a pure function of its arguments and seed. Rows are
//! drawn one unit at a time (covariates, then treatment, then outcome), so a
//! dataset of `n` rows is a prefix of the dataset of `n + 1` rows.

mod appendix_b;

pub use appendix_b::{
    eigenvalue, gen_appendix_b, run_appendix_b_experiment, run_appendix_b_with,
    theoretical_rec_error, AppendixBConfig, AppendixBDesign, AppendixBReport, Checkpoint,
    APPENDIX_B_P, APPENDIX_B_Q, REPORTED_DELTA, REPORTED_HELDOUT_MIN, REPORTED_REC_ERROR,
    REPORTED_VARIANCE_SHARE,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Effect size used when the constant-effect generator is picked by name.
pub const DEFAULT_TAU: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Hirano,
    Sun,
    Colangelo,
    Twins,
    ConstantEffect,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Hirano,
        DatasetKind::Sun,
        DatasetKind::Colangelo,
        DatasetKind::Twins,
        DatasetKind::ConstantEffect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Hirano => "hirano",
            DatasetKind::Sun => "sun",
            DatasetKind::Colangelo => "colangelo",
            DatasetKind::Twins => "twins",
            DatasetKind::ConstantEffect => "constant_effect",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown dataset kind {s:?}; expected one of hirano, sun, colangelo, twins, constant_effect"
                ))
            })
    }

    pub fn is_binary(self) -> bool {
        self == DatasetKind::ConstantEffect
    }

    /// Smallest covariate dimension the generator accepts.
    pub fn min_p(self) -> usize {
        match self {
            DatasetKind::Hirano => 3,
            DatasetKind::Sun => 6,
            DatasetKind::Colangelo | DatasetKind::Twins | DatasetKind::ConstantEffect => 1,
        }
    }
}

/// Closed-form average dose-response `μ(x) = E[Y(x)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdrfOracle {
    /// `x + 2/(1 + x)³`.
    Hirano,
    /// `x + 0.5 + e^{−0.5}`.
    Sun,
    /// `1.2x + x³`.
    Colangelo,
    /// `−2/(1 + e^{−3x}) + offset`, with `offset` the sample mean of `vγ`.
    Twins { offset: f64 },
    /// `τx`.
    ConstantEffect { tau: f64 },
}

impl AdrfOracle {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            AdrfOracle::Hirano => x + 2.0 / (1.0 + x).powi(3),
            AdrfOracle::Sun => x + 0.5 + (-0.5f64).exp(),
            AdrfOracle::Colangelo => 1.2 * x + x.powi(3),
            AdrfOracle::Twins { offset } => -2.0 / (1.0 + (-3.0 * x).exp()) + offset,
            AdrfOracle::ConstantEffect { tau } => tau * x,
        }
    }

    pub fn curve(&self, xs: &[f64]) -> Array1<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

/// Both potential outcomes of every unit (binary generators only).
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Array1<f64>,
    pub y1: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: Dataset,
    pub kind: DatasetKind,
    pub seed: u64,
    pub oracle: AdrfOracle,
    pub potential: Option<PotentialOutcomes>,
    /// Outcome coefficients `γ` of the Twins-style simulator.
    pub gamma: Option<Array1<f64>>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn check_p(kind: DatasetKind, p: usize) -> Result<()> {
    if p < kind.min_p() {
        return Err(Error::config(format!(
            "{} data needs p >= {}, got {p}",
            kind.as_str(),
            kind.min_p()
        )));
    }
    Ok(())
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn sun_f(k: usize, u: f64) -> f64 {
    match k {
        1 => -2.0 * (2.0 * u).sin(),
        2 => u * u - 1.0 / 3.0,
        3 => u - 0.5,
        4 => u.cos(),
        5 => u * u,
        6 => u,
        _ => unreachable!("f_{k} is not defined"),
    }
}

/// Index weights `θⱼ = 1/j²` of the Colangelo-Lee design.
pub fn colangelo_theta(p: usize) -> Array1<f64> {
    Array1::from_shape_fn(p, |j| 1.0 / ((j + 1) * (j + 1)) as f64)
}

/// Lower bidiagonal Cholesky factor of the tridiagonal covariance with unit
/// diagonal and 0.5 off the diagonal: returns `(diag, sub)` with
/// `V₁ = diag₀ W₁`, `Vⱼ = subⱼ W_{j−1} + diagⱼ Wⱼ`.
fn colangelo_cholesky(p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut diag = vec![1.0f64; p];
    let mut sub = vec![0.0; p];
    for j in 1..p {
        sub[j] = 0.5 / diag[j - 1];
        diag[j] = (1.0 - sub[j] * sub[j]).sqrt();
    }
    (diag, sub)
}

/// Outcome mean and noise scale for a unit with covariates `v` at treatment
/// `x`, i.e. the structural equation `Y(x) = m(x, v) + s·ε`.
fn outcome_mean(
    kind: DatasetKind,
    v: ArrayView1<f64>,
    x: f64,
    extra: &OutcomeParams,
) -> (f64, f64) {
    match kind {
        DatasetKind::Hirano => {
            let s = v[0] + v[2];
            (x + s * (-x * s).exp(), 1.0)
        }
        DatasetKind::Sun => (
            x + sun_f(3, v[0]) + sun_f(4, v[1]) + sun_f(5, v[4]) + sun_f(6, v[5]),
            1.0,
        ),
        DatasetKind::Colangelo => {
            let index = v.dot(&extra.theta);
            (1.2 * x + 1.2 * index + x.powi(3) + x * v[0], 1.0)
        }
        DatasetKind::Twins => (-2.0 * sigmoid(3.0 * x) + v.dot(&extra.gamma), 0.25),
        DatasetKind::ConstantEffect => (extra.tau * x + v[0], 0.5),
    }
}

#[derive(Debug, Clone, Default)]
struct OutcomeParams {
    theta: Array1<f64>,
    gamma: Array1<f64>,
    tau: f64,
}

impl SyntheticDataset {
    fn params(&self) -> OutcomeParams {
        let p = self.data.p();
        OutcomeParams {
            theta: if self.kind == DatasetKind::Colangelo {
                colangelo_theta(p)
            } else {
                Array1::zeros(0)
            },
            gamma: self.gamma.clone().unwrap_or_else(|| Array1::zeros(0)),
            tau: match self.oracle {
                AdrfOracle::ConstantEffect { tau } => tau,
                _ => 0.0,
            },
        }
    }

    /// Fresh draws of the potential outcomes `Y(xᵢ)` at treatments `x`
    /// chosen by the caller, keeping each unit's covariates: the outcome
    /// equation under an intervention that sets the treatment.
    pub fn intervene(&self, x: ArrayView1<f64>, seed: u64) -> Result<Array1<f64>> {
        if x.len() != self.data.n() {
            return Err(Error::shape(format!(
                "{} treatments for {} units",
                x.len(),
                self.data.n()
            )));
        }
        let params = self.params();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Array1::from_shape_fn(self.data.n(), |i| {
            let (m, s) = outcome_mean(self.kind, self.data.v.row(i), x[i], &params);
            m + s * normal(&mut rng)
        }))
    }
}

/// `V` iid unit exponential, `X | V ~ Exponential(rate V₁ + V₂)`,
/// `Y ~ N(x + (V₁+V₃)·exp(−x(V₁+V₃)), 1)`.
pub fn gen_hirano(n: usize, p: usize, seed: u64) -> Result<SyntheticDataset> {
    check_p(DatasetKind::Hirano, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::zeros((n, p));
    let mut x = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let params = OutcomeParams::default();
    for i in 0..n {
        for j in 0..p {
            v[[i, j]] = rng.sample::<f64, _>(Exp1);
        }
        let e: f64 = rng.sample(Exp1);
        x[i] = e / (v[[i, 0]] + v[[i, 1]]);
        let (m, s) = outcome_mean(DatasetKind::Hirano, v.row(i), x[i], &params);
        y[i] = m + s * normal(&mut rng);
    }
    finish(
        v,
        x,
        y,
        DatasetKind::Hirano,
        seed,
        AdrfOracle::Hirano,
        None,
        None,
    )
}

/// `V` iid N(0,1), `X ~ N(f₁(V₁)+f₂(V₂)+f₃(V₃)+f₄(V₄), 1)`,
/// `Y ~ N(X + f₃(V₁)+f₄(V₂)+f₅(V₅)+f₆(V₆), 1)`.
pub fn gen_sun(n: usize, p: usize, seed: u64) -> Result<SyntheticDataset> {
    check_p(DatasetKind::Sun, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::zeros((n, p));
    let mut x = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let params = OutcomeParams::default();
    for i in 0..n {
        for j in 0..p {
            v[[i, j]] = normal(&mut rng);
        }
        let m: f64 = (1..=4).map(|k| sun_f(k, v[[i, k - 1]])).sum();
        x[i] = m + normal(&mut rng);
        let (m, s) = outcome_mean(DatasetKind::Sun, v.row(i), x[i], &params);
        y[i] = m + s * normal(&mut rng);
    }
    finish(v, x, y, DatasetKind::Sun, seed, AdrfOracle::Sun, None, None)
}

/// `V ~ N(0, Σ)` with unit diagonal and 0.5 next to it,
/// `X = Φ(3V'θ) + 0.75ε₁ − 0.5`, `Y = 1.2X + 1.2V'θ + X³ + X·V₁ + ε₂`.
pub fn gen_colangelo(n: usize, p: usize, seed: u64) -> Result<SyntheticDataset> {
    check_p(DatasetKind::Colangelo, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (diag, sub) = colangelo_cholesky(p);
    let params = OutcomeParams {
        theta: colangelo_theta(p),
        ..Default::default()
    };
    let mut v = Array2::zeros((n, p));
    let mut x = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let mut w = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            w[j] = normal(&mut rng);
            v[[i, j]] = diag[j] * w[j] + if j > 0 { sub[j] * w[j - 1] } else { 0.0 };
        }
        let index = v.row(i).dot(&params.theta);
        x[i] = normal_cdf(3.0 * index) + 0.75 * normal(&mut rng) - 0.5;
        let (m, s) = outcome_mean(DatasetKind::Colangelo, v.row(i), x[i], &params);
        y[i] = m + s * normal(&mut rng);
    }
    finish(
        v,
        x,
        y,
        DatasetKind::Colangelo,
        seed,
        AdrfOracle::Colangelo,
        None,
        None,
    )
}

/// Stand-in treatment when no observed treatment is supplied to the Twins
/// simulator: `X = 1.2 + 0.3·(V₁+V₂)/√2 + 0.2η` (a single covariate is used
/// alone when `p = 1`).
fn twins_treatment(v: ArrayView1<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let index = if v.len() >= 2 {
        (v[0] + v[1]) / std::f64::consts::SQRT_2
    } else {
        v[0]
    };
    1.2 + 0.3 * index + 0.2 * normal(rng)
}

/// Twins-style outcome simulation `R(x) = −2/(1+e^{−3x}) + vγ + ε` with
/// `γⱼ ~ N(0, 0.025²)` and `ε ~ N(0, 0.25²)`.
///
/// `covariates` and `treatment` may come from real records; when absent,
/// covariates are iid N(0,1) (`n × p`) and the treatment is simulated from
/// them.
pub fn gen_twins_style(
    covariates: Option<ArrayView2<f64>>,
    treatment: Option<ArrayView1<f64>>,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<SyntheticDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = match covariates {
        Some(c) => {
            if c.iter().any(|e| !e.is_finite()) {
                return Err(Error::InvalidData("non-finite covariate".into()));
            }
            c.to_owned()
        }
        None => {
            check_p(DatasetKind::Twins, p)?;
            Array2::from_shape_simple_fn((n, p), || normal(&mut rng))
        }
    };
    let (n, p) = v.dim();
    let gamma = Array1::from_shape_simple_fn(p, || 0.025 * normal(&mut rng));
    let x = match treatment {
        Some(t) if t.len() != n => {
            return Err(Error::shape(format!(
                "{} treatments for {n} units",
                t.len()
            )))
        }
        Some(t) => t.to_owned(),
        None => Array1::from_shape_fn(n, |i| twins_treatment(v.row(i), &mut rng)),
    };
    let params = OutcomeParams {
        gamma: gamma.clone(),
        ..Default::default()
    };
    let y = Array1::from_shape_fn(n, |i| {
        let (m, s) = outcome_mean(DatasetKind::Twins, v.row(i), x[i], &params);
        m + s * normal(&mut rng)
    });
    let offset = if n == 0 {
        0.0
    } else {
        v.dot(&gamma).sum() / n as f64
    };
    finish(
        v,
        x,
        y,
        DatasetKind::Twins,
        seed,
        AdrfOracle::Twins { offset },
        None,
        Some(gamma),
    )
}

/// `V` iid N(0,1), `X ~ Bernoulli(sigmoid(V₁))`, `Y = τX + V₁ + N(0, 0.5²)`.
/// Every unit's effect is exactly `τ`.
pub fn gen_constant_effect_binary(
    n: usize,
    p: usize,
    tau: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::config("constant-effect data needs n >= 1"));
    }
    check_p(DatasetKind::ConstantEffect, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array2::zeros((n, p));
    let mut x = Array1::zeros(n);
    let mut y0 = Array1::zeros(n);
    for i in 0..n {
        for j in 0..p {
            v[[i, j]] = normal(&mut rng);
        }
        x[i] = (rng.random::<f64>() < sigmoid(v[[i, 0]])) as u8 as f64;
        y0[i] = v[[i, 0]] + 0.5 * normal(&mut rng);
    }
    let y1 = &y0 + tau;
    let y = Array1::from_shape_fn(n, |i| if x[i] == 1.0 { y1[i] } else { y0[i] });
    finish(
        v,
        x,
        y,
        DatasetKind::ConstantEffect,
        seed,
        AdrfOracle::ConstantEffect { tau },
        Some(PotentialOutcomes { y0, y1 }),
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    v: Array2<f64>,
    x: Array1<f64>,
    y: Array1<f64>,
    kind: DatasetKind,
    seed: u64,
    oracle: AdrfOracle,
    potential: Option<PotentialOutcomes>,
    gamma: Option<Array1<f64>>,
) -> Result<SyntheticDataset> {
    Ok(SyntheticDataset {
        data: Dataset::new(v, x, y)?,
        kind,
        seed,
        oracle,
        potential,
        gamma,
    })
}

/// Generate by kind; `tau` is used only by the constant-effect generator.
pub fn simulate(
    kind: DatasetKind,
    n: usize,
    p: usize,
    seed: u64,
    tau: f64,
) -> Result<SyntheticDataset> {
    match kind {
        DatasetKind::Hirano => gen_hirano(n, p, seed),
        DatasetKind::Sun => gen_sun(n, p, seed),
        DatasetKind::Colangelo => gen_colangelo(n, p, seed),
        DatasetKind::Twins => gen_twins_style(None, None, n, p, seed),
        DatasetKind::ConstantEffect => gen_constant_effect_binary(n, p, tau, seed),
    }
}
