//! Causal estimands from a trained model: the average dose-response curve
//! `μ̂(x) = (1/n) Σᵢ F(x, z0ᵢ, z1ᵢ)` and, for binary treatment, imputed
//! potential outcomes with their individual and average effects.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::data::Dataset;
use crate::egm::{CausalEgm, TreatmentKind};
use crate::error::{Error, Result};
use crate::metrics::quantile;
use crate::nn::{Mode, Real};

/// Number of points in the default evaluation grid.
pub const DEFAULT_GRID_POINTS: usize = 200;
/// Quantile levels bounding the default evaluation grid.
pub const DEFAULT_GRID_QUANTILES: (f64, f64) = (0.01, 0.99);

/// Rows per forward pass when averaging over a large sample.
const CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct AdrfEstimate {
    pub x_grid: Vec<f64>,
    pub mu_hat: Vec<f64>,
    /// Samples averaged over at each grid point.
    pub n_used: usize,
}

impl AdrfEstimate {
    pub fn new(x_grid: Vec<f64>, mu_hat: Vec<f64>, n_used: usize) -> Result<Self> {
        if x_grid.len() != mu_hat.len() {
            return Err(Error::shape(format!(
                "grid has {} points but {} estimates",
                x_grid.len(),
                mu_hat.len()
            )));
        }
        if let Some(i) = mu_hat.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite estimate at grid point {} (x = {})",
                i, x_grid[i]
            )));
        }
        Ok(Self {
            x_grid,
            mu_hat,
            n_used,
        })
    }

    pub fn len(&self) -> usize {
        self.x_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_grid.is_empty()
    }
}

/// Whether the factual outcome of each unit is the observed `y` or the
/// model's own prediction `F(xᵢ, z0ᵢ, z1ᵢ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactualMode {
    #[default]
    Predicted,
    Observed,
}

impl FactualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FactualMode::Predicted => "predicted",
            FactualMode::Observed => "observed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predicted" => Ok(FactualMode::Predicted),
            "observed" => Ok(FactualMode::Observed),
            other => Err(Error::config(format!(
                "factual mode must be predicted or observed, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryEffects {
    pub y1_hat: Array1<f64>,
    pub y0_hat: Array1<f64>,
    pub ite: Array1<f64>,
    pub ate: f64,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
pub fn uniform_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::config("grid needs at least one point"));
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::config(format!("invalid grid range [{lo}, {hi}]")));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| {
            if i + 1 == count {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect())
}

/// Uniform grid over the `[lo_q, hi_q]` quantile range of `x`.
pub fn quantile_grid(x: &[f64], lo_q: f64, hi_q: f64, count: usize) -> Result<Vec<f64>> {
    uniform_grid(quantile(x, lo_q)?, quantile(x, hi_q)?, count)
}

/// The default continuous evaluation grid for treatment sample `x`.
pub fn default_grid(x: &[f64]) -> Result<Vec<f64>> {
    let (lo, hi) = DEFAULT_GRID_QUANTILES;
    quantile_grid(x, lo, hi, DEFAULT_GRID_POINTS)
}

fn check_covariates<T: Real>(model: &CausalEgm<T>, data: &Dataset) -> Result<()> {
    let p = model.config().p;
    if data.p() != p {
        return Err(Error::shape(format!(
            "dataset has {} covariates, model expects {p}",
            data.p()
        )));
    }
    if data.n() == 0 {
        return Err(Error::contract("dataset is empty"));
    }
    Ok(())
}

/// Encoded `(z0, z1)` columns of every sample.
fn outcome_features<T: Real>(model: &CausalEgm<T>, data: &Dataset) -> Result<Array2<T>> {
    let part = model.config().partition;
    let mut out = Array2::zeros((data.n(), part.q0 + part.q1));
    for start in (0..data.n()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.n());
        let v = data.v.slice(s![start..end, ..]).mapv(T::of);
        let z = model.encode_full(v.view())?;
        out.slice_mut(s![start..end, ..])
            .assign(&z.slice(s![.., 0..part.q0 + part.q1]));
    }
    Ok(out)
}

/// `F(xᵢ, z0ᵢ, z1ᵢ)` for per-row treatments `x`.
fn outcome_at<T: Real>(
    model: &CausalEgm<T>,
    x: impl Fn(usize) -> f64,
    features: ArrayView2<T>,
) -> Result<Array1<f64>> {
    let n = features.nrows();
    let mut out = Array1::<f64>::zeros(n);
    let mut input = Array2::zeros((CHUNK.min(n), 1 + features.ncols()));
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let rows = end - start;
        let mut block = input.slice_mut(s![..rows, ..]);
        for r in 0..rows {
            block[[r, 0]] = T::of(x(start + r));
        }
        block
            .slice_mut(s![.., 1..])
            .assign(&features.slice(s![start..end, ..]));
        let f = model.outcome_net().forward(block.view(), Mode::Eval)?;
        out.slice_mut(s![start..end])
            .iter_mut()
            .zip(f.column(0))
            .for_each(|(o, &v)| *o = Real::to_f64(v));
    }
    Ok(out)
}

/// Average dose-response at each grid point, in grid order.
pub fn estimate_adrf<T: Real>(
    model: &CausalEgm<T>,
    data: &Dataset,
    x_grid: &[f64],
) -> Result<AdrfEstimate> {
    check_covariates(model, data)?;
    if x_grid.is_empty() {
        return Err(Error::contract("evaluation grid is empty"));
    }
    if let Some(x) = x_grid.iter().find(|x| !x.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite grid point {x}")));
    }
    let features = outcome_features(model, data)?;
    let n = data.n() as f64;
    let mu_hat = x_grid
        .iter()
        .map(|&x| Ok(outcome_at(model, |_| x, features.view())?.sum() / n))
        .collect::<Result<Vec<f64>>>()?;
    AdrfEstimate::new(x_grid.to_vec(), mu_hat, data.n())
}

fn check_binary<T: Real>(model: &CausalEgm<T>, data: &Dataset) -> Result<()> {
    check_covariates(model, data)?;
    if model.config().treatment_kind != TreatmentKind::Binary {
        return Err(Error::contract(
            "counterfactual outcomes need a binary-treatment model",
        ));
    }
    if !data.has_binary_treatment() {
        return Err(Error::contract("treatment values must all be 0 or 1"));
    }
    Ok(())
}

/// `F(1 − xᵢ, z0ᵢ, z1ᵢ)` for each sample.
pub fn counterfactual_outcomes<T: Real>(
    model: &CausalEgm<T>,
    data: &Dataset,
) -> Result<Array1<f64>> {
    check_binary(model, data)?;
    let features = outcome_features(model, data)?;
    outcome_at(model, |i| 1.0 - data.x[i], features.view())
}

/// Potential outcomes `ŷ(1)`, `ŷ(0)` with the counterfactual side imputed by
/// the outcome network and the factual side chosen by `mode`.
pub fn estimate_binary_effects<T: Real>(
    model: &CausalEgm<T>,
    data: &Dataset,
    mode: FactualMode,
) -> Result<BinaryEffects> {
    check_binary(model, data)?;
    let features = outcome_features(model, data)?;
    let counterfactual = outcome_at(model, |i| 1.0 - data.x[i], features.view())?;
    let factual = match mode {
        FactualMode::Observed => data.y.clone(),
        FactualMode::Predicted => outcome_at(model, |i| data.x[i], features.view())?,
    };
    let treated = |i: usize| data.x[i] == 1.0;
    let n = data.n();
    let y1_hat = Array1::from_shape_fn(n, |i| {
        if treated(i) {
            factual[i]
        } else {
            counterfactual[i]
        }
    });
    let y0_hat = Array1::from_shape_fn(n, |i| {
        if treated(i) {
            counterfactual[i]
        } else {
            factual[i]
        }
    });
    let ite = &y1_hat - &y0_hat;
    let ate = ite.sum() / n as f64;
    Ok(BinaryEffects {
        y1_hat,
        y0_hat,
        ite,
        ate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egm::{LatentPartition, ModelConfig};
    use crate::nn::Mlp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(kind: TreatmentKind) -> ModelConfig {
        let mut c =
            ModelConfig::new(3, kind).with_partition(LatentPartition::new(1, 1, 1, 1).unwrap());
        c.encoder_hidden = vec![5];
        c.decoder_hidden = vec![5];
        c.outcome_hidden = vec![4];
        c.treatment_hidden = vec![4];
        c.critic_hidden = vec![4];
        c
    }

    fn dataset(n: usize, binary: bool, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let x = Array1::from_shape_simple_fn(n, || {
            let u: f64 = rng.random();
            if binary {
                (u > 0.5) as u8 as f64
            } else {
                3.0 * u
            }
        });
        let y = Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0));
        Dataset::new(v, x, y).unwrap()
    }

    /// Set the outcome network's parameters: all zero except the given
    /// final bias and, optionally, an identity path for the treatment input.
    fn handset_outcome(model: &mut CausalEgm<f64>, bias: f64, pass_x: bool) {
        let net: &mut Mlp<f64> = model.outcome_net_mut();
        let zeros = vec![0.0; net.param_count()];
        net.set_params_flat(&zeros).unwrap();
        let layers = net.layers_mut();
        let last = layers.len() - 1;
        layers[last].bias[0] = bias;
        if pass_x {
            // x ↦ hidden unit 0 (positive part) and unit 1 (negated), then
            // recombine: relu-like units with slope 0.2 on the negative side
            // give (h0 − h1) / 1.2 = x.
            layers[0].weight[[0, 0]] = 1.0;
            layers[0].weight[[0, 1]] = -1.0;
            layers[last].weight[[0, 0]] = 1.0 / 1.2;
            layers[last].weight[[1, 0]] = -1.0 / 1.2;
        }
    }

    #[test]
    fn constant_outcome_gives_flat_curve() {
        let mut model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        handset_outcome(&mut model, 1.75, false);
        let data = dataset(30, false, 1);
        let est = estimate_adrf(&model, &data, &[0.0, 1.0, 2.5]).unwrap();
        assert_eq!(est.mu_hat, vec![1.75; 3]);
        assert_eq!(est.n_used, 30);
    }

    #[test]
    fn passthrough_outcome_recovers_identity() {
        let mut model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        handset_outcome(&mut model, 0.0, true);
        let data = dataset(25, false, 2);
        let grid = [-1.0, -0.3, 0.0, 0.4, 2.0];
        let est = estimate_adrf(&model, &data, &grid).unwrap();
        for (x, m) in grid.iter().zip(&est.mu_hat) {
            assert!((x - m).abs() < 1e-12, "{x} vs {m}");
        }
    }

    #[test]
    fn grid_order_is_preserved() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let data = dataset(20, false, 3);
        let grid = [2.0, 0.5, 1.0];
        let est = estimate_adrf(&model, &data, &grid).unwrap();
        assert_eq!(est.x_grid, grid.to_vec());
        let single = estimate_adrf(&model, &data, &[0.5]).unwrap();
        assert_eq!(single.mu_hat[0], est.mu_hat[1]);
    }

    #[test]
    fn singleton_grid_matches_per_sample_loop() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let data = dataset(40, false, 4);
        let x = 0.8;
        let est = estimate_adrf(&model, &data, &[x]).unwrap();
        let mut total = 0.0;
        for i in 0..data.n() {
            let v = data.v.slice(s![i..i + 1, ..]).to_owned();
            let z = model.encode_full(v.view()).unwrap();
            let f = model
                .predict_outcome(Array1::from_elem(1, x).view(), z.view())
                .unwrap();
            total += f[[0, 0]];
        }
        assert!((est.mu_hat[0] - total / 40.0).abs() < 1e-12);
    }

    #[test]
    fn row_permutation_does_not_change_the_curve() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let data = dataset(30, false, 5);
        let mut order: Vec<usize> = (0..30).collect();
        order.reverse();
        order.swap(3, 17);
        let shuffled = data.select(&order);
        let grid = [0.0, 1.5];
        let a = estimate_adrf(&model, &data, &grid).unwrap();
        let b = estimate_adrf(&model, &shuffled, &grid).unwrap();
        for (x, y) in a.mu_hat.iter().zip(&b.mu_hat) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn chunked_evaluation_matches_small_batches() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let data = dataset(CHUNK + 100, false, 6);
        let est = estimate_adrf(&model, &data, &[1.0]).unwrap();
        let head = estimate_adrf(
            &model,
            &data.select(&(0..CHUNK).collect::<Vec<_>>()),
            &[1.0],
        )
        .unwrap();
        let tail = estimate_adrf(
            &model,
            &data.select(&(CHUNK..CHUNK + 100).collect::<Vec<_>>()),
            &[1.0],
        )
        .unwrap();
        let combined =
            (head.mu_hat[0] * CHUNK as f64 + tail.mu_hat[0] * 100.0) / (CHUNK + 100) as f64;
        assert!((est.mu_hat[0] - combined).abs() < 1e-12);
    }

    #[test]
    fn adrf_rejects_bad_inputs() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let data = dataset(10, false, 7);
        assert!(matches!(
            estimate_adrf(&model, &data, &[]),
            Err(Error::Contract(_))
        ));
        let wide = Dataset::new(Array2::zeros((4, 5)), Array1::zeros(4), Array1::zeros(4)).unwrap();
        let err = estimate_adrf(&model, &wide, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(err.to_string().contains('5') && err.to_string().contains('3'));
    }

    #[test]
    fn counterfactuals_flip_the_treatment() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Binary)).unwrap();
        let data = dataset(12, true, 8);
        let cf = counterfactual_outcomes(&model, &data).unwrap();
        let z = model.encode_full(data.v.view()).unwrap();
        let flipped = data.x.mapv(|t| 1.0 - t);
        let direct = model.predict_outcome(flipped.view(), z.view()).unwrap();
        for i in 0..12 {
            assert!((cf[i] - direct[[i, 0]]).abs() < 1e-12);
        }
    }

    #[test]
    fn treatment_blind_outcome_has_no_effect() {
        let mut model = CausalEgm::<f64>::build(config(TreatmentKind::Binary)).unwrap();
        let net = model.outcome_net_mut();
        let layer = &mut net.layers_mut()[0];
        layer.weight.row_mut(0).fill(0.0);
        let data = dataset(15, true, 9);
        let cf = counterfactual_outcomes(&model, &data).unwrap();
        let effects = estimate_binary_effects(&model, &data, FactualMode::Predicted).unwrap();
        for i in 0..15 {
            let factual = if data.x[i] == 1.0 {
                effects.y1_hat[i]
            } else {
                effects.y0_hat[i]
            };
            assert!((cf[i] - factual).abs() < 1e-12);
        }
        assert!(effects.ate.abs() < 1e-12);
    }

    #[test]
    fn constant_outcome_matching_data_gives_zero_effects() {
        let mut model = CausalEgm::<f64>::build(config(TreatmentKind::Binary)).unwrap();
        handset_outcome(&mut model, 0.6, false);
        let mut data = dataset(20, true, 10);
        data.y.fill(0.6);
        for mode in [FactualMode::Observed, FactualMode::Predicted] {
            let e = estimate_binary_effects(&model, &data, mode).unwrap();
            assert!(e.ite.iter().all(|&t| t == 0.0));
            assert_eq!(e.ate, 0.0);
        }
    }

    #[test]
    fn observed_mode_uses_observed_factuals() {
        let model = CausalEgm::<f64>::build(config(TreatmentKind::Binary)).unwrap();
        let data = dataset(20, true, 11);
        let e = estimate_binary_effects(&model, &data, FactualMode::Observed).unwrap();
        for i in 0..20 {
            let factual = if data.x[i] == 1.0 {
                e.y1_hat[i]
            } else {
                e.y0_hat[i]
            };
            assert_eq!(factual, data.y[i]);
        }
        assert!((e.ate - e.ite.sum() / 20.0).abs() == 0.0);
    }

    #[test]
    fn binary_estimators_check_their_inputs() {
        let continuous = CausalEgm::<f64>::build(config(TreatmentKind::Continuous)).unwrap();
        let binary = CausalEgm::<f64>::build(config(TreatmentKind::Binary)).unwrap();
        let bin_data = dataset(10, true, 12);
        let cont_data = dataset(10, false, 12);
        assert!(matches!(
            counterfactual_outcomes(&continuous, &bin_data),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            counterfactual_outcomes(&binary, &cont_data),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn grids() {
        assert_eq!(
            uniform_grid(0.0, 2.0, 5).unwrap(),
            vec![0.0, 0.5, 1.0, 1.5, 2.0]
        );
        assert_eq!(uniform_grid(1.0, 1.0, 1).unwrap(), vec![1.0]);
        assert!(uniform_grid(1.0, 0.0, 3).is_err());
        assert!(uniform_grid(0.0, 1.0, 0).is_err());
        let x: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let g = quantile_grid(&x, 0.01, 0.99, 3).unwrap();
        assert_eq!(g, vec![1.0, 50.0, 99.0]);
        assert_eq!(default_grid(&x).unwrap().len(), DEFAULT_GRID_POINTS);
    }

    #[test]
    fn factual_mode_parsing() {
        assert_eq!(FactualMode::default(), FactualMode::Predicted);
        for m in [FactualMode::Predicted, FactualMode::Observed] {
            assert_eq!(FactualMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(FactualMode::parse("both").is_err());
    }
}
