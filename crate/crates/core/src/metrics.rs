//! Evaluation metrics for dose-response curves and binary treatment effects.

use ndarray::ArrayView1;

use crate::error::{Error, Result};

/// Finite-difference step for the marginal treatment effect.
pub const MTEF_STEP: f64 = 1e-4;

/// Truth values at or below this magnitude are skipped by [`mape_excluding`].
pub const MAPE_ZERO_TOL: f64 = 1e-6;

fn check_pair(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "metric inputs have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::contract("metrics need at least one value"));
    }
    Ok(())
}

fn check_four(vs: [&ArrayView1<f64>; 4]) -> Result<()> {
    let n = vs[0].len();
    if vs.iter().any(|v| v.len() != n) {
        return Err(Error::shape(format!(
            "potential-outcome vectors have lengths {:?}",
            vs.map(|v| v.len())
        )));
    }
    if n == 0 {
        return Err(Error::contract("metrics need at least one unit"));
    }
    Ok(())
}

pub fn rmse(mu_true: ArrayView1<f64>, mu_hat: ArrayView1<f64>) -> Result<f64> {
    check_pair(&mu_true, &mu_hat)?;
    let sse: f64 = mu_true
        .iter()
        .zip(&mu_hat)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((sse / mu_true.len() as f64).sqrt())
}

/// Mean absolute percentage error; any zero truth value is an error.
pub fn mape(mu_true: ArrayView1<f64>, mu_hat: ArrayView1<f64>) -> Result<f64> {
    check_pair(&mu_true, &mu_hat)?;
    if let Some(i) = mu_true.iter().position(|&t| t == 0.0) {
        return Err(Error::contract(format!(
            "MAPE undefined: true value at index {i} is zero"
        )));
    }
    let total: f64 = mu_true
        .iter()
        .zip(&mu_hat)
        .map(|(t, h)| ((t - h) / t).abs())
        .sum();
    Ok(total / mu_true.len() as f64)
}

/// MAPE over the points with `|truth| > MAPE_ZERO_TOL`, plus the number of
/// points left out.
pub fn mape_excluding(mu_true: ArrayView1<f64>, mu_hat: ArrayView1<f64>) -> Result<(f64, usize)> {
    check_pair(&mu_true, &mu_hat)?;
    let (mut total, mut kept) = (0.0, 0usize);
    for (t, h) in mu_true.iter().zip(&mu_hat) {
        if t.abs() > MAPE_ZERO_TOL {
            total += ((t - h) / t).abs();
            kept += 1;
        }
    }
    if kept == 0 {
        return Err(Error::contract("MAPE undefined: every true value is zero"));
    }
    Ok((total / kept as f64, mu_true.len() - kept))
}

/// Mean over `xs` of `|MTEF_true(x) − MTEF_est(x)|`, with both slopes taken
/// as forward differences of step `dx`.
pub fn mtef_bias(
    mu_true: impl Fn(f64) -> f64,
    mu_hat: impl Fn(f64) -> f64,
    xs: &[f64],
    dx: f64,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::contract("MTEF bias needs at least one point"));
    }
    if !(dx > 0.0) {
        return Err(Error::config(format!(
            "MTEF step must be positive, got {dx}"
        )));
    }
    let total: f64 = xs
        .iter()
        .map(|&x| {
            let t = (mu_true(x + dx) - mu_true(x)) / dx;
            let h = (mu_hat(x + dx) - mu_hat(x)) / dx;
            (t - h).abs()
        })
        .sum();
    Ok(total / xs.len() as f64)
}

/// [`mtef_bias`] from curves already evaluated at `xs` and at `xs + dx`.
pub fn mtef_bias_tabulated(
    mu_true: ArrayView1<f64>,
    mu_true_shifted: ArrayView1<f64>,
    mu_hat: ArrayView1<f64>,
    mu_hat_shifted: ArrayView1<f64>,
    dx: f64,
) -> Result<f64> {
    check_four([&mu_true, &mu_true_shifted, &mu_hat, &mu_hat_shifted])?;
    let n = mu_true.len();
    let total: f64 = (0..n)
        .map(|i| {
            let t = (mu_true_shifted[i] - mu_true[i]) / dx;
            let h = (mu_hat_shifted[i] - mu_hat[i]) / dx;
            (t - h).abs()
        })
        .sum();
    Ok(total / n as f64)
}

/// `|mean(ŷ₁ − ŷ₀) − mean(y₁ − y₀)|`.
pub fn eps_ate(
    y1_true: ArrayView1<f64>,
    y0_true: ArrayView1<f64>,
    y1_hat: ArrayView1<f64>,
    y0_hat: ArrayView1<f64>,
) -> Result<f64> {
    check_four([&y1_true, &y0_true, &y1_hat, &y0_hat])?;
    let n = y1_true.len() as f64;
    let ate_hat = (&y1_hat - &y0_hat).sum() / n;
    let ate_true = (&y1_true - &y0_true).sum() / n;
    Ok((ate_hat - ate_true).abs())
}

/// Mean squared error of individual effects (not rooted).
pub fn eps_pehe(
    y1_true: ArrayView1<f64>,
    y0_true: ArrayView1<f64>,
    y1_hat: ArrayView1<f64>,
    y0_hat: ArrayView1<f64>,
) -> Result<f64> {
    check_four([&y1_true, &y0_true, &y1_hat, &y0_hat])?;
    let n = y1_true.len();
    let total: f64 = (0..n)
        .map(|i| ((y1_hat[i] - y0_hat[i]) - (y1_true[i] - y0_true[i])).powi(2))
        .sum();
    Ok(total / n as f64)
}

/// Square root of [`eps_pehe`], the convention used by much of the literature.
pub fn sqrt_pehe(
    y1_true: ArrayView1<f64>,
    y0_true: ArrayView1<f64>,
    y1_hat: ArrayView1<f64>,
    y0_hat: ArrayView1<f64>,
) -> Result<f64> {
    eps_pehe(y1_true, y0_true, y1_hat, y0_hat).map(f64::sqrt)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (`n − 1` denominator); zero for one seed.
    pub sd: f64,
}

impl MetricReport {
    pub fn from_values(metric: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::contract("metric report needs at least one value"));
        }
        let (mean, sd) = mean_sd(&values);
        Ok(Self {
            metric: metric.into(),
            values,
            mean,
            sd,
        })
    }

    pub fn n_seeds(&self) -> usize {
        self.values.len()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.metric,
            self.mean,
            self.sd,
            self.n_seeds()
        )
    }
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolation quantile of unsorted data (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::contract("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!(
            "quantile level must lie in [0, 1], got {q}"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hirano(x: f64) -> f64 {
        x + 2.0 / (1.0 + x).powi(3)
    }

    #[test]
    fn rmse_examples() {
        let a = array![1.0, 2.0, 3.0];
        assert_eq!(rmse(a.view(), a.view()).unwrap(), 0.0);
        let shifted = &a + 0.25;
        assert!((rmse(a.view(), shifted.view()).unwrap() - 0.25).abs() < 1e-15);
        let b = array![2.0, 2.0, 5.0];
        assert!((rmse(a.view(), b.view()).unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((rmse(a.view(), b.view()).unwrap() - 1.2910).abs() < 1e-4);
        assert_eq!(
            rmse(a.view(), b.view()).unwrap(),
            rmse(b.view(), a.view()).unwrap()
        );
    }

    #[test]
    fn rmse_rejects_bad_lengths() {
        let a = array![1.0, 2.0];
        let b = array![1.0];
        assert!(matches!(rmse(a.view(), b.view()), Err(Error::Shape(_))));
        let e = Array1::<f64>::zeros(0);
        assert!(matches!(rmse(e.view(), e.view()), Err(Error::Contract(_))));
    }

    #[test]
    fn mape_examples() {
        let t = array![2.0, -4.0, 0.5];
        assert!((mape(t.view(), (&t * 1.1).view()).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(mape(t.view(), t.view()).unwrap(), 0.0);
        let value = mape(array![2.0, 4.0].view(), array![1.0, 5.0].view()).unwrap();
        assert_eq!(value, 0.375);
        assert!(matches!(
            mape(array![1.0, 0.0].view(), array![1.0, 1.0].view()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mape_excluding_counts_skipped_points() {
        let (m, skipped) =
            mape_excluding(array![2.0, 0.0, 4.0].view(), array![1.0, 3.0, 5.0].view()).unwrap();
        assert_eq!(m, 0.375);
        assert_eq!(skipped, 1);
    }

    #[test]
    fn mtef_examples() {
        let xs = [0.0, 0.5, 1.0, 2.5];
        let b = mtef_bias(|x| x, |x| 2.0 * x, &xs, MTEF_STEP).unwrap();
        assert!((b - 1.0).abs() < 1e-9);
        assert_eq!(mtef_bias(hirano, hirano, &xs, MTEF_STEP).unwrap(), 0.0);
        // Finite-difference slope of the Hirano curve against its derivative.
        let slope = (hirano(1.0 + MTEF_STEP) - hirano(1.0)) / MTEF_STEP;
        assert!((slope - 0.625).abs() < 1e-3);
        let exact = 1.0 - 6.0 / 2.0f64.powi(4);
        assert!((slope - exact).abs() < 2.0 * 12.0 / 2.0f64.powi(5) * MTEF_STEP);
    }

    #[test]
    fn mtef_step_refinement_is_first_order() {
        let xs: Vec<f64> = (0..20).map(|i| 0.1 + 0.15 * i as f64).collect();
        let deriv = |x: f64| 1.0 - 6.0 / (1.0 + x).powi(4);
        let line = |x: f64| x;
        let coarse = mtef_bias(hirano, line, &xs, MTEF_STEP).unwrap();
        let fine = mtef_bias(hirano, line, &xs, MTEF_STEP / 10.0).unwrap();
        let exact = xs.iter().map(|&x| (deriv(x) - 1.0).abs()).sum::<f64>() / xs.len() as f64;
        assert!((coarse - fine).abs() < 24.0 * MTEF_STEP);
        assert!((fine - exact).abs() < 24.0 * MTEF_STEP / 10.0);
    }

    #[test]
    fn tabulated_mtef_matches_functional_form() {
        let xs = [0.2, 0.9, 1.7];
        let f = |x: f64| 0.5 * x * x;
        let direct = mtef_bias(hirano, f, &xs, MTEF_STEP).unwrap();
        let eval = |g: &dyn Fn(f64) -> f64, shift: f64| {
            Array1::from_iter(xs.iter().map(|&x| g(x + shift)))
        };
        let tab = mtef_bias_tabulated(
            eval(&hirano, 0.0).view(),
            eval(&hirano, MTEF_STEP).view(),
            eval(&f, 0.0).view(),
            eval(&f, MTEF_STEP).view(),
            MTEF_STEP,
        )
        .unwrap();
        assert!((direct - tab).abs() < 1e-12);
    }

    fn naive_ate(y1: &[f64], y0: &[f64], h1: &[f64], h0: &[f64]) -> f64 {
        let n = y1.len() as f64;
        let mut est = 0.0;
        let mut tru = 0.0;
        for i in 0..y1.len() {
            est += h1[i] - h0[i];
            tru += y1[i] - y0[i];
        }
        (est / n - tru / n).abs()
    }

    fn naive_pehe(y1: &[f64], y0: &[f64], h1: &[f64], h0: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..y1.len() {
            let d = (h1[i] - h0[i]) - (y1[i] - y0[i]);
            total += d * d;
        }
        total / y1.len() as f64
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        Array1::from_shape_simple_fn(n, || rng.random_range(-3.0..3.0))
    }

    #[test]
    fn binary_metric_examples() {
        let y1 = array![3.0, 1.0, 2.0];
        let y0 = array![1.0, 1.0, -1.0];
        assert_eq!(
            eps_ate(y1.view(), y0.view(), y1.view(), y0.view()).unwrap(),
            0.0
        );
        assert_eq!(
            eps_pehe(y1.view(), y0.view(), y1.view(), y0.view()).unwrap(),
            0.0
        );
        let c = 0.7;
        let shifted = &y1 + c;
        let ate = eps_ate(y1.view(), y0.view(), shifted.view(), y0.view()).unwrap();
        assert!((ate - c).abs() < 1e-15);
        let pehe = eps_pehe(y1.view(), y0.view(), shifted.view(), y0.view()).unwrap();
        assert!((pehe - c * c).abs() < 1e-15);
        let root = sqrt_pehe(y1.view(), y0.view(), shifted.view(), y0.view()).unwrap();
        assert!((root - c).abs() < 1e-15);
    }

    #[test]
    fn binary_metrics_match_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for n in [5, 5, 17] {
            let v: Vec<Array1<f64>> = (0..4).map(|_| random_vec(&mut rng, n)).collect();
            let s: Vec<&[f64]> = v.iter().map(|a| a.as_slice().unwrap()).collect();
            let ate = eps_ate(v[0].view(), v[1].view(), v[2].view(), v[3].view()).unwrap();
            let pehe = eps_pehe(v[0].view(), v[1].view(), v[2].view(), v[3].view()).unwrap();
            assert!((ate - naive_ate(s[0], s[1], s[2], s[3])).abs() < 1e-12);
            assert!((pehe - naive_pehe(s[0], s[1], s[2], s[3])).abs() < 1e-12);
        }
    }

    #[test]
    fn eps_ate_is_symmetric_in_truth_and_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v: Vec<Array1<f64>> = (0..4).map(|_| random_vec(&mut rng, 9)).collect();
        let a = eps_ate(v[0].view(), v[1].view(), v[2].view(), v[3].view()).unwrap();
        let b = eps_ate(v[2].view(), v[3].view(), v[0].view(), v[1].view()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let v: Vec<Array1<f64>> = (0..4).map(|_| random_vec(&mut rng, 8)).collect();
        let perm = [3usize, 0, 7, 1, 5, 2, 6, 4];
        let p: Vec<Array1<f64>> = v
            .iter()
            .map(|a| Array1::from_iter(perm.iter().map(|&i| a[i])))
            .collect();
        let r1 = rmse(v[0].view(), v[1].view()).unwrap();
        let r2 = rmse(p[0].view(), p[1].view()).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
        let e1 = eps_pehe(v[0].view(), v[1].view(), v[2].view(), v[3].view()).unwrap();
        let e2 = eps_pehe(p[0].view(), p[1].view(), p[2].view(), p[3].view()).unwrap();
        assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn report_mean_and_sd() {
        let r = MetricReport::from_values("rmse", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.mean, 2.5);
        assert!((r.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.csv_row(), format!("rmse,2.5,{},4", r.sd));
        let single = MetricReport::from_values("mape", vec![0.3]).unwrap();
        assert_eq!(single.sd, 0.0);
        assert!(MetricReport::from_values("x", vec![]).is_err());
    }

    #[test]
    fn quantiles_and_median() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(quantile(&v, 0.125).unwrap(), 1.5);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(quantile(&v, 1.5).is_err());
    }
}
