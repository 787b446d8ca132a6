//! Regression baselines for the dose-response curve.
//!
//! OLS regresses `y` on `(1, x, v)` and averages fitted values over the
//! sample at each grid point. REG adds a quadratic treatment term,
//! `y ~ α₀ + α₁x + α₂x² + β'v`, and evaluates at the covariate mean.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::AdrfEstimate;
use crate::linalg::Qr;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    /// One coefficient per design column, in column order.
    pub coefficients: Array1<f64>,
    /// Column names, e.g. `["intercept", "x", "v1", ...]`.
    pub columns: Vec<String>,
}

impl LinearFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.coefficients[i])
    }

    /// The `intercept` coefficient, or 0 when the design has none.
    pub fn intercept(&self) -> f64 {
        self.coefficient("intercept").unwrap_or(0.0)
    }

    pub fn predict(&self, design: ArrayView2<f64>) -> Result<Array1<f64>> {
        if design.ncols() != self.coefficients.len() {
            return Err(Error::shape(format!(
                "design has {} columns, fit has {}",
                design.ncols(),
                self.coefficients.len()
            )));
        }
        Ok(design.dot(&self.coefficients))
    }
}

/// Least-squares fit through Householder QR. Column names default to
/// `c0, c1, ...` and are used to report collinear columns.
pub fn solve_least_squares(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    columns: Option<Vec<String>>,
) -> Result<LinearFit> {
    let columns = columns.unwrap_or_else(|| (0..design.ncols()).map(|j| format!("c{j}")).collect());
    if columns.len() != design.ncols() {
        return Err(Error::shape(format!(
            "{} column names for {} columns",
            columns.len(),
            design.ncols()
        )));
    }
    if design.nrows() < design.ncols() {
        return Err(Error::contract(format!(
            "least squares needs rows >= columns, got {}×{}",
            design.nrows(),
            design.ncols()
        )));
    }
    let coefficients = Qr::new(design)?.solve(response, Some(&columns))?;
    Ok(LinearFit {
        coefficients,
        columns,
    })
}

fn covariate_names(p: usize) -> impl Iterator<Item = String> {
    (1..=p).map(|j| format!("v{j}"))
}

/// Design `[1, x, x², …, x^degree, v]`.
fn design(data: &Dataset, degree: usize) -> (Array2<f64>, Vec<String>) {
    let (n, p) = (data.n(), data.p());
    let k = 1 + degree + p;
    let mut d = Array2::zeros((n, k));
    for i in 0..n {
        let mut pow = 1.0;
        for j in 0..=degree {
            d[[i, j]] = pow;
            pow *= data.x[i];
        }
    }
    d.slice_mut(ndarray::s![.., 1 + degree..]).assign(&data.v);
    let mut names = vec!["intercept".to_string(), "x".to_string()];
    names.extend((2..=degree).map(|j| format!("x^{j}")));
    names.extend(covariate_names(p));
    (d, names)
}

fn fit_polynomial(
    data: &Dataset,
    degree: usize,
    x_grid: &[f64],
) -> Result<(LinearFit, AdrfEstimate)> {
    let need = data.p() + degree + 1;
    if data.n() <= need {
        return Err(Error::contract(format!(
            "regression baseline needs more than {need} rows, got {}",
            data.n()
        )));
    }
    if x_grid.is_empty() {
        return Err(Error::contract("evaluation grid is empty"));
    }
    let (d, names) = design(data, degree);
    let fit = solve_least_squares(d.view(), data.y.view(), Some(names))?;
    let beta = fit.coefficients.slice(ndarray::s![1 + degree..]);
    let v_mean = data.v.mean_axis(Axis(0)).expect("non-empty");
    let covariate_part = v_mean.dot(&beta);
    let mu_hat = x_grid
        .iter()
        .map(|&x| {
            let poly: f64 = (0..=degree)
                .map(|j| fit.coefficients[j] * x.powi(j as i32))
                .sum();
            poly + covariate_part
        })
        .collect();
    let est = AdrfEstimate::new(x_grid.to_vec(), mu_hat, data.n())?;
    Ok((fit, est))
}

/// Linear regression of `y` on `(1, x, v)`; the curve is the sample average
/// of fitted values at each grid point, which is affine in `x`.
pub fn ols_adrf(data: &Dataset, x_grid: &[f64]) -> Result<AdrfEstimate> {
    Ok(fit_polynomial(data, 1, x_grid)?.1)
}

/// Quadratic-in-treatment regression with an additive linear covariate term.
pub fn reg_adrf(data: &Dataset, x_grid: &[f64]) -> Result<AdrfEstimate> {
    Ok(fit_polynomial(data, 2, x_grid)?.1)
}

/// The fitted OLS model behind [`ols_adrf`].
pub fn ols_fit(data: &Dataset) -> Result<LinearFit> {
    Ok(fit_polynomial(data, 1, &[0.0])?.0)
}

/// The fitted REG model behind [`reg_adrf`].
pub fn reg_fit(data: &Dataset) -> Result<LinearFit> {
    Ok(fit_polynomial(data, 2, &[0.0])?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, k: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((m, k), || rng.random_range(-1.0..1.0))
    }

    fn data_with(
        y: impl Fn(f64, ArrayView1<f64>) -> f64,
        n: usize,
        p: usize,
        seed: u64,
    ) -> Dataset {
        let v = random(n, p, seed);
        let x = random(n, 1, seed + 100).column(0).mapv(|u| 1.5 * u + 1.0);
        let y = Array1::from_shape_fn(n, |i| y(x[i], v.row(i)));
        Dataset::new(v, x, y).unwrap()
    }

    #[test]
    fn identity_design_returns_response() {
        let eye = Array2::<f64>::eye(4);
        let b = array![1.0, -2.0, 3.5, 0.25];
        let fit = solve_least_squares(eye.view(), b.view(), None).unwrap();
        assert!((&fit.coefficients - &b).iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn orthogonal_design_gives_projections() {
        let d = array![[1.0, 1.0], [1.0, -1.0], [1.0, 1.0], [1.0, -1.0]];
        let y = array![3.0, 1.0, 5.0, -2.0];
        let fit = solve_least_squares(d.view(), y.view(), None).unwrap();
        for j in 0..2 {
            let c = d.column(j);
            let expected = c.dot(&y) / c.dot(&c);
            assert!((fit.coefficients[j] - expected).abs() < 1e-14);
        }
    }

    /// Normal equations solved by Gauss-Jordan elimination with partial pivoting.
    fn normal_equations(d: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
        let k = d.ncols();
        let a = d.t().dot(d);
        let b = d.t().dot(y);
        let mut m: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut row = a.row(i).to_vec();
                row.push(b[i]);
                row
            })
            .collect();
        for c in 0..k {
            let piv = (c..k)
                .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
                .unwrap();
            m.swap(c, piv);
            for r in 0..k {
                if r != c {
                    let f = m[r][c] / m[c][c];
                    for j in c..=k {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
        (0..k).map(|i| m[i][k] / m[i][i]).collect()
    }

    #[test]
    fn matches_normal_equations_on_random_system() {
        let d = random(50, 5, 1);
        let y = random(50, 1, 2).column(0).to_owned();
        let fit = solve_least_squares(d.view(), y.view(), None).unwrap();
        let oracle = normal_equations(&d, &y);
        for (a, b) in fit.coefficients.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        // Residuals are orthogonal to every column.
        let resid = &y - &fit.predict(d.view()).unwrap();
        assert!(d.t().dot(&resid).iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let mut data = data_with(|x, _| x, 30, 3, 3);
        let copy = data.v.column(0).to_owned();
        data.v.column_mut(2).assign(&copy);
        match ols_adrf(&data, &[0.0]) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["v3".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ols_recovers_noiseless_linear_truth() {
        let beta = [0.5, -1.0, 2.0];
        let data = data_with(
            |x, v| 3.0 + 2.0 * x + v.dot(&ArrayView1::from(&beta)),
            60,
            3,
            4,
        );
        let grid = [0.0, 0.7, 2.0];
        let est = ols_adrf(&data, &grid).unwrap();
        let vb = data.v.dot(&ArrayView1::from(&beta)).mean().unwrap();
        for (x, m) in grid.iter().zip(&est.mu_hat) {
            assert!((m - (3.0 + 2.0 * x + vb)).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_equals_mean_of_fitted_values() {
        let data = data_with(|x, v| x.sin() + v[0] * v[1], 80, 3, 5);
        let fit = ols_fit(&data).unwrap();
        let x = 1.3;
        let mut total = 0.0;
        for i in 0..data.n() {
            let mut row = vec![1.0, x];
            row.extend(data.v.row(i).iter());
            total += row
                .iter()
                .zip(&fit.coefficients)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        let est = ols_adrf(&data, &[x]).unwrap();
        assert!((est.mu_hat[0] - total / data.n() as f64).abs() < 1e-12);
    }

    #[test]
    fn constant_response_gives_flat_curve() {
        let data = data_with(|_, _| 4.0, 40, 2, 6);
        for est in [
            ols_adrf(&data, &[0.0, 1.0, 2.0]).unwrap(),
            reg_adrf(&data, &[0.0, 1.0, 2.0]).unwrap(),
        ] {
            assert!(est.mu_hat.iter().all(|m| (m - 4.0).abs() < 1e-12));
        }
    }

    #[test]
    fn reg_recovers_quadratic_truth() {
        let data = data_with(|x, _| 1.0 + x - 0.5 * x * x, 50, 2, 7);
        let fit = reg_fit(&data).unwrap();
        assert!((fit.intercept() - 1.0).abs() < 1e-10);
        assert!((fit.coefficient("x").unwrap() - 1.0).abs() < 1e-10);
        assert!((fit.coefficient("x^2").unwrap() + 0.5).abs() < 1e-10);
        let grid = [-0.5, 0.0, 1.0, 2.5];
        let est = reg_adrf(&data, &grid).unwrap();
        for (x, m) in grid.iter().zip(&est.mu_hat) {
            assert!((m - (1.0 + x - 0.5 * x * x)).abs() < 1e-10);
        }
    }

    #[test]
    fn reg_and_ols_agree_on_linear_truth() {
        let data = data_with(|x, v| -1.0 + 0.8 * x + v[1], 70, 3, 8);
        let grid: Vec<f64> = (0..9).map(|i| i as f64 * 0.3).collect();
        let a = ols_adrf(&data, &grid).unwrap();
        let b = reg_adrf(&data, &grid).unwrap();
        for (x, y) in a.mu_hat.iter().zip(&b.mu_hat) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn curve_shapes_by_second_differences() {
        let data = data_with(|x, v| (2.0 * x).cos() + v[0], 100, 3, 9);
        let grid: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let second =
            |m: &[f64]| -> Vec<f64> { m.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect() };
        let ols = ols_adrf(&data, &grid).unwrap();
        assert!(second(&ols.mu_hat).iter().all(|d| d.abs() < 1e-10));
        let reg = reg_adrf(&data, &grid).unwrap();
        let d2 = second(&reg.mu_hat);
        let alpha2 = reg_fit(&data).unwrap().coefficient("x^2").unwrap();
        assert!(d2.iter().all(|d| (d - 2.0 * alpha2 * 0.25).abs() < 1e-10));
    }

    #[test]
    fn baselines_are_deterministic_and_need_enough_rows() {
        let data = data_with(|x, v| x * v[0], 30, 3, 10);
        assert_eq!(
            ols_adrf(&data, &[1.0]).unwrap(),
            ols_adrf(&data, &[1.0]).unwrap()
        );
        let small = data.select(&[0, 1, 2, 3, 4]);
        assert!(matches!(ols_adrf(&small, &[1.0]), Err(Error::Contract(_))));
        let six = data.select(&[0, 1, 2, 3, 4, 5]);
        assert!(ols_adrf(&six, &[1.0]).is_ok());
        assert!(matches!(reg_adrf(&six, &[1.0]), Err(Error::Contract(_))));
    }
}
