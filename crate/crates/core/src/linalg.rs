//! Householder QR for dense least squares and orthonormal bases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A column counts as dependent on its predecessors when its remaining norm
/// after orthogonalization drops below this fraction of its original norm.
pub const RANK_TOL: f64 = 1e-9;

/// Compact Householder factorization `A = Q R` of an `m × k` matrix, `m ≥ k`.
#[derive(Debug, Clone)]
pub struct Qr {
    rows: usize,
    /// Reflected columns, stored contiguously: `cols[j][j..]` holds the
    /// Householder vector of step `j`, `cols[j][..j]` the strict upper part
    /// of column `j` of `R`.
    cols: Vec<Vec<f64>>,
    betas: Vec<f64>,
    diag: Vec<f64>,
    norms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Qr {
    pub fn new(a: ArrayView2<f64>) -> Result<Self> {
        let (m, k) = a.dim();
        if m < k {
            return Err(Error::shape(format!(
                "QR needs at least as many rows as columns, got {m}×{k}"
            )));
        }
        let mut cols: Vec<Vec<f64>> = a.columns().into_iter().map(|c| c.to_vec()).collect();
        let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
        let mut betas = vec![0.0; k];
        let mut diag = vec![0.0; k];
        for j in 0..k {
            let (done, rest) = cols.split_at_mut(j + 1);
            let v = &mut done[j][j..];
            let norm = dot(v, v).sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if v[0] > 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vv = dot(v, v);
            diag[j] = alpha;
            if vv == 0.0 {
                continue;
            }
            let beta = 2.0 / vv;
            betas[j] = beta;
            for col in rest.iter_mut() {
                let tail = &mut col[j..];
                let s = beta * dot(v, tail);
                tail.iter_mut()
                    .zip(v.iter())
                    .for_each(|(t, vi)| *t -= s * vi);
            }
        }
        Ok(Self {
            rows: m,
            cols,
            betas,
            diag,
            norms,
        })
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    /// Diagonal of `R`.
    pub fn r_diag(&self) -> &[f64] {
        &self.diag
    }

    /// Upper-triangular `R` (`k × k`).
    pub fn r(&self) -> Array2<f64> {
        let k = self.ncols();
        Array2::from_shape_fn((k, k), |(i, j)| match i.cmp(&j) {
            std::cmp::Ordering::Less => self.cols[j][i],
            std::cmp::Ordering::Equal => self.diag[i],
            std::cmp::Ordering::Greater => 0.0,
        })
    }

    /// Indices of columns that are numerically in the span of earlier ones.
    pub fn dependent_columns(&self) -> Vec<usize> {
        (0..self.ncols())
            .filter(|&j| self.diag[j].abs() <= RANK_TOL * self.norms[j])
            .collect()
    }

    fn apply_h(&self, j: usize, b: &mut [f64]) {
        let beta = self.betas[j];
        if beta == 0.0 {
            return;
        }
        let v = &self.cols[j][j..];
        let tail = &mut b[j..];
        let s = beta * dot(v, tail);
        tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
    }

    /// `Qᵀ b`.
    pub fn apply_qt(&self, b: &mut [f64]) {
        for j in 0..self.ncols() {
            self.apply_h(j, b);
        }
    }

    /// The first `k` columns of `Q` (`m × k`, orthonormal).
    pub fn thin_q(&self) -> Array2<f64> {
        let k = self.ncols();
        let mut q = Array2::zeros((self.rows, k));
        let mut e = vec![0.0; self.rows];
        for c in 0..k {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[c] = 1.0;
            for j in (0..k).rev() {
                self.apply_h(j, &mut e);
            }
            q.column_mut(c).assign(&ArrayView1::from(&e[..]));
        }
        q
    }

    /// Minimizer of `||A β − b||²`. Fails with the offending column indices
    /// (named by `names` if given) when `A` is numerically rank-deficient.
    pub fn solve(&self, b: ArrayView1<f64>, names: Option<&[String]>) -> Result<Array1<f64>> {
        if b.len() != self.rows {
            return Err(Error::shape(format!(
                "response has {} rows, design has {}",
                b.len(),
                self.rows
            )));
        }
        let dependent = self.dependent_columns();
        if !dependent.is_empty() {
            let columns = dependent
                .iter()
                .map(|&j| match names {
                    Some(n) if j < n.len() => n[j].clone(),
                    _ => format!("column {j}"),
                })
                .collect();
            return Err(Error::RankDeficient { columns });
        }
        let mut qtb = b.to_vec();
        self.apply_qt(&mut qtb);
        let k = self.ncols();
        let mut beta = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| self.cols[j][i] * beta[j]).sum();
            beta[i] = (qtb[i] - s) / self.diag[i];
        }
        Ok(Array1::from(beta))
    }
}

/// Orthonormal basis from the QR factorization of a square matrix, with
/// column signs fixed so that `R` has a positive diagonal.
pub fn orthonormal_basis(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape("orthonormal basis needs a square matrix"));
    }
    let qr = Qr::new(a)?;
    if !qr.dependent_columns().is_empty() {
        return Err(Error::RankDeficient {
            columns: qr
                .dependent_columns()
                .iter()
                .map(|j| format!("column {j}"))
                .collect(),
        });
    }
    let mut q = qr.thin_q();
    for (j, &d) in qr.r_diag().iter().enumerate() {
        if d < 0.0 {
            q.column_mut(j).mapv_inplace(|x| -x);
        }
    }
    Ok(q)
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

    #[test]
    fn factorization_reconstructs_input() {
        let a = random(30, 6, 1);
        let qr = Qr::new(a.view()).unwrap();
        let q = qr.thin_q();
        let back = q.dot(&qr.r());
        assert!((&back - &a).iter().all(|e| e.abs() < 1e-12));
        let gram = q.t().dot(&q);
        assert!((&gram - &Array2::<f64>::eye(6))
            .iter()
            .all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn solves_square_system_exactly() {
        let a = array![[2.0, 1.0], [1.0, 3.0]];
        let beta = Qr::new(a.view())
            .unwrap()
            .solve(array![3.0, 5.0].view(), None)
            .unwrap();
        assert!((beta[0] - 0.8).abs() < 1e-14 && (beta[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn detects_collinear_columns() {
        let mut a = random(20, 4, 2);
        let dup = &a.column(0) * 2.0 - &a.column(1);
        a.column_mut(3).assign(&dup);
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let err = Qr::new(a.view())
            .unwrap()
            .solve(random(20, 1, 3).column(0), Some(&names))
            .unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert_eq!(columns, vec!["d".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_column_is_rank_deficient() {
        let mut a = random(10, 3, 4);
        a.column_mut(1).fill(0.0);
        assert_eq!(Qr::new(a.view()).unwrap().dependent_columns(), vec![1]);
    }

    #[test]
    fn basis_is_orthonormal_with_positive_r_diagonal() {
        let a = random(12, 12, 5);
        let u = orthonormal_basis(a.view()).unwrap();
        let gram = u.t().dot(&u);
        assert!((&gram - &Array2::<f64>::eye(12))
            .iter()
            .all(|e| e.abs() < 1e-12));
        // Uᵀ A is then the R factor with a positive diagonal.
        let r = u.t().dot(&a);
        for i in 0..12 {
            assert!(r[[i, i]] > 0.0);
        }
    }

    #[test]
    fn rejects_wide_matrices() {
        assert!(matches!(
            Qr::new(random(2, 3, 6).view()),
            Err(Error::Shape(_))
        ));
    }
}
