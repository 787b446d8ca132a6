//! Observational dataset: covariates `V`, treatment `x`, outcome `y`.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × p` covariates.
    pub v: Array2<f64>,
    pub x: Array1<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(v: Array2<f64>, x: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        let n = v.nrows();
        if x.len() != n || y.len() != n {
            return Err(Error::shape(format!(
                "row counts disagree: V has {n}, x has {}, y has {}",
                x.len(),
                y.len()
            )));
        }
        if let Some((i, _)) = v
            .outer_iter()
            .enumerate()
            .find(|(_, row)| row.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::InvalidData(format!(
                "non-finite covariate in row {i}"
            )));
        }
        if let Some(i) = x.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite treatment in row {i}"
            )));
        }
        if let Some(i) = y.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome in row {i}")));
        }
        Ok(Self { v, x, y })
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn p(&self) -> usize {
        self.v.ncols()
    }

    /// Rows picked by `index` (repeats allowed).
    pub fn select(&self, index: &[usize]) -> Self {
        Self {
            v: self.v.select(Axis(0), index),
            x: self.x.select(Axis(0), index),
            y: self.y.select(Axis(0), index),
        }
    }

    /// True when every treatment value is exactly 0 or 1.
    pub fn has_binary_treatment(&self) -> bool {
        self.x.iter().all(|&t| t == 0.0 || t == 1.0)
    }
}
