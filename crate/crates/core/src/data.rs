//! Observed data container.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A regression dataset: response, covariate matrix, optional right-censoring
/// flags (AFT mode), and column names.
///
/// In AFT mode `y` holds log observed times `log T*` and `censored[i] = true`
/// marks rows where the event was not observed (the paper-style indicator
/// `κ_i = 0`).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub censored: Option<Vec<bool>>,
    pub names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        censored: Option<Vec<bool>>,
        names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
        }
        if p < 1 {
            return Err(Error::InvalidData("need at least one covariate".into()));
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "response has {} entries but design has {} rows",
                y.len(),
                n
            )));
        }
        if let Some(c) = &censored {
            if c.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "censoring vector has {} entries but design has {} rows",
                    c.len(),
                    n
                )));
            }
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entries".into()));
        }
        let names = match names {
            Some(v) => {
                if v.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "{} column names for {} columns",
                        v.len(),
                        p
                    )));
                }
                v
            }
            None => (0..p).map(|j| format!("x{}", j + 1)).collect(),
        };
        Ok(Self { y, x, censored, names })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_censored(&self, i: usize) -> bool {
        self.censored.as_ref().map(|c| c[i]).unwrap_or(false)
    }

    pub fn has_censoring(&self) -> bool {
        self.censored.as_ref().map(|c| c.iter().any(|&b| b)).unwrap_or(false)
    }
}
