//! Synthetic COM-Poisson regression data.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::dist::{Cdf, ComParams, SeriesPolicy};
use crate::error::{Error, Result};

/// A covariate drawn uniformly from `[lower, upper)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformCovariate {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

impl UniformCovariate {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub covariates: Vec<UniformCovariate>,
    /// Intercept first.
    pub beta: Vec<f64>,
    pub nu: f64,
    pub response: String,
}

impl Design {
    fn validate(&self) -> Result<()> {
        if self.beta.len() != self.covariates.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len() + 1,
                got: self.beta.len(),
            });
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("beta must be finite".into()));
        }
        for c in &self.covariates {
            if !(c.lower.is_finite() && c.upper.is_finite() && c.lower < c.upper) {
                return Err(Error::InvalidParameter(format!(
                    "covariate {} needs finite bounds with lower < upper",
                    c.name
                )));
            }
        }
        Ok(())
    }
}

/// Draws covariates, then one response per row from COM-Poisson(λ_i, ν)
/// with `log λ_i = x_i'β`. The same design and seed always give the same
/// dataset.
pub fn simulate(design: &Design, seed: u64) -> Result<Dataset> {
    design.validate()?;
    let n = design.n;
    let p = design.covariates.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for (j, c) in design.covariates.iter().enumerate() {
            x[(i, j)] = rng.random_range(c.lower..c.upper);
        }
    }
    let beta = DVector::from_column_slice(&design.beta);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let eta = beta[0] + (0..p).map(|j| x[(i, j)] * beta[j + 1]).sum::<f64>();
        let params = ComParams::from_log_lambda(eta, design.nu)?;
        y.push(Cdf::new(params, SeriesPolicy::default())?.sample(&mut rng));
    }
    let names = design.covariates.iter().map(|c| c.name.clone()).collect();
    Dataset::new(design.response.clone(), y, names, x)
}
