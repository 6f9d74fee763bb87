//! Comparison regressions and model-comparison statistics.

mod compare;
mod glm;
mod negbin;
mod rgpr;

use nalgebra::{DMatrix, DVector};

use crate::data::{linear_predictor, Dataset};

pub use compare::{
    compare_models, information_criteria, ComparisonRow, FittedKind, FittedModel, ModelComparison,
};
pub use glm::{fit_logistic, fit_poisson, poisson_loglik};
pub use negbin::{fit_negbin, negbin_loglik};
pub use rgpr::{fit_rgpr, rgpr_loglik};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Poisson,
    NegBin,
    Logistic,
    Rgpr,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Poisson => "poisson",
            ModelKind::NegBin => "negbin",
            ModelKind::Logistic => "logistic",
            ModelKind::Rgpr => "rgpr",
        }
    }

    /// Name of the extra dispersion parameter, if the model has one.
    pub fn extra_name(&self) -> Option<&'static str> {
        match self {
            ModelKind::NegBin => Some("r"),
            ModelKind::Rgpr => Some("alpha"),
            _ => None,
        }
    }
}

/// A fitted baseline model.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub kind: ModelKind,
    pub beta: DVector<f64>,
    /// `r` for the negative binomial, `α` for RGPR. `None` for the negative
    /// binomial at its Poisson boundary (`r → ∞`).
    pub extra: Option<f64>,
    pub extra_se: Option<f64>,
    /// Covariance of the coefficients `β`.
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub converged: bool,
    /// The negative binomial drifted to its Poisson limit.
    pub boundary: bool,
    pub iterations: usize,
}

impl BaselineFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len())
            .map(|j| self.cov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// Parameters counted in AIC: the coefficients plus the dispersion
    /// parameter whenever the model has one.
    pub fn n_params(&self) -> usize {
        self.beta.len() + usize::from(self.kind.extra_name().is_some())
    }

    /// Conventional fitted values: the model mean (the success probability
    /// for the logistic model).
    pub fn fitted_means(&self, ds: &Dataset) -> Vec<f64> {
        let eta = linear_predictor(ds, &self.beta).expect("coefficient length checked at fit");
        eta.iter()
            .map(|&e| match self.kind {
                ModelKind::Logistic => 1.0 / (1.0 + (-e).exp()),
                _ => e.exp(),
            })
            .collect()
    }
}
