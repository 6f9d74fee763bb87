use serde::Serialize;

use super::BaselineFit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{fitted_values, FitResult, FittedValueKind};

/// Which fitted values enter the MSE column for COM-Poisson fits.
///
/// `Mean` uses the closed-form mean approximation and falls back to medians
/// (with a note) wherever the approximation is not trustworthy. Baselines
/// always use their model mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FittedKind {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy)]
pub enum FittedModel<'a> {
    Com(&'a FitResult),
    Baseline(&'a BaselineFit),
}

impl FittedModel<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            FittedModel::Com(_) => "com-poisson",
            FittedModel::Baseline(b) => b.kind.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub loglik: f64,
    pub k: usize,
    pub aic: f64,
    pub aicc: f64,
    pub mse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub n_obs: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ModelComparison {
    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }
}

/// `(AIC, AICc)`; AICc is `+∞` when `n ≤ k + 1`.
pub fn information_criteria(loglik: f64, k: usize, n: usize) -> (f64, f64) {
    let kf = k as f64;
    let aic = -2.0 * loglik + 2.0 * kf;
    let aicc = if n > k + 1 {
        aic + 2.0 * kf * (kf + 1.0) / (n - k - 1) as f64
    } else {
        f64::INFINITY
    };
    (aic, aicc)
}

fn mse(y: &[u64], fitted: &[f64]) -> f64 {
    y.iter()
        .zip(fitted)
        .map(|(&yi, f)| (yi as f64 - f).powi(2))
        .sum::<f64>()
        / y.len() as f64
}

pub fn compare_models(
    ds: &Dataset,
    fits: &[FittedModel<'_>],
    fitted_kind: FittedKind,
) -> Result<ModelComparison> {
    let n = ds.n_obs();
    let mut rows = Vec::with_capacity(fits.len());
    for fit in fits {
        let mut notes = Vec::new();
        let (loglik, k, fitted) = match fit {
            FittedModel::Com(fr) => {
                if fr.n_obs != n || fr.beta.len() != ds.n_coef() {
                    return Err(Error::DimensionMismatch {
                        expected: ds.n_coef(),
                        got: fr.beta.len(),
                    });
                }
                let fitted = match fitted_kind {
                    FittedKind::Median => fitted_values(ds, fr, FittedValueKind::Median)?,
                    FittedKind::Mean => match fitted_values(ds, fr, FittedValueKind::MeanApprox) {
                        Ok(v) => v,
                        Err(Error::ApproximationInvalid { observation, .. }) => {
                            notes.push(format!(
                                "mean approximation invalid at observation {observation}; MSE uses medians"
                            ));
                            fitted_values(ds, fr, FittedValueKind::Median)?
                        }
                        Err(e) => return Err(e),
                    },
                };
                (fr.loglik, ds.n_coef() + 1, fitted)
            }
            FittedModel::Baseline(b) => {
                if b.beta.len() != ds.n_coef() {
                    return Err(Error::DimensionMismatch {
                        expected: ds.n_coef(),
                        got: b.beta.len(),
                    });
                }
                if b.boundary {
                    notes.push("dispersion parameter at its Poisson limit".into());
                }
                (b.loglik, b.n_params(), b.fitted_means(ds))
            }
        };
        let (aic, aicc) = information_criteria(loglik, k, n);
        if aicc.is_infinite() {
            notes.push(format!("AICc undefined for n = {n}, k = {k}"));
        }
        rows.push(ComparisonRow {
            model: fit.label().to_string(),
            loglik,
            k,
            aic,
            aicc,
            mse: mse(ds.y(), &fitted),
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        });
    }
    Ok(ModelComparison { n_obs: n, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aicc_singular_at_n_equals_k_plus_one() {
        let (aic, aicc) = information_criteria(-5.0, 3, 4);
        assert_eq!(aic, 16.0);
        assert!(aicc.is_infinite());
    }

    #[test]
    fn aicc_penalty() {
        let (aic, aicc) = information_criteria(-18.64, 3, 10);
        assert!((aicc - aic - 24.0 / 6.0).abs() < 1e-12);
    }
}
