//! Poisson and logistic regression by Newton's method on the canonical link.

use nalgebra::{DMatrix, DVector};

use super::{BaselineFit, ModelKind};
use crate::data::{linear_predictor, Dataset};
use crate::dist::ln_factorial;
use crate::error::{Error, Result};
use crate::optim::invert_spd;

const MAX_ITER: usize = 100;

struct Canonical {
    /// Mean and variance as functions of the linear predictor.
    mean_var: fn(f64) -> (f64, f64),
    /// Log-likelihood contribution of one observation, without constants.
    kernel: fn(f64, f64) -> f64,
}

const POISSON: Canonical = Canonical {
    mean_var: |eta| {
        let mu = eta.exp();
        (mu, mu)
    },
    kernel: |y, eta| y * eta - eta.exp(),
};

const LOGISTIC: Canonical = Canonical {
    mean_var: |eta| {
        let p = 1.0 / (1.0 + (-eta).exp());
        (p, p * (1.0 - p))
    },
    // y·η − log(1 + e^η), written to avoid overflow.
    kernel: |y, eta| y * eta - (eta.max(0.0) + (-eta.abs()).exp().ln_1p()),
};

struct NewtonOutcome {
    beta: DVector<f64>,
    cov: DMatrix<f64>,
    kernel_sum: f64,
    converged: bool,
    iterations: usize,
}

fn newton(ds: &Dataset, family: &Canonical, beta0: DVector<f64>) -> Result<NewtonOutcome> {
    let x = ds.x();
    let y = ds.y_f64();
    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = x * beta;
        y.iter()
            .zip(eta.iter())
            .map(|(&yi, &e)| (family.kernel)(yi, e))
            .sum()
    };
    let mut beta = beta0;
    let mut f = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::zeros(beta.len(), beta.len());

    while iterations < MAX_ITER {
        let eta = x * &beta;
        let (mut resid, mut w) = (DVector::zeros(y.len()), DVector::zeros(y.len()));
        for i in 0..y.len() {
            let (mu, var) = (family.mean_var)(eta[i]);
            resid[i] = y[i] - mu;
            w[i] = var;
        }
        let score = x.transpose() * &resid;
        info = weighted_crossprod(x, &w);
        let Some(inv) = invert_spd(&info) else {
            break;
        };
        let step = &inv * &score;
        // Newton decrement; scale-free stopping rule.
        if score.dot(&step).abs() < 1e-20 * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let fc = objective(&cand);
            if fc.is_finite() && fc >= f - 1e-12 * f.abs() {
                next = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = next else {
            break;
        };
        iterations += 1;
        let delta = (&cand - &beta).amax();
        beta = cand;
        f = fc;
        if delta <= 1e-12 * (1.0 + beta.amax()) {
            converged = true;
            let eta = x * &beta;
            let w = DVector::from_iterator(y.len(), eta.iter().map(|&e| (family.mean_var)(e).1));
            info = weighted_crossprod(x, &w);
            break;
        }
    }
    let cov = invert_spd(&info)
        .unwrap_or_else(|| DMatrix::from_element(beta.len(), beta.len(), f64::NAN));
    Ok(NewtonOutcome {
        beta,
        cov,
        kernel_sum: f,
        converged,
        iterations,
    })
}

pub(crate) fn weighted_crossprod(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut wx = x.clone();
    for (i, mut row) in wx.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.transpose() * wx
}

/// Poisson log-likelihood `Σ (y_i η_i − e^{η_i} − log y_i!)`.
pub fn poisson_loglik(ds: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    let eta = linear_predictor(ds, beta)?;
    Ok(ds
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| y as f64 * e - e.exp() - ln_factorial(y))
        .sum())
}

pub fn fit_poisson(ds: &Dataset) -> Result<BaselineFit> {
    let n = ds.n_obs() as f64;
    let total: u64 = ds.y().iter().sum();
    if total == 0 {
        return Err(Error::NonConvergence(
            "all counts are zero; the Poisson MLE lies at the boundary".into(),
        ));
    }
    let mut beta0 = DVector::zeros(ds.n_coef());
    beta0[0] = (total as f64 / n).ln();
    let out = newton(ds, &POISSON, beta0)?;
    if !out.converged {
        return Err(Error::NonConvergence(format!(
            "Poisson Newton iterations stalled after {} steps",
            out.iterations
        )));
    }
    let loglik = out.kernel_sum - ds.y().iter().map(|&y| ln_factorial(y)).sum::<f64>();
    Ok(BaselineFit {
        kind: ModelKind::Poisson,
        beta: out.beta,
        extra: None,
        extra_se: None,
        cov: out.cov,
        loglik,
        converged: true,
        boundary: false,
        iterations: out.iterations,
    })
}

pub fn fit_logistic(ds: &Dataset) -> Result<BaselineFit> {
    if let Some((row, &value)) = ds.y().iter().enumerate().find(|(_, &v)| v > 1) {
        return Err(Error::NonBinaryResponse {
            row: row + 1,
            value,
        });
    }
    let out = newton(ds, &LOGISTIC, DVector::zeros(ds.n_coef()))?;
    let eta = ds.x() * &out.beta;
    let separated = ds
        .y()
        .iter()
        .zip(eta.iter())
        .all(|(&y, &e)| (y == 1) == (e > 0.0));
    if separated && (out.kernel_sum > -1e-6 || !out.converged || out.beta.amax() > 30.0) {
        return Err(Error::Separation);
    }
    if !out.converged {
        return Err(Error::NonConvergence(format!(
            "logistic Newton iterations stalled after {} steps",
            out.iterations
        )));
    }
    Ok(BaselineFit {
        kind: ModelKind::Logistic,
        beta: out.beta,
        extra: None,
        extra_se: None,
        cov: out.cov,
        loglik: out.kernel_sum,
        converged: true,
        boundary: false,
        iterations: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(x: &[f64], y: &[u64]) -> Dataset {
        Dataset::new(
            "y",
            y.to_vec(),
            vec!["x".into()],
            DMatrix::from_column_slice(x.len(), 1, x),
        )
        .unwrap()
    }

    fn intercept_only(y: &[u64]) -> Dataset {
        Dataset::from_design(
            "y",
            y.to_vec(),
            DMatrix::from_element(y.len(), 1, 1.0),
            vec!["(Intercept)".into()],
        )
        .unwrap()
    }

    #[test]
    fn constant_counts_give_log_c() {
        let ds = intercept_only(&[4, 4, 4, 4, 4]);
        let fit = fit_poisson(&ds).unwrap();
        assert!((fit.beta[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn balanced_coin_intercept_zero() {
        let ds = intercept_only(&[0, 1, 0, 1, 1, 0]);
        let fit = fit_logistic(&ds).unwrap();
        assert!(fit.beta[0].abs() < 1e-12);
        // SE of the logit for p = 1/2 is sqrt(4/n).
        assert!((fit.standard_errors()[0] - (4.0f64 / 6.0).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn separated_data_rejected() {
        let ds = dataset(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[0, 0, 0, 1, 1, 1]);
        assert!(matches!(fit_logistic(&ds), Err(Error::Separation)));
    }

    #[test]
    fn non_binary_rejected_for_logistic() {
        let ds = dataset(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 2, 1]);
        assert!(matches!(
            fit_logistic(&ds),
            Err(Error::NonBinaryResponse { row: 3, value: 2 })
        ));
    }

    #[test]
    fn poisson_loglik_matches_fit() {
        let ds = dataset(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1, 3, 2, 6, 9]);
        let fit = fit_poisson(&ds).unwrap();
        let ll = poisson_loglik(&ds, &fit.beta).unwrap();
        assert!((ll - fit.loglik).abs() < 1e-10);
        // Score equations hold at the MLE.
        let mu: Vec<f64> = fit.fitted_means(&ds);
        let s0: f64 = ds.y().iter().zip(&mu).map(|(&y, m)| y as f64 - m).sum();
        assert!(s0.abs() < 1e-9);
    }
}
