//! Restricted generalized Poisson regression.
//!
//! `P(y | μ, α) = (μ/(1+αμ))^y (1+αy)^{y−1}/y! · exp(−μ(1+αy)/(1+αμ))` with
//! `log μ = x'β`, defined only where `1 + αμ_i > 0` and `1 + αy_i > 0`.

use nalgebra::DVector;

use super::{fit_poisson, BaselineFit, ModelKind};
use crate::data::{linear_predictor, Dataset};
use crate::dist::ln_factorial;
use crate::error::{Error, Result};
use crate::optim::{invert_spd, maximize, numerical_hessian, Bound, MaxSettings, Objective};

/// Closest an estimate may sit to the edge of the constraint set before it
/// counts as having run onto it.
const CONSTRAINT_MARGIN: f64 = 1e-6;
/// Largest tolerated normalization defect of the truncated (α < 0) pmf.
const MASS_TOL: f64 = 1e-3;

fn obs_loglik(y: u64, eta: f64, alpha: f64) -> Option<f64> {
    let mu = eta.exp();
    let yf = y as f64;
    let a_mu = 1.0 + alpha * mu;
    let a_y = 1.0 + alpha * yf;
    if !(a_mu > 0.0 && a_y > 0.0) {
        return None;
    }
    let mut v = yf * (eta - a_mu.ln()) - ln_factorial(y) - mu * a_y / a_mu;
    if y != 1 {
        v += (yf - 1.0) * a_y.ln();
    }
    Some(v)
}

/// RGPR log-likelihood at `(β, α)`; `None` outside the constraint set.
pub fn rgpr_loglik(ds: &Dataset, beta: &DVector<f64>, alpha: f64) -> Result<Option<f64>> {
    let eta = linear_predictor(ds, beta)?;
    Ok(ds
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| obs_loglik(y, e, alpha))
        .sum())
}

struct RgprObjective<'a> {
    ds: &'a Dataset,
}

impl Objective for RgprObjective<'_> {
    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let k = theta.len() - 1;
        let beta = theta.rows(0, k).into_owned();
        rgpr_loglik(self.ds, &beta, theta[k]).ok().flatten()
    }

    fn value_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let k = theta.len() - 1;
        let alpha = theta[k];
        let eta = self.ds.x() * theta.rows(0, k);
        let mut value = 0.0;
        let mut w = DVector::zeros(eta.len());
        let mut da = 0.0;
        for (i, &y) in self.ds.y().iter().enumerate() {
            value += obs_loglik(y, eta[i], alpha)?;
            let mu = eta[i].exp();
            let yf = y as f64;
            let a_mu = 1.0 + alpha * mu;
            let a_y = 1.0 + alpha * yf;
            w[i] = (yf - mu) / (a_mu * a_mu);
            da += -yf * mu / a_mu + yf * (yf - 1.0) / a_y - mu * (yf - mu) / (a_mu * a_mu);
        }
        let mut g = DVector::zeros(k + 1);
        g.rows_mut(0, k).copy_from(&(self.ds.x().transpose() * w));
        g[k] = da;
        value.is_finite().then_some((value, g))
    }
}

/// Total probability mass of the (possibly truncated) pmf at `(μ, α)`.
fn total_mass(mu: f64, alpha: f64) -> f64 {
    let eta = mu.ln();
    let mut total = 0.0;
    for y in 0..100_000u64 {
        match obs_loglik(y, eta, alpha) {
            Some(lp) => {
                let p = lp.exp();
                total += p;
                if alpha >= 0.0 && y as f64 > mu && p < 1e-16 * total {
                    break;
                }
            }
            None => break,
        }
    }
    total
}

pub fn fit_rgpr(ds: &Dataset) -> Result<BaselineFit> {
    let pois = fit_poisson(ds)?;
    let k = ds.n_coef();
    let obj = RgprObjective { ds };
    let mut theta0 = DVector::zeros(k + 1);
    theta0.rows_mut(0, k).copy_from(&pois.beta);
    let init = numerical_hessian(&obj, &theta0).and_then(|h| invert_spd(&(-h)));
    let settings = MaxSettings {
        grad_tol: 1e-8,
        step_tol: 1e-10,
        max_iter: 500,
    };
    let out = maximize(&obj, theta0, &vec![Bound::FREE; k + 1], &settings, init)
        .ok_or_else(|| Error::NonConvergence("RGPR start point infeasible".into()))?;
    let alpha = out.theta[k];
    let beta = out.theta.rows(0, k).into_owned();
    let eta = ds.x() * &beta;

    let y_max = ds.y().iter().copied().max().unwrap_or(0) as f64;
    let mu_max = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
    let slack = (1.0 + alpha * y_max).min(1.0 + alpha * mu_max);
    if slack < CONSTRAINT_MARGIN {
        return Err(Error::NonConvergence(format!(
            "RGPR estimate runs onto the constraint boundary (alpha = {alpha:.6}, \
             min(1 + alpha*max y, 1 + alpha*max mu) = {slack:.3e}); the likelihood is unbounded there"
        )));
    }
    if !out.converged() {
        return Err(Error::NonConvergence(format!(
            "RGPR optimizer stopped ({:?}) after {} iterations (alpha = {alpha:.6})",
            out.termination, out.iterations
        )));
    }
    if alpha < 0.0 {
        for (i, &e) in eta.iter().enumerate() {
            let mass = total_mass(e.exp(), alpha);
            if (mass - 1.0).abs() > MASS_TOL {
                return Err(Error::NonConvergence(format!(
                    "RGPR pmf at observation {} is truncated and sums to {mass:.4} (alpha = {alpha:.6})",
                    i + 1
                )));
            }
        }
    }
    let hess = numerical_hessian(&obj, &out.theta)
        .ok_or_else(|| Error::NonConvergence("Hessian undefined at RGPR optimum".into()))?;
    let cov_all = invert_spd(&(-hess)).ok_or(Error::SingularInformation)?;
    Ok(BaselineFit {
        kind: ModelKind::Rgpr,
        beta,
        extra: Some(alpha),
        extra_se: Some(cov_all[(k, k)].max(0.0).sqrt()),
        cov: cov_all.view((0, 0), (k, k)).into_owned(),
        loglik: out.value,
        converged: true,
        boundary: false,
        iterations: out.iterations,
    })
}
