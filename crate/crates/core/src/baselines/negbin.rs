//! Negative binomial regression with log link, estimated jointly over
//! `(β, log r)`.

use nalgebra::{DMatrix, DVector};

use super::{fit_poisson, BaselineFit, ModelKind};
use crate::data::{linear_predictor, Dataset};
use crate::dist::ln_factorial;
use crate::error::{Error, Result};
use crate::optim::{invert_spd, maximize, numerical_hessian, Bound, MaxSettings, Objective};

/// Beyond this `r` the fit is reported as the Poisson limit.
pub const R_BOUNDARY: f64 = 1e6;
const R_FLOOR: f64 = 1e-8;

/// `log Γ(r + y) − log Γ(r)` and its derivative in `r`.
fn ln_rising(r: f64, y: u64) -> (f64, f64) {
    if y <= 10_000 {
        (0..y).fold((0.0, 0.0), |(v, d), k| {
            let rk = r + k as f64;
            (v + rk.ln(), d + 1.0 / rk)
        })
    } else {
        use statrs::function::gamma::{digamma, ln_gamma};
        let yf = y as f64;
        (ln_gamma(r + yf) - ln_gamma(r), digamma(r + yf) - digamma(r))
    }
}

fn obs_loglik(y: u64, eta: f64, r: f64) -> f64 {
    let mu = eta.exp();
    let yf = y as f64;
    ln_rising(r, y).0 - ln_factorial(y) - r * (mu / r).ln_1p() + yf * (eta - (r + mu).ln())
}

/// Negative binomial log-likelihood at `(β, r)`.
pub fn negbin_loglik(ds: &Dataset, beta: &DVector<f64>, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "r must be positive, got {r}"
        )));
    }
    let eta = linear_predictor(ds, beta)?;
    Ok(ds
        .y()
        .iter()
        .zip(eta.iter())
        .map(|(&y, &e)| obs_loglik(y, e, r))
        .sum())
}

struct NegBinObjective<'a> {
    ds: &'a Dataset,
}

impl Objective for NegBinObjective<'_> {
    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let k = theta.len() - 1;
        let beta = theta.rows(0, k).into_owned();
        let v = negbin_loglik(self.ds, &beta, theta[k].exp()).ok()?;
        v.is_finite().then_some(v)
    }

    fn value_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let k = theta.len() - 1;
        let r = theta[k].exp();
        let beta = theta.rows(0, k).into_owned();
        let eta = self.ds.x() * beta;
        let mut value = 0.0;
        let mut dbeta_w = DVector::zeros(eta.len());
        let mut dr = 0.0;
        for (i, &y) in self.ds.y().iter().enumerate() {
            let mu = eta[i].exp();
            let yf = y as f64;
            value += obs_loglik(y, eta[i], r);
            dbeta_w[i] = (yf - mu) * r / (r + mu);
            dr += ln_rising(r, y).1 - (mu / r).ln_1p() + (mu - yf) / (r + mu);
        }
        if !value.is_finite() {
            return None;
        }
        let mut g = DVector::zeros(k + 1);
        g.rows_mut(0, k)
            .copy_from(&(self.ds.x().transpose() * dbeta_w));
        g[k] = dr * r;
        Some((value, g))
    }

    /// Newton curvature where the surface is locally concave.
    fn curvature(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let h = numerical_hessian(self, theta)?;
        (-h).cholesky().map(|c| c.inverse())
    }
}

fn poisson_limit(pois: BaselineFit) -> BaselineFit {
    BaselineFit {
        kind: ModelKind::NegBin,
        extra: None,
        extra_se: None,
        boundary: true,
        ..pois
    }
}

pub fn fit_negbin(ds: &Dataset) -> Result<BaselineFit> {
    let pois = fit_poisson(ds)?;
    let mu = pois.fitted_means(ds);
    let y = ds.y_f64();
    let n = y.len() as f64;
    // Moment estimate of 1/r from the Poisson residuals.
    let excess: f64 = y
        .iter()
        .zip(&mu)
        .map(|(&yi, &m)| ((yi - m).powi(2) - yi) / (m * m))
        .sum::<f64>()
        / n;
    // The tail in log r is flat and not concave, so a poor start can stall
    // there. Take the best of the moment estimate and a coarse scan.
    let moment = if excess > 0.0 {
        (1.0 / excess).clamp(1e-2, 1e5)
    } else {
        1e3
    };
    let r0 = (-4..=13)
        .map(|e| (e as f64).exp())
        .chain(std::iter::once(moment))
        .filter_map(|r| Some((r, negbin_loglik(ds, &pois.beta, r).ok()?)))
        .filter(|(_, v)| v.is_finite())
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(moment, |(r, _)| r);

    let k = ds.n_coef();
    let obj = NegBinObjective { ds };
    let mut theta0 = DVector::zeros(k + 1);
    theta0.rows_mut(0, k).copy_from(&pois.beta);
    theta0[k] = r0.ln();
    let mut bounds = vec![Bound::FREE; k + 1];
    bounds[k] = Bound {
        lower: R_FLOOR.ln(),
        upper: R_BOUNDARY.ln(),
    };
    let init = numerical_hessian(&obj, &theta0).and_then(|h| invert_spd(&(-h)));
    let settings = MaxSettings {
        grad_tol: 1e-8,
        step_tol: 1e-10,
        max_iter: 500,
    };
    let out = maximize(&obj, theta0, &bounds, &settings, init)
        .ok_or_else(|| Error::NonConvergence("negative binomial start point infeasible".into()))?;
    if out.at_upper[k] {
        return Ok(poisson_limit(pois));
    }
    if !out.converged() {
        return Err(Error::NonConvergence(format!(
            "negative binomial optimizer stopped ({:?}) after {} iterations",
            out.termination, out.iterations
        )));
    }
    let r = out.theta[k].exp();
    let hess = numerical_hessian(&obj, &out.theta)
        .ok_or_else(|| Error::NonConvergence("Hessian undefined at optimum".into()))?;
    let cov_log = invert_spd(&(-hess)).ok_or(Error::SingularInformation)?;
    let cov_beta: DMatrix<f64> = cov_log.view((0, 0), (k, k)).into_owned();
    Ok(BaselineFit {
        kind: ModelKind::NegBin,
        beta: out.theta.rows(0, k).into_owned(),
        extra: Some(r),
        extra_se: Some(r * cov_log[(k, k)].max(0.0).sqrt()),
        cov: cov_beta,
        loglik: out.value,
        converged: true,
        boundary: false,
        iterations: out.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::poisson_loglik;

    fn dataset(x: &[f64], y: &[u64]) -> Dataset {
        Dataset::new(
            "y",
            y.to_vec(),
            vec!["x".into()],
            DMatrix::from_column_slice(x.len(), 1, x),
        )
        .unwrap()
    }

    #[test]
    fn huge_r_matches_poisson() {
        let ds = dataset(&[0.0, 1.0, 2.0, 3.0, 4.0], &[1, 3, 2, 6, 9]);
        let beta = DVector::from_vec(vec![0.3, 0.4]);
        let nb = negbin_loglik(&ds, &beta, 1e8).unwrap();
        let p = poisson_loglik(&ds, &beta).unwrap();
        assert!((nb - p).abs() < 1e-4, "{nb} vs {p}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ds = dataset(&[0.0, 1.0, 2.0, 3.0, 4.0, 2.5], &[0, 3, 2, 9, 4, 12]);
        let obj = NegBinObjective { ds: &ds };
        let theta = DVector::from_vec(vec![0.2, 0.5, 0.7]);
        let (_, g) = obj.value_grad(&theta).unwrap();
        for j in 0..3 {
            let h = 1e-6;
            let mut up = theta.clone();
            up[j] += h;
            let mut dn = theta.clone();
            dn[j] -= h;
            let fd = (obj.value(&up).unwrap() - obj.value(&dn).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() < 1e-6 * (1.0 + g[j].abs()),
                "{j}: {fd} vs {}",
                g[j]
            );
        }
    }
}
