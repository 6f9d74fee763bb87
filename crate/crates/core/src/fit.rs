//! Maximum-likelihood COM-Poisson regression with link `log λ_i = x_i'β`.
//!
//! The log-likelihood `Σ y_i log λ_i − ν Σ log y_i! − Σ log Z(λ_i, ν)` is an
//! exponential family in `(β, ν)` with sufficient statistics `(X'y, −Σ log y!)`,
//! so the score is "observed minus expected sufficient statistic" and the
//! information is the covariance of the sufficient statistics:
//!
//! ```text
//! I_ββ = X' diag(var Y_i) X
//! I_βν = −X' cov(Y_i, log Y_i!)
//! I_νν = Σ var(log Y_i!)
//! ```
//!
//! Fitting runs BFGS over `(β, log ν)` with `log ν` boxed between the
//! configured floor and ceiling.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::baselines::fit_poisson;
use crate::data::{linear_predictor, Dataset};
use crate::dist::{self, ln_factorial, ComParams, Moments, SeriesPolicy};
use crate::error::{Error, Result};
use crate::optim::{invert_spd, maximize, Bound, MaxSettings, Objective};

/// Datasets at least this large evaluate per-observation moments in parallel.
const PAR_THRESHOLD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSettings {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub nu_floor: f64,
    pub nu_ceiling: f64,
    pub series: SeriesPolicy,
}

impl Default for OptimSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            step_tol: 1e-10,
            max_iter: 500,
            nu_floor: 1e-6,
            nu_ceiling: 1e3,
            series: SeriesPolicy::default(),
        }
    }
}

impl OptimSettings {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.grad_tol) || !unit(self.step_tol) {
            return Err(Error::InvalidParameter(
                "grad_tol and step_tol must lie in (0, 1)".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be positive".into()));
        }
        if !(self.nu_floor > 0.0 && self.nu_floor < 1.0 && self.nu_ceiling > 1.0)
            || !self.nu_ceiling.is_finite()
        {
            return Err(Error::InvalidParameter(
                "need 0 < nu_floor < 1 < nu_ceiling < inf".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuBoundary {
    Floor,
    Ceiling,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Coefficients on the `log λ` scale, intercept first.
    pub beta: DVector<f64>,
    pub nu: f64,
    /// Covariance of `(β, ν)`. When `ν` sits on a boundary its variance is
    /// `+∞` and the `β` block is conditional on that `ν`.
    pub cov: DMatrix<f64>,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `β / ν`, for crude comparison with Poisson coefficients.
    pub scaled_beta: DVector<f64>,
    pub boundary: Option<NuBoundary>,
    /// Log-likelihood after each accepted optimizer step.
    pub trace: Vec<f64>,
    pub names: Vec<String>,
}

impl FitResult {
    /// Standard errors of `β` followed by that of `ν`.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.cov.nrows())
            .map(|j| self.cov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// `None` when `ν` is on a boundary and its SE is meaningless.
    pub fn nu_se(&self) -> Option<f64> {
        if self.boundary.is_some() {
            return None;
        }
        let k = self.beta.len();
        Some(self.cov[(k, k)].max(0.0).sqrt())
    }

    pub fn log_lambda(&self, ds: &Dataset) -> Result<DVector<f64>> {
        linear_predictor(ds, &self.beta)
    }

    /// Per-observation fitted distributions.
    pub fn params(&self, ds: &Dataset) -> Result<Vec<ComParams>> {
        self.log_lambda(ds)?
            .iter()
            .map(|&e| ComParams::from_log_lambda(e, self.nu))
            .collect()
    }
}

/// Log-likelihood, score and information of the COM-Poisson regression on
/// one dataset.
#[derive(Debug, Clone, Copy)]
pub struct ComModel<'a> {
    ds: &'a Dataset,
    policy: SeriesPolicy,
}

impl<'a> ComModel<'a> {
    pub fn new(ds: &'a Dataset, policy: SeriesPolicy) -> Self {
        Self { ds, policy }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    fn map_obs<T, F>(&self, eta: &DVector<f64>, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(f64) -> Result<T> + Sync,
    {
        if eta.len() >= PAR_THRESHOLD {
            eta.as_slice().par_iter().map(|&e| f(e)).collect()
        } else {
            eta.iter().map(|&e| f(e)).collect()
        }
    }

    fn sum_log_fact(&self) -> f64 {
        self.ds.y().iter().map(|&y| ln_factorial(y)).sum()
    }

    pub fn loglik(&self, beta: &DVector<f64>, nu: f64) -> Result<f64> {
        let eta = linear_predictor(self.ds, beta)?;
        let policy = self.policy;
        let log_z = self.map_obs(&eta, |e| {
            dist::log_normalizer(ComParams::from_log_lambda(e, nu)?, policy)
        })?;
        let linear: f64 = self
            .ds
            .y()
            .iter()
            .zip(eta.iter())
            .map(|(&y, &e)| y as f64 * e)
            .sum();
        Ok(linear - nu * self.sum_log_fact() - log_z.iter().sum::<f64>())
    }

    pub fn moments(&self, beta: &DVector<f64>, nu: f64) -> Result<Vec<Moments>> {
        let eta = linear_predictor(self.ds, beta)?;
        let policy = self.policy;
        self.map_obs(&eta, |e| {
            dist::moments(ComParams::from_log_lambda(e, nu)?, policy)
        })
    }

    fn value_and_score(&self, beta: &DVector<f64>, nu: f64) -> Result<(f64, DVector<f64>)> {
        let eta = linear_predictor(self.ds, beta)?;
        let m = self.moments(beta, nu)?;
        let k = beta.len();
        let mut value = -nu * self.sum_log_fact();
        let mut resid = DVector::zeros(m.len());
        let mut d_nu = 0.0;
        for (i, (&y, mi)) in self.ds.y().iter().zip(&m).enumerate() {
            value += y as f64 * eta[i] - mi.log_z;
            resid[i] = y as f64 - mi.mean;
            d_nu += mi.mean_log_fact - ln_factorial(y);
        }
        let mut g = DVector::zeros(k + 1);
        g.rows_mut(0, k)
            .copy_from(&(self.ds.x().transpose() * resid));
        g[k] = d_nu;
        Ok((value, g))
    }

    /// Gradient of the log-likelihood in `(β, ν)`.
    pub fn score(&self, beta: &DVector<f64>, nu: f64) -> Result<DVector<f64>> {
        Ok(self.value_and_score(beta, nu)?.1)
    }

    /// Expected (= observed) information in `(β, ν)`, without a singularity
    /// check.
    pub fn information_matrix(&self, beta: &DVector<f64>, nu: f64) -> Result<DMatrix<f64>> {
        let m = self.moments(beta, nu)?;
        let x = self.ds.x();
        let k = beta.len();
        let mut info = DMatrix::zeros(k + 1, k + 1);
        for (i, mi) in m.iter().enumerate() {
            let row = x.row(i);
            for a in 0..k {
                for b in a..k {
                    info[(a, b)] += mi.var * row[a] * row[b];
                }
                info[(a, k)] -= mi.cov_y_log_fact * row[a];
            }
            info[(k, k)] += mi.var_log_fact;
        }
        for a in 0..=k {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        Ok(info)
    }

    pub fn fisher_information(&self, beta: &DVector<f64>, nu: f64) -> Result<DMatrix<f64>> {
        if !(nu > 0.0) {
            return Err(Error::InvalidParameter("information needs nu > 0".into()));
        }
        let info = self.information_matrix(beta, nu)?;
        invert_spd(&info).ok_or(Error::SingularInformation)?;
        Ok(info)
    }
}

pub fn loglik(ds: &Dataset, beta: &DVector<f64>, nu: f64) -> Result<f64> {
    ComModel::new(ds, SeriesPolicy::default()).loglik(beta, nu)
}

pub fn score(ds: &Dataset, beta: &DVector<f64>, nu: f64) -> Result<DVector<f64>> {
    ComModel::new(ds, SeriesPolicy::default()).score(beta, nu)
}

pub fn fisher_information(ds: &Dataset, beta: &DVector<f64>, nu: f64) -> Result<DMatrix<f64>> {
    ComModel::new(ds, SeriesPolicy::default()).fisher_information(beta, nu)
}

/// Optimizer view: `θ = (β, log ν)`, or `θ = β` when `ν` is held fixed.
struct ComObjective<'a> {
    model: ComModel<'a>,
    fixed_nu: Option<f64>,
}

impl ComObjective<'_> {
    fn split(&self, theta: &DVector<f64>) -> (DVector<f64>, f64) {
        match self.fixed_nu {
            Some(nu) => (theta.clone(), nu),
            None => {
                let k = theta.len() - 1;
                (theta.rows(0, k).into_owned(), theta[k].exp())
            }
        }
    }
}

impl Objective for ComObjective<'_> {
    fn value(&self, theta: &DVector<f64>) -> Option<f64> {
        let (beta, nu) = self.split(theta);
        self.model.loglik(&beta, nu).ok().filter(|v| v.is_finite())
    }

    fn value_grad(&self, theta: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let (beta, nu) = self.split(theta);
        let (v, mut g) = self.model.value_and_score(&beta, nu).ok()?;
        if !v.is_finite() {
            return None;
        }
        let k = beta.len();
        if self.fixed_nu.is_some() {
            g = g.rows(0, k).into_owned();
        } else {
            g[k] *= nu;
        }
        Some((v, g))
    }

    fn curvature(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (beta, nu) = self.split(theta);
        let info = self.model.information_matrix(&beta, nu).ok()?;
        let k = beta.len();
        if self.fixed_nu.is_some() {
            return invert_spd(&info.view((0, 0), (k, k)).into_owned());
        }
        // Fisher scoring on the log ν scale. Its step maps to the Newton
        // step on the natural (β, ν) scale, where the likelihood is concave.
        let mut fisher = info;
        for j in 0..=k {
            fisher[(j, k)] *= nu;
            fisher[(k, j)] *= nu;
        }
        invert_spd(&fisher)
    }
}

fn max_settings(s: &OptimSettings) -> MaxSettings {
    MaxSettings {
        grad_tol: s.grad_tol,
        step_tol: s.step_tol,
        max_iter: s.max_iter,
    }
}

fn start_beta(ds: &Dataset) -> DVector<f64> {
    match fit_poisson(ds) {
        Ok(p) => p.beta,
        Err(_) => {
            let mean = ds.y().iter().sum::<u64>() as f64 / ds.n_obs() as f64;
            let mut b = DVector::zeros(ds.n_coef());
            b[0] = mean.max(1e-3).ln();
            b
        }
    }
}

/// Sign-bearing slope of the profile likelihood in ν: the ν component of
/// the Newton step, which accounts for β not yet being optimal.
fn profile_trend(model: ComModel<'_>, beta: &DVector<f64>, nu: f64) -> Option<f64> {
    let info = model.information_matrix(beta, nu).ok()?;
    let g = model.score(beta, nu).ok()?;
    let step = invert_spd(&info)? * g;
    let k = beta.len();
    step[k].is_finite().then_some(step[k])
}

/// Starting β for a refit at `bound_nu`: the current β (λ held, as in the
/// Bernoulli limit) or β scaled along the ray β/ν (modes held, as in
/// degenerate two-point limits), whichever has the higher likelihood.
fn probe_start(
    model: ComModel<'_>,
    beta: &DVector<f64>,
    nu: f64,
    bound_nu: f64,
) -> Option<DVector<f64>> {
    let scaled = beta * (bound_nu / nu);
    [beta.clone(), scaled]
        .into_iter()
        .filter_map(|b| {
            let ll = model.loglik(&b, bound_nu).ok().filter(|v| v.is_finite())?;
            Some((ll, b))
        })
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, b)| b)
}

struct BetaStep {
    beta: DVector<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

fn maximize_beta(
    model: ComModel<'_>,
    nu: f64,
    beta0: DVector<f64>,
    settings: &OptimSettings,
) -> Result<BetaStep> {
    let obj = ComObjective {
        model,
        fixed_nu: Some(nu),
    };
    let k = beta0.len();
    let init = model
        .information_matrix(&beta0, nu)
        .ok()
        .and_then(|i| invert_spd(&i.view((0, 0), (k, k)).into_owned()));
    let out = maximize(
        &obj,
        beta0,
        &vec![Bound::FREE; k],
        &max_settings(settings),
        init,
    )
    .ok_or_else(|| Error::NonConvergence("log-likelihood undefined at start".into()))?;
    Ok(BetaStep {
        converged: out.converged(),
        iterations: out.iterations,
        loglik: out.value,
        trace: out.trace,
        beta: out.theta,
    })
}

/// Covariance with `ν` held at a boundary: `β` block from `I_ββ`, infinite
/// variance for `ν`.
fn boundary_cov(info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = info.nrows() - 1;
    let beta_cov =
        invert_spd(&info.view((0, 0), (k, k)).into_owned()).ok_or(Error::SingularInformation)?;
    let mut cov = DMatrix::zeros(k + 1, k + 1);
    cov.view_mut((0, 0), (k, k)).copy_from(&beta_cov);
    cov[(k, k)] = f64::INFINITY;
    Ok(cov)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ds: &Dataset,
    beta: DVector<f64>,
    nu: f64,
    cov: DMatrix<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    boundary: Option<NuBoundary>,
    trace: Vec<f64>,
    n_params: usize,
) -> FitResult {
    let scaled_beta = &beta / nu;
    FitResult {
        beta,
        nu,
        cov,
        loglik,
        n_obs: ds.n_obs(),
        n_params,
        converged,
        iterations,
        scaled_beta,
        boundary,
        trace,
        names: ds.names().to_vec(),
    }
}

/// Joint maximum-likelihood fit of `(β, ν)`.
///
/// Starts from the Poisson estimate at `ν = 1`. If the likelihood keeps
/// increasing all the way to `nu_floor` or `nu_ceiling` (geometric or
/// Bernoulli limits), `ν` is pinned there, `β` is re-optimized and the
/// result carries a boundary flag. A run that exhausts `max_iter` is
/// returned with `converged = false`.
pub fn fit_com(ds: &Dataset, settings: &OptimSettings) -> Result<FitResult> {
    settings.validate()?;
    let model = ComModel::new(ds, settings.series);
    let k = ds.n_coef();
    let beta0 = start_beta(ds);
    let mut theta0 = DVector::zeros(k + 1);
    theta0.rows_mut(0, k).copy_from(&beta0);

    // At ν = 1 the log-ν and ν scales coincide.
    let init = model
        .information_matrix(&beta0, 1.0)
        .ok()
        .and_then(|i| invert_spd(&i));
    let (lo, hi) = (settings.nu_floor.ln(), settings.nu_ceiling.ln());
    let mut bounds = vec![Bound::FREE; k + 1];
    bounds[k] = Bound {
        lower: lo,
        upper: hi,
    };
    let obj = ComObjective {
        model,
        fixed_nu: None,
    };
    let out = maximize(&obj, theta0, &bounds, &max_settings(settings), init)
        .ok_or_else(|| Error::NonConvergence("log-likelihood undefined at start".into()))?;

    let mut beta: DVector<f64> = out.theta.rows(0, k).into_owned();
    let mut nu = out.theta[k].exp();
    let mut loglik = out.value;
    let mut converged = out.converged();
    let mut iterations = out.iterations;
    let mut trace = out.trace.clone();
    let mut boundary = if out.at_upper[k] {
        Some(NuBoundary::Ceiling)
    } else if out.at_lower[k] {
        Some(NuBoundary::Floor)
    } else {
        None
    };

    // The likelihood is jointly concave in (β, ν), so the profile in ν is
    // concave too. If it is still rising towards a bound where the optimizer
    // stopped, refitting β with ν pinned at that bound settles whether the
    // supremum lies there.
    let trend = profile_trend(model, &beta, nu).unwrap_or(out.grad[k]);
    let settled = converged && trend.abs() <= 1e-6 * (1.0 + nu);
    if boundary.is_none() && trend != 0.0 && !settled {
        let (side, bound_nu) = if trend > 0.0 {
            (NuBoundary::Ceiling, settings.nu_ceiling)
        } else {
            (NuBoundary::Floor, settings.nu_floor)
        };
        if let Some(start) = probe_start(model, &beta, nu, bound_nu) {
            if let Ok(refit) = maximize_beta(model, bound_nu, start, settings) {
                if refit.loglik >= loglik {
                    beta = refit.beta;
                    nu = bound_nu;
                    loglik = refit.loglik;
                    converged = refit.converged;
                    iterations += refit.iterations;
                    trace.push(loglik);
                    boundary = Some(side);
                }
            }
        }
    }

    // Stopped on a bound without meeting the tolerances: finish β there.
    if boundary.is_some() && !converged {
        if let Ok(refit) = maximize_beta(model, nu, beta.clone(), settings) {
            if refit.loglik >= loglik {
                beta = refit.beta;
                loglik = refit.loglik;
                converged = refit.converged;
                iterations += refit.iterations;
                trace.push(loglik);
            }
        }
    }

    let info = model.information_matrix(&beta, nu)?;
    let cov = match boundary {
        Some(_) => boundary_cov(&info)?,
        None => invert_spd(&info).ok_or(Error::SingularInformation)?,
    };
    Ok(finish(
        ds,
        beta,
        nu,
        cov,
        loglik,
        converged,
        iterations,
        boundary,
        trace,
        k + 1,
    ))
}

/// Fit of `β` with `ν` held fixed (`ν = 1` gives Poisson regression). The
/// `ν` row and column of the covariance are zero.
pub fn fit_com_fixed_nu(ds: &Dataset, nu: f64, settings: &OptimSettings) -> Result<FitResult> {
    settings.validate()?;
    if !(nu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "fixed nu must be positive, got {nu}"
        )));
    }
    let model = ComModel::new(ds, settings.series);
    let k = ds.n_coef();
    let step = maximize_beta(model, nu, start_beta(ds), settings)?;
    let info = model.information_matrix(&step.beta, nu)?;
    let beta_cov =
        invert_spd(&info.view((0, 0), (k, k)).into_owned()).ok_or(Error::SingularInformation)?;
    let mut cov = DMatrix::zeros(k + 1, k + 1);
    cov.view_mut((0, 0), (k, k)).copy_from(&beta_cov);
    Ok(finish(
        ds,
        step.beta,
        nu,
        cov,
        step.loglik,
        step.converged,
        step.iterations,
        None,
        step.trace,
        k,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FittedValueKind {
    MeanApprox,
    Median,
}

/// Fitted values from the closed-form mean approximation or the fitted
/// medians.
///
/// The approximation is refused unless `ν ≤ 1` or `λ_i > 10^ν` holds for
/// every observation.
pub fn fitted_values(ds: &Dataset, fr: &FitResult, kind: FittedValueKind) -> Result<Vec<f64>> {
    let params = fr.params(ds)?;
    match kind {
        FittedValueKind::MeanApprox => params
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if !dist::mean_approx_is_accurate(p) {
                    return Err(Error::ApproximationInvalid {
                        observation: i + 1,
                        nu: p.nu(),
                        lambda: p.lambda(),
                    });
                }
                dist::mean_approx(p)
            })
            .collect(),
        FittedValueKind::Median => params
            .iter()
            .map(|&p| Ok(dist::quantile(0.5, p)? as f64))
            .collect(),
    }
}

/// Exact fitted means `E(Y_i)` by series summation.
pub fn fitted_means(ds: &Dataset, fr: &FitResult, policy: SeriesPolicy) -> Result<Vec<f64>> {
    fr.params(ds)?
        .iter()
        .map(|&p| dist::mean_exact(p, policy))
        .collect()
}
