//! Leverage and residual diagnostics for fitted COM-Poisson regressions.
//!
//! The weight matrix is `W = diag(var(Y_i))` under the fitted model, the
//! canonical-link GLM weight, so at `ν = 1` everything reduces to the usual
//! Poisson diagnostics.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::Serialize;

use crate::data::Dataset;
use crate::dist::{self, ln_factorial, ComParams, SeriesPolicy};
use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::optim::invert_spd;

/// Tolerance on `log λ` when solving for the saturated rate.
const ROOT_TOL: f64 = 1e-10;
const ROOT_MAX_ITER: usize = 200;
/// Absolute deviance-residual size beyond which an observation is flagged.
pub const RESIDUAL_FLAG: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DevianceKind {
    Exact,
    Approx,
}

/// A per-observation problem; `observation` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObsNote {
    pub observation: usize,
    pub message: String,
}

/// Residuals with `None` where the residual is undefined, explained in
/// `notes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub values: Vec<Option<f64>>,
    pub notes: Vec<ObsNote>,
}

fn check_fit(ds: &Dataset, fr: &FitResult) -> Result<Vec<ComParams>> {
    if !fr.converged {
        return Err(Error::NonConvergence(
            "diagnostics need a converged fit".into(),
        ));
    }
    if fr.beta.len() != ds.n_coef() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_coef(),
            got: fr.beta.len(),
        });
    }
    fr.params(ds)
}

fn variances(params: &[ComParams], policy: SeriesPolicy) -> Result<Vec<(f64, f64)>> {
    params
        .iter()
        .map(|&p| {
            let m = dist::moments(p, policy)?;
            Ok((m.mean, m.var))
        })
        .collect()
}

fn leverage_from(ds: &Dataset, w: &[f64]) -> Result<Vec<f64>> {
    let x = ds.x();
    let mut xtwx = nalgebra::DMatrix::zeros(x.ncols(), x.ncols());
    for (i, &wi) in w.iter().enumerate() {
        let row = x.row(i);
        xtwx += row.transpose() * row * wi;
    }
    let inv = invert_spd(&xtwx).ok_or(Error::SingularInformation)?;
    Ok((0..x.nrows())
        .map(|i| {
            let xi: DVector<f64> = x.row(i).transpose();
            (w[i] * xi.dot(&(&inv * &xi))).clamp(0.0, 1.0)
        })
        .collect())
}

/// Diagonal of `H = W^{1/2} X (X'WX)^{-1} X' W^{1/2}`.
pub fn hat_diagonal(ds: &Dataset, fr: &FitResult) -> Result<Vec<f64>> {
    let params = check_fit(ds, fr)?;
    let mv = variances(&params, SeriesPolicy::default())?;
    let w: Vec<f64> = mv.iter().map(|&(_, v)| v).collect();
    leverage_from(ds, &w)
}

fn undefined_leverage(i: usize) -> ObsNote {
    ObsNote {
        observation: i + 1,
        message: "leverage is 1; residual undefined".into(),
    }
}

fn pearson_from(y: &[u64], mv: &[(f64, f64)], h: &[f64]) -> Residuals {
    let mut notes = Vec::new();
    let values = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            let (mu, w) = mv[i];
            let denom = w * (1.0 - h[i]);
            if !(denom > 0.0) {
                notes.push(undefined_leverage(i));
                return None;
            }
            Some((yi as f64 - mu) / denom.sqrt())
        })
        .collect();
    Residuals { values, notes }
}

/// `(y_i − μ̂_i) / sqrt(w_i (1 − h_i))` with exact fitted means and variances.
pub fn pearson_residuals(ds: &Dataset, fr: &FitResult) -> Result<Residuals> {
    let params = check_fit(ds, fr)?;
    let mv = variances(&params, SeriesPolicy::default())?;
    let w: Vec<f64> = mv.iter().map(|&(_, v)| v).collect();
    let h = leverage_from(ds, &w)?;
    Ok(pearson_from(ds.y(), &mv, &h))
}

/// `log λ` at which the COM-Poisson mean equals `y > 0`, for fixed `ν`.
pub fn saturated_log_lambda(y: u64, nu: f64, policy: SeriesPolicy) -> Result<f64> {
    if y == 0 {
        return Err(Error::InvalidParameter(
            "the saturated rate for y = 0 lies at lambda -> 0".into(),
        ));
    }
    let target = y as f64;
    if nu == 0.0 {
        return Ok((target / (1.0 + target)).ln());
    }
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut l = nu * (target + 0.5).ln();
    if nu < 1.0 && l >= 0.0 {
        l = l.min(nu * target.ln());
    }
    for _ in 0..ROOT_MAX_ITER {
        let eval = ComParams::from_log_lambda(l, nu).and_then(|p| dist::moments(p, policy));
        let next = match eval {
            Ok(m) => {
                let r = m.mean - target;
                if r == 0.0 {
                    return Ok(l);
                }
                if r > 0.0 {
                    hi = l;
                } else {
                    lo = l;
                }
                // Newton in log λ: d mean / d log λ = var.
                let newton = l - r / m.var;
                if newton.is_finite() && newton > lo && newton < hi {
                    newton
                } else {
                    bisect(lo, hi, l)
                }
            }
            // Series too long or divergent: the rate is far too high.
            Err(_) => {
                hi = l;
                bisect(lo, hi, l)
            }
        };
        if (next - l).abs() <= ROOT_TOL || (hi - lo) <= ROOT_TOL {
            return Ok(next);
        }
        l = next;
    }
    Err(Error::RootFinding(format!(
        "no saturated rate found for y = {y}, nu = {nu}"
    )))
}

fn bisect(lo: f64, hi: f64, l: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => l.max(lo) + 1.0,
        (false, true) => l.min(hi) - 1.0,
        (false, false) => l,
    }
}

/// Exact unit deviance `−2[log L(λ̂) − log L(λ_sat)]` of one observation.
pub fn unit_deviance_exact(y: u64, p: ComParams, policy: SeriesPolicy) -> Result<f64> {
    let fitted = dist::log_pmf_with(y, p, policy)?;
    let saturated = if y == 0 {
        0.0
    } else {
        let l = saturated_log_lambda(y, p.nu(), policy)?;
        let sat = ComParams::from_log_lambda(l, p.nu())?;
        y as f64 * l - p.nu() * ln_factorial(y) - dist::log_normalizer(sat, policy)?
    };
    Ok((-2.0 * (fitted - saturated)).max(0.0))
}

/// Unit deviance from the closed-form mean approximation. When `ν < 1` and
/// `y = 0` the normalizer at the saturated point is taken as 1; other
/// points where `y + (ν−1)/(2ν) ≤ 0` are outside the formula's domain.
pub fn unit_deviance_approx(y: u64, p: ComParams, policy: SeriesPolicy) -> Result<f64> {
    let nu = p.nu();
    let c = (nu - 1.0) / (2.0 * nu);
    let yc = y as f64 + c;
    let log_z_fit = dist::log_normalizer(p, policy)?;
    let (linear, log_z_sat) = if y == 0 && yc <= 0.0 {
        (0.0, 0.0)
    } else if yc <= 0.0 {
        return Err(Error::ApproximationInvalid {
            observation: 0,
            nu,
            lambda: p.lambda(),
        });
    } else {
        // μ̂ + c = λ̂^{1/ν}.
        let linear = if y == 0 {
            0.0
        } else {
            y as f64 * nu * yc.ln() - y as f64 * p.log_lambda()
        };
        let sat = ComParams::from_log_lambda(nu * yc.ln(), nu)?;
        (linear, dist::log_normalizer(sat, policy)?)
    };
    Ok((2.0 * (linear + log_z_fit - log_z_sat)).max(0.0))
}

fn deviance_from(
    y: &[u64],
    params: &[ComParams],
    mu: &[f64],
    h: &[f64],
    kind: DevianceKind,
    policy: SeriesPolicy,
) -> Residuals {
    let mut notes = Vec::new();
    let values = y
        .iter()
        .enumerate()
        .map(|(i, &yi)| {
            if !(h[i] < 1.0) {
                notes.push(undefined_leverage(i));
                return None;
            }
            let d = match kind {
                DevianceKind::Exact => unit_deviance_exact(yi, params[i], policy),
                DevianceKind::Approx => unit_deviance_approx(yi, params[i], policy).or_else(|e| {
                    notes.push(ObsNote {
                        observation: i + 1,
                        message: format!("approximate deviance undefined ({e}); exact value used"),
                    });
                    unit_deviance_exact(yi, params[i], policy)
                }),
            };
            match d {
                Ok(d) => {
                    let sign = (yi as f64 - mu[i]).signum();
                    let sign = if yi as f64 == mu[i] { 0.0 } else { sign };
                    Some(sign * d.sqrt() / (1.0 - h[i]).sqrt())
                }
                Err(e) => {
                    notes.push(ObsNote {
                        observation: i + 1,
                        message: format!("deviance unavailable: {e}"),
                    });
                    None
                }
            }
        })
        .collect();
    Residuals { values, notes }
}

/// Standardized deviance residuals `sign(y − μ̂) sqrt(d_i) / sqrt(1 − h_i)`.
///
/// With `Approx`, `μ̂` in the sign is the approximate mean, matching the
/// deviance it accompanies.
pub fn deviance_residuals(ds: &Dataset, fr: &FitResult, kind: DevianceKind) -> Result<Residuals> {
    let policy = SeriesPolicy::default();
    let params = check_fit(ds, fr)?;
    let mv = variances(&params, policy)?;
    let w: Vec<f64> = mv.iter().map(|&(_, v)| v).collect();
    let h = leverage_from(ds, &w)?;
    let mu = means_for(&params, &mv, kind);
    Ok(deviance_from(ds.y(), &params, &mu, &h, kind, policy))
}

fn means_for(params: &[ComParams], mv: &[(f64, f64)], kind: DevianceKind) -> Vec<f64> {
    params
        .iter()
        .zip(mv)
        .map(|(&p, &(mean, _))| match kind {
            DevianceKind::Exact => mean,
            DevianceKind::Approx => dist::mean_approx(p).unwrap_or(mean),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flag {
    pub observation: usize,
    pub high_leverage: bool,
    pub large_residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub log_lambda: f64,
    pub deviance_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub leverage: Vec<f64>,
    pub leverage_threshold: f64,
    pub fitted_mean: Vec<f64>,
    pub pearson: Vec<Option<f64>>,
    pub deviance: Vec<Option<f64>>,
    pub deviance_kind: DevianceKind,
    /// Observations (1-based) with `h_i > 2(p+2)/n` or `|r_D| > 2`.
    pub flagged: Vec<Flag>,
    /// `(log λ̂_i, r_D,i)` pairs for residual plots.
    pub plot: Vec<PlotPoint>,
    pub notes: Vec<ObsNote>,
}

impl DiagnosticsReport {
    pub fn flagged_observations(&self) -> Vec<usize> {
        self.flagged.iter().map(|f| f.observation).collect()
    }

    /// Fixed-width table, one row per observation.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10}  flag",
            "obs", "log_lambda", "mean", "leverage", "pearson", "deviance"
        );
        for i in 0..self.leverage.len() {
            let flag = self
                .flagged
                .iter()
                .find(|f| f.observation == i + 1)
                .map(|f| match (f.high_leverage, f.large_residual) {
                    (true, true) => "L R",
                    (true, false) => "L",
                    _ => "R",
                })
                .unwrap_or("");
            let _ = writeln!(
                out,
                "{:>5} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>10}  {flag}",
                i + 1,
                self.plot[i].log_lambda,
                self.fitted_mean[i],
                self.leverage[i],
                fmt(self.pearson[i]),
                fmt(self.deviance[i]),
            );
        }
        let _ = writeln!(
            out,
            "leverage threshold {:.4}; |deviance residual| threshold {RESIDUAL_FLAG}",
            self.leverage_threshold
        );
        for n in &self.notes {
            let _ = writeln!(out, "note: observation {}: {}", n.observation, n.message);
        }
        out
    }
}

pub fn diagnostics_report(ds: &Dataset, fr: &FitResult) -> Result<DiagnosticsReport> {
    diagnostics_report_with(ds, fr, DevianceKind::Exact)
}

pub fn diagnostics_report_with(
    ds: &Dataset,
    fr: &FitResult,
    kind: DevianceKind,
) -> Result<DiagnosticsReport> {
    let policy = SeriesPolicy::default();
    let params = check_fit(ds, fr)?;
    let mv = variances(&params, policy)?;
    let w: Vec<f64> = mv.iter().map(|&(_, v)| v).collect();
    let h = leverage_from(ds, &w)?;
    let pearson = pearson_from(ds.y(), &mv, &h);
    let mu = means_for(&params, &mv, kind);
    let deviance = deviance_from(ds.y(), &params, &mu, &h, kind, policy);

    let n = ds.n_obs() as f64;
    let threshold = 2.0 * (ds.n_coef() + 1) as f64 / n;
    let flagged = (0..ds.n_obs())
        .filter_map(|i| {
            let high_leverage = h[i] > threshold;
            let large_residual = deviance.values[i].is_some_and(|r| r.abs() > RESIDUAL_FLAG);
            (high_leverage || large_residual).then_some(Flag {
                observation: i + 1,
                high_leverage,
                large_residual,
            })
        })
        .collect();
    let plot = params
        .iter()
        .zip(&deviance.values)
        .map(|(p, &r)| PlotPoint {
            log_lambda: p.log_lambda(),
            deviance_residual: r,
        })
        .collect();
    let mut notes = pearson.notes;
    for note in deviance.notes {
        if !notes.contains(&note) {
            notes.push(note);
        }
    }
    notes.sort_by_key(|n| n.observation);
    Ok(DiagnosticsReport {
        leverage: h,
        leverage_threshold: threshold,
        fitted_mean: mv.iter().map(|&(m, _)| m).collect(),
        pearson: pearson.values,
        deviance: deviance.values,
        deviance_kind: kind,
        flagged,
        plot,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_unit_deviance() {
        let policy = SeriesPolicy::default();
        for (y, mu) in [(3u64, 2.0f64), (0, 1.5), (7, 9.2), (1, 0.3)] {
            let p = ComParams::new(mu, 1.0).unwrap();
            let d = unit_deviance_exact(y, p, policy).unwrap();
            let yf = y as f64;
            let expect = if y == 0 {
                2.0 * mu
            } else {
                2.0 * (yf * (yf / mu).ln() - (yf - mu))
            };
            assert!((d - expect).abs() < 1e-8, "{y} {mu}: {d} vs {expect}");
        }
    }

    #[test]
    fn saturated_rate_reproduces_mean() {
        let policy = SeriesPolicy::default();
        for (y, nu) in [(1u64, 0.3), (4, 0.35), (12, 2.5), (3, 6.0), (5, 0.0)] {
            let l = saturated_log_lambda(y, nu, policy).unwrap();
            let m = dist::mean_exact(ComParams::from_log_lambda(l, nu).unwrap(), policy).unwrap();
            assert!((m - y as f64).abs() < 1e-8, "{y} {nu}: {m}");
        }
    }

    #[test]
    fn zero_deviance_at_saturated_point() {
        let policy = SeriesPolicy::default();
        let l = saturated_log_lambda(6, 2.0, policy).unwrap();
        let p = ComParams::from_log_lambda(l, 2.0).unwrap();
        assert!(unit_deviance_exact(6, p, policy).unwrap() < 1e-12);
    }

    #[test]
    fn approx_patch_for_zero_counts() {
        let policy = SeriesPolicy::default();
        let p = ComParams::new(0.4, 0.5).unwrap();
        let d = unit_deviance_approx(0, p, policy).unwrap();
        let expect = 2.0 * dist::log_normalizer(p, policy).unwrap();
        assert!((d - expect).abs() < 1e-12);
        // y = 1 needs ν > 1/3.
        let q = ComParams::new(0.4, 0.2).unwrap();
        assert!(unit_deviance_approx(1, q, policy).is_err());
    }
}
