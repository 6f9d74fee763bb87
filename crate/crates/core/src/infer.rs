//! Likelihood-ratio test for dispersion and parametric-bootstrap inference.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::baselines::{fit_poisson, BaselineFit};
use crate::data::Dataset;
use crate::dist::{Cdf, ComParams};
use crate::error::{Error, Result};
use crate::fit::{fit_com, FitResult, OptimSettings};

/// Share of failed bootstrap replicates above which results are flagged.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionTest {
    /// `C = −2 log Λ`, clamped at zero.
    pub statistic: f64,
    pub df: u32,
    pub p_value: f64,
    pub loglik_null: f64,
    pub loglik_alt: f64,
    pub nu_hat: f64,
    /// Tail fraction of `C` simulated under the fitted Poisson null.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibrated_p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn chi2_sf(c: f64) -> f64 {
    let chi = ChiSquared::new(1.0).expect("df = 1 is valid");
    chi.sf(c).clamp(0.0, 1.0)
}

fn statistic(null: f64, alt: f64) -> f64 {
    (-2.0 * (null - alt)).max(0.0)
}

/// Tests `H₀: ν = 1` (Poisson) against a free `ν`.
pub fn dispersion_test(ds: &Dataset) -> Result<DispersionTest> {
    dispersion_test_with(ds, &OptimSettings::default())
}

pub fn dispersion_test_with(ds: &Dataset, settings: &OptimSettings) -> Result<DispersionTest> {
    let null = fit_poisson(ds)?;
    let alt = fit_com(ds, settings)?;
    let c = statistic(null.loglik, alt.loglik);
    let warning = alt.boundary.map(|b| {
        format!(
            "nu estimate is at its {} ({}); the chi-square reference is unreliable",
            match b {
                crate::fit::NuBoundary::Floor => "floor",
                crate::fit::NuBoundary::Ceiling => "ceiling",
            },
            alt.nu
        )
    });
    Ok(DispersionTest {
        statistic: c,
        df: 1,
        p_value: chi2_sf(c),
        loglik_null: null.loglik,
        loglik_alt: alt.loglik,
        nu_hat: alt.nu,
        calibrated_p_value: None,
        warning,
    })
}

/// As [`dispersion_test_with`], adding a p-value calibrated by simulating
/// `n_sim` datasets from the fitted Poisson null. Replicates whose fits fail
/// are left out of the tail fraction.
pub fn calibrated_dispersion_test(
    ds: &Dataset,
    settings: &OptimSettings,
    n_sim: usize,
    seed: u64,
) -> Result<DispersionTest> {
    if n_sim == 0 {
        return Err(Error::InvalidParameter("n_sim must be positive".into()));
    }
    let mut test = dispersion_test_with(ds, settings)?;
    let null = fit_poisson(ds)?;
    let cdfs = null_cdfs(ds, &null, settings)?;
    let sims: Vec<Option<f64>> = (0..n_sim)
        .into_par_iter()
        .map(|b| {
            let y = draw(&cdfs, seed, b as u64);
            let d = ds.with_response(y).ok()?;
            let n = fit_poisson(&d).ok()?;
            let a = fit_com(&d, settings).ok()?;
            Some(statistic(n.loglik, a.loglik))
        })
        .collect();
    let ok: Vec<f64> = sims.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::NonConvergence(
            "no calibration replicate could be fitted".into(),
        ));
    }
    let exceed = ok.iter().filter(|&&c| c >= test.statistic).count();
    test.calibrated_p_value = Some(exceed as f64 / ok.len() as f64);
    Ok(test)
}

fn null_cdfs(ds: &Dataset, null: &BaselineFit, settings: &OptimSettings) -> Result<Vec<Cdf>> {
    let eta = ds.x() * &null.beta;
    eta.iter()
        .map(|&e| Cdf::new(ComParams::from_log_lambda(e, 1.0)?, settings.series))
        .collect()
}

/// One response vector from the substream `stream` of `seed`.
fn draw(cdfs: &[Cdf], seed: u64, stream: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    cdfs.iter().map(|c| c.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// One row per successful replicate: `β̂*` then `ν̂*`, in replicate order.
    pub replicates: DMatrix<f64>,
    pub n_boot: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Percentile intervals for each coefficient and `ν`.
    pub intervals: Vec<Interval>,
    pub n_failed: usize,
    /// Indices of replicates that failed to fit.
    pub failed: Vec<usize>,
    pub unreliable: bool,
}

impl BootstrapResult {
    /// Share of successful replicates whose parameter `j` is `≤ 0`.
    pub fn fraction_nonpositive(&self, j: usize) -> f64 {
        let col = self.replicates.column(j);
        if col.is_empty() {
            return f64::NAN;
        }
        col.iter().filter(|&&v| v <= 0.0).count() as f64 / col.len() as f64
    }

    /// Percentile interval of `f` applied to column `j`.
    pub fn interval_of<F: Fn(f64) -> f64>(&self, j: usize, f: F) -> (f64, f64) {
        let vals: Vec<f64> = self.replicates.column(j).iter().map(|&v| f(v)).collect();
        percentile_interval(&vals, self.ci_level)
    }
}

/// Nearest-rank percentile interval: order statistics at ranks
/// `⌈a·m⌉` and `⌈(1−a)·m⌉` with `a = (1 − level)/2`.
pub fn percentile_interval(values: &[f64], level: f64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    let a = (1.0 - level) / 2.0;
    let rank = |p: f64| ((p * m as f64).ceil() as usize).clamp(1, m) - 1;
    (v[rank(a)], v[rank(1.0 - a)])
}

/// Parametric bootstrap: responses are redrawn from the fitted
/// COM-Poisson distributions and the model is refit on each replicate.
///
/// Replicate `b` uses stream `b` of a ChaCha8 generator seeded with `seed`,
/// so results do not depend on thread scheduling.
pub fn parametric_bootstrap(
    ds: &Dataset,
    fr: &FitResult,
    n_boot: usize,
    ci_level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    parametric_bootstrap_with(ds, fr, n_boot, ci_level, seed, &OptimSettings::default())
}

pub fn parametric_bootstrap_with(
    ds: &Dataset,
    fr: &FitResult,
    n_boot: usize,
    ci_level: f64,
    seed: u64,
    settings: &OptimSettings,
) -> Result<BootstrapResult> {
    if n_boot < 100 {
        return Err(Error::InvalidParameter(format!(
            "n_boot must be at least 100, got {n_boot}"
        )));
    }
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ci_level must lie in (0, 1), got {ci_level}"
        )));
    }
    if !fr.converged {
        return Err(Error::InvalidParameter(
            "bootstrap needs a converged fit".into(),
        ));
    }
    let cdfs = fr
        .params(ds)?
        .into_iter()
        .map(|p| Cdf::new(p, settings.series))
        .collect::<Result<Vec<_>>>()?;

    let draws: Vec<Option<Vec<f64>>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let y = draw(&cdfs, seed, b as u64);
            let d = ds.with_response(y).ok()?;
            let f = fit_com(&d, settings).ok()?;
            f.converged.then(|| {
                let mut row: Vec<f64> = f.beta.iter().copied().collect();
                row.push(f.nu);
                row
            })
        })
        .collect();

    let width = fr.beta.len() + 1;
    let failed: Vec<usize> = draws
        .iter()
        .enumerate()
        .filter_map(|(b, d)| d.is_none().then_some(b))
        .collect();
    let rows: Vec<Vec<f64>> = draws.into_iter().flatten().collect();
    let replicates = DMatrix::from_row_iterator(rows.len(), width, rows.into_iter().flatten());

    let estimates: Vec<f64> = fr.beta.iter().copied().chain([fr.nu]).collect();
    let names: Vec<String> = fr.names.iter().cloned().chain(["nu".to_string()]).collect();
    let intervals = (0..width)
        .map(|j| {
            let col: Vec<f64> = replicates.column(j).iter().copied().collect();
            let (lower, upper) = percentile_interval(&col, ci_level);
            Interval {
                name: names[j].clone(),
                estimate: estimates[j],
                lower,
                upper,
            }
        })
        .collect();
    let n_failed = failed.len();
    Ok(BootstrapResult {
        replicates,
        n_boot,
        seed,
        ci_level,
        intervals,
        n_failed,
        failed,
        unreliable: n_failed as f64 > MAX_FAILED_FRACTION * n_boot as f64,
    })
}

/// Wald statistic `θ̂_j / SE_j`; index `p + 1` (one past the last
/// coefficient) is `ν`.
pub fn wald_z(fr: &FitResult, j: usize) -> Result<f64> {
    let k = fr.beta.len();
    if j > k {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            got: j + 1,
        });
    }
    if j == k && fr.boundary.is_some() {
        return Err(Error::UndefinedStandardError(
            "nu is at a boundary of its parameter space".into(),
        ));
    }
    let est = if j == k { fr.nu } else { fr.beta[j] };
    z_from(
        est,
        fr.cov[(j, j)],
        &fr.names.get(j).cloned().unwrap_or("nu".into()),
    )
}

/// Wald statistic for coefficient `j` of a baseline fit.
pub fn wald_z_baseline(fit: &BaselineFit, j: usize) -> Result<f64> {
    if j >= fit.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.beta.len(),
            got: j + 1,
        });
    }
    z_from(fit.beta[j], fit.cov[(j, j)], &format!("coefficient {j}"))
}

fn z_from(est: f64, var: f64, what: &str) -> Result<f64> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::UndefinedStandardError(format!(
            "variance of {what} is {var}"
        )));
    }
    Ok(est / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile_interval(&v, 0.90), (5.0, 95.0));
        assert_eq!(percentile_interval(&[3.0], 0.9), (3.0, 3.0));
        assert!(percentile_interval(&[], 0.9).0.is_nan());
    }

    #[test]
    fn chi2_tail() {
        assert!((chi2_sf(3.841458820694124) - 0.05).abs() < 1e-10);
        assert_eq!(chi2_sf(0.0), 1.0);
    }

    #[test]
    fn statistic_clamped() {
        assert_eq!(statistic(-10.0, -10.0 - 1e-9), 0.0);
        assert!((statistic(-12.0, -10.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let cdfs =
            vec![Cdf::new(ComParams::new(5.0, 1.0).unwrap(), Default::default()).unwrap(); 20];
        assert_eq!(draw(&cdfs, 3, 0), draw(&cdfs, 3, 0));
        assert_ne!(draw(&cdfs, 3, 0), draw(&cdfs, 3, 1));
    }
}
