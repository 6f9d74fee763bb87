use compois::baselines::{
    compare_models, fit_logistic, fit_negbin, fit_poisson, fit_rgpr, BaselineFit, FittedKind,
    FittedModel,
};
use compois::data::Dataset;
use compois::diag::{diagnostics_report_with, DevianceKind};
use compois::fit::{fit_com, FitResult, OptimSettings};
use compois::infer::{calibrated_dispersion_test, dispersion_test_with, parametric_bootstrap_with};
use compois::simulate::{simulate, Design};
use compois::{Error, Result};

use crate::report::{BootstrapReport, CompareEntry, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelChoice {
    Com,
    Poisson,
    Negbin,
    Logistic,
    Rgpr,
}

impl ModelChoice {
    pub fn label(self) -> &'static str {
        match self {
            ModelChoice::Com => "com-poisson",
            ModelChoice::Poisson => "poisson",
            ModelChoice::Negbin => "negbin",
            ModelChoice::Logistic => "logistic",
            ModelChoice::Rgpr => "rgpr",
        }
    }
}

/// A finished command: the report plus whether it counts as a statistical
/// failure.
pub struct Outcome {
    pub report: Report,
    pub failed: bool,
}

impl Outcome {
    fn ok(report: Report) -> Self {
        Self {
            report,
            failed: false,
        }
    }
}

fn fit_baseline(ds: &Dataset, model: ModelChoice) -> Result<BaselineFit> {
    match model {
        ModelChoice::Poisson => fit_poisson(ds),
        ModelChoice::Negbin => fit_negbin(ds),
        ModelChoice::Logistic => fit_logistic(ds),
        ModelChoice::Rgpr => fit_rgpr(ds),
        ModelChoice::Com => unreachable!("COM-Poisson is not a baseline"),
    }
}

fn com_outcome(report: Report, fr: &FitResult) -> Outcome {
    let mut report = report.with_com(fr);
    let failed = !fr.converged;
    if failed {
        report.push_error(&Error::NonConvergence(format!(
            "optimizer stopped after {} iterations without meeting the tolerances",
            fr.iterations
        )));
    }
    Outcome { report, failed }
}

pub fn fit(ds: &Dataset, model: ModelChoice, settings: &OptimSettings) -> Result<Outcome> {
    let report = Report::new("fit");
    if model == ModelChoice::Com {
        let fr = fit_com(ds, settings)?;
        return Ok(com_outcome(report, &fr));
    }
    let b = fit_baseline(ds, model)?;
    Ok(Outcome::ok(report.with_baseline(
        &b,
        ds.names(),
        ds.n_obs(),
    )))
}

pub fn test(
    ds: &Dataset,
    settings: &OptimSettings,
    calibrate: usize,
    seed: Option<u64>,
) -> Result<Outcome> {
    let t = if calibrate > 0 {
        let seed = seed
            .ok_or_else(|| Error::InvalidParameter("--seed is required with --calibrate".into()))?;
        calibrated_dispersion_test(ds, settings, calibrate, seed)?
    } else {
        dispersion_test_with(ds, settings)?
    };
    let mut report = Report::new("test");
    report.model = Some("com-poisson".into());
    report.n_obs = Some(ds.n_obs());
    report.test = Some(t);
    Ok(Outcome::ok(report))
}

pub fn bootstrap(
    ds: &Dataset,
    settings: &OptimSettings,
    n_boot: usize,
    ci: f64,
    seed: u64,
) -> Result<Outcome> {
    if !(ci > 0.0 && ci < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "--ci must lie in (0, 1), got {ci}"
        )));
    }
    let fr = fit_com(ds, settings)?;
    let out = com_outcome(Report::new("bootstrap"), &fr);
    if out.failed {
        return Ok(out);
    }
    let mut report = out.report;
    let b = parametric_bootstrap_with(ds, &fr, n_boot, ci, seed, settings)?;
    if b.unreliable {
        report.notes.push(format!(
            "{} of {} replicates failed; intervals are unreliable",
            b.n_failed, b.n_boot
        ));
    }
    report.bootstrap = Some(BootstrapReport::new(&b));
    Ok(Outcome::ok(report))
}

pub fn diagnose(ds: &Dataset, settings: &OptimSettings, kind: DevianceKind) -> Result<Outcome> {
    let fr = fit_com(ds, settings)?;
    let out = com_outcome(Report::new("diagnose"), &fr);
    if out.failed {
        return Ok(out);
    }
    let mut report = out.report;
    report.diagnostics = Some(diagnostics_report_with(ds, &fr, kind)?);
    Ok(Outcome::ok(report))
}

/// Fits every requested model; individual failures become rows with a
/// failed status. The command fails only if no model could be fitted.
pub fn compare(
    ds: &Dataset,
    settings: &OptimSettings,
    models: &[ModelChoice],
    fitted: FittedKind,
) -> Result<Outcome> {
    let mut report = Report::new("compare");
    report.n_obs = Some(ds.n_obs());
    let mut entries = Vec::with_capacity(models.len());
    for &m in models {
        let label = m.label().to_string();
        let result = if m == ModelChoice::Com {
            fit_com(ds, settings).and_then(|fr| {
                if fr.converged {
                    compare_models(ds, &[FittedModel::Com(&fr)], fitted)
                } else {
                    Err(Error::NonConvergence("optimizer did not converge".into()))
                }
            })
        } else {
            fit_baseline(ds, m)
                .and_then(|b| compare_models(ds, &[FittedModel::Baseline(&b)], fitted))
        };
        let entry = match result {
            Ok(mut cmp) => CompareEntry {
                model: label,
                status: "ok".into(),
                row: cmp.rows.pop(),
            },
            Err(e) => {
                let status = match &e {
                    Error::NonConvergence(_) => "failed: non-convergence".to_string(),
                    other => format!("failed: {other}"),
                };
                report.push_error(&e);
                CompareEntry {
                    model: label,
                    status,
                    row: None,
                }
            }
        };
        entries.push(entry);
    }
    let failed = entries.iter().all(|e| e.row.is_none());
    report.comparison = Some(entries);
    Ok(Outcome { report, failed })
}

pub fn simulate_csv(design: &Design, seed: u64) -> Result<String> {
    let ds = simulate(design, seed)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}
