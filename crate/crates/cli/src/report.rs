use std::fmt::Write as _;

use compois::baselines::{BaselineFit, ComparisonRow};
use compois::diag::DiagnosticsReport;
use compois::fit::{FitResult, NuBoundary};
use compois::infer::{BootstrapResult, DispersionTest, Interval};
use compois::Error;
use serde::Serialize;

pub const SCHEMA_VERSION: &str = "1.0";

const SCALED_NOTE: &str = "scaled = estimate / nu, for rough comparison with Poisson coefficients";

#[derive(Debug, Clone, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaled: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NuReport {
    pub estimate: f64,
    pub se: Option<f64>,
    /// `"floor"`, `"ceiling"` or null.
    pub boundary: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtraParameter {
    pub name: &'static str,
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub boundary: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorEntry {
    pub kind: String,
    pub message: String,
}

impl ErrorEntry {
    pub fn from_error(e: &Error) -> Self {
        let kind = format!("{e:?}");
        let kind = kind
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or("Error")
            .to_string();
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FractionNonPositive {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BootstrapReport {
    pub n_boot: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub n_failed: usize,
    pub unreliable: bool,
    pub intervals: Vec<Interval>,
    pub fraction_nonpositive: Vec<FractionNonPositive>,
}

impl BootstrapReport {
    pub fn new(b: &BootstrapResult) -> Self {
        let fraction_nonpositive = b
            .intervals
            .iter()
            .enumerate()
            .map(|(j, iv)| FractionNonPositive {
                name: iv.name.clone(),
                fraction: b.fraction_nonpositive(j),
            })
            .collect();
        Self {
            n_boot: b.n_boot,
            seed: b.seed,
            ci_level: b.ci_level,
            n_failed: b.n_failed,
            unreliable: b.unreliable,
            intervals: b.intervals.clone(),
            fraction_nonpositive,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub model: String,
    /// `"ok"` or `"failed: ..."`.
    pub status: String,
    #[serde(flatten)]
    pub row: Option<ComparisonRow>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub coefficients: Vec<Coefficient>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaled_note: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<NuReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispersion: Option<ExtraParameter>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loglik: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aicc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<DispersionTest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<CompareEntry>>,
    pub errors: Vec<ErrorEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            ..Default::default()
        }
    }

    fn set_criteria(&mut self, loglik: f64, k: usize, n: usize) {
        let (aic, aicc) = compois::baselines::information_criteria(loglik, k, n);
        self.loglik = Some(loglik);
        self.aic = Some(aic);
        self.aicc = finite(aicc);
        if !aicc.is_finite() {
            self.notes
                .push(format!("AICc undefined for n = {n}, k = {k}"));
        }
    }

    pub fn with_com(mut self, fr: &FitResult) -> Self {
        let se = fr.standard_errors();
        self.model = Some("com-poisson".into());
        self.n_obs = Some(fr.n_obs);
        self.coefficients = fr
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| Coefficient {
                name: name.clone(),
                estimate: fr.beta[j],
                se: finite(se[j]),
                scaled: Some(fr.scaled_beta[j]),
            })
            .collect();
        self.scaled_note = Some(SCALED_NOTE);
        self.nu = Some(NuReport {
            estimate: fr.nu,
            se: fr.nu_se(),
            boundary: fr.boundary.map(|b| match b {
                NuBoundary::Floor => "floor",
                NuBoundary::Ceiling => "ceiling",
            }),
        });
        self.set_criteria(fr.loglik, fr.n_params, fr.n_obs);
        self.converged = Some(fr.converged);
        self.iterations = Some(fr.iterations);
        if let Some(b) = fr.boundary {
            self.notes.push(format!(
                "nu is at its {} ({}); its standard error is undefined and coefficient SEs are conditional on it",
                if b == NuBoundary::Floor { "floor" } else { "ceiling" },
                fr.nu
            ));
        }
        self
    }

    pub fn with_baseline(mut self, b: &BaselineFit, names: &[String], n: usize) -> Self {
        let se = b.standard_errors();
        self.model = Some(b.kind.label().into());
        self.n_obs = Some(n);
        self.coefficients = names
            .iter()
            .enumerate()
            .map(|(j, name)| Coefficient {
                name: name.clone(),
                estimate: b.beta[j],
                se: finite(se[j]),
                scaled: None,
            })
            .collect();
        if let Some(name) = b.kind.extra_name() {
            self.dispersion = Some(ExtraParameter {
                name,
                estimate: b.extra,
                se: b.extra_se,
                boundary: b.boundary,
            });
        }
        if b.boundary {
            self.notes.push(
                "dispersion parameter drifted to its Poisson limit; Poisson estimates reported"
                    .into(),
            );
        }
        self.set_criteria(b.loglik, b.n_params(), n);
        self.converged = Some(b.converged);
        self.iterations = Some(b.iterations);
        self
    }

    pub fn push_error(&mut self, e: &Error) {
        self.errors.push(ErrorEntry::from_error(e));
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let num = |v: f64| format!("{v:.4}");
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), num);
        if let Some(m) = &self.model {
            let _ = write!(out, "model: {m}");
            if let Some(n) = self.n_obs {
                let _ = write!(out, "  (n = {n})");
            }
            out.push('\n');
        }
        if !self.coefficients.is_empty() {
            let scaled = self.coefficients.iter().any(|c| c.scaled.is_some());
            let _ = write!(out, "{:<16} {:>24}", "term", "estimate (SE)");
            if scaled {
                let _ = write!(out, " {:>12}", "scaled");
            }
            out.push('\n');
            for c in &self.coefficients {
                let cell = format!("{} ({})", num(c.estimate), opt(c.se));
                let _ = write!(out, "{:<16} {:>24}", c.name, cell);
                if let Some(s) = c.scaled {
                    let _ = write!(out, " {:>12}", num(s));
                }
                out.push('\n');
            }
        }
        if let Some(nu) = &self.nu {
            let cell = format!("{} ({})", num(nu.estimate), opt(nu.se));
            let _ = write!(out, "{:<16} {:>24}", "nu", cell);
            if let Some(b) = nu.boundary {
                let _ = write!(out, "  [{b}]");
            }
            out.push('\n');
        }
        if let Some(d) = &self.dispersion {
            let cell = format!("{} ({})", opt(d.estimate), opt(d.se));
            let _ = writeln!(out, "{:<16} {:>24}", d.name, cell);
        }
        if let Some(l) = self.loglik {
            let _ = writeln!(out, "{:<16} {:>24}", "log-likelihood", num(l));
        }
        if let Some(a) = self.aic {
            let _ = writeln!(out, "{:<16} {:>24}", "AIC", num(a));
            let _ = writeln!(out, "{:<16} {:>24}", "AICc", opt(self.aicc));
        }
        if let Some(c) = self.converged {
            let _ = writeln!(
                out,
                "converged: {c} ({} iterations)",
                self.iterations.unwrap_or(0)
            );
        }
        if let Some(t) = &self.test {
            let _ = writeln!(out, "dispersion test (H0: nu = 1)");
            let _ = writeln!(
                out,
                "  C = {}  df = {}  p = {:.4e}",
                num(t.statistic),
                t.df,
                t.p_value
            );
            let _ = writeln!(
                out,
                "  loglik null = {}  alt = {}  nu = {}",
                num(t.loglik_null),
                num(t.loglik_alt),
                num(t.nu_hat)
            );
            if let Some(p) = t.calibrated_p_value {
                let _ = writeln!(out, "  calibrated p = {}", num(p));
            }
            if let Some(w) = &t.warning {
                let _ = writeln!(out, "  warning: {w}");
            }
        }
        if let Some(b) = &self.bootstrap {
            let _ = writeln!(
                out,
                "bootstrap: {} replicates, seed {}, {} failed{}",
                b.n_boot,
                b.seed,
                b.n_failed,
                if b.unreliable { " (unreliable)" } else { "" }
            );
            let pct = format!("{:.0}%", 100.0 * b.ci_level);
            let _ = writeln!(
                out,
                "{:<16} {:>12} {:>12} {:>12} {:>10}",
                "term",
                "estimate",
                format!("{pct} lower"),
                format!("{pct} upper"),
                "P(<= 0)"
            );
            for (iv, fr) in b.intervals.iter().zip(&b.fraction_nonpositive) {
                let _ = writeln!(
                    out,
                    "{:<16} {:>12} {:>12} {:>12} {:>10}",
                    iv.name,
                    num(iv.estimate),
                    num(iv.lower),
                    num(iv.upper),
                    num(fr.fraction)
                );
            }
        }
        if let Some(d) = &self.diagnostics {
            out.push_str(&d.to_text());
            let flagged = d.flagged_observations();
            if !flagged.is_empty() {
                let list: Vec<String> = flagged.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(out, "flagged observations: {}", list.join(", "));
            }
        }
        if let Some(rows) = &self.comparison {
            let _ = writeln!(
                out,
                "{:<12} {:>10} {:>3} {:>10} {:>10} {:>10}  status",
                "model", "loglik", "k", "AIC", "AICc", "MSE"
            );
            for e in rows {
                match &e.row {
                    Some(r) => {
                        let _ = writeln!(
                            out,
                            "{:<12} {:>10} {:>3} {:>10} {:>10} {:>10}  {}",
                            e.model,
                            num(r.loglik),
                            r.k,
                            num(r.aic),
                            opt(finite(r.aicc)),
                            num(r.mse),
                            e.status
                        );
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "{:<12} {:>10} {:>3} {:>10} {:>10} {:>10}  {}",
                            e.model, "-", "-", "-", "-", "-", e.status
                        );
                    }
                }
            }
            for e in rows {
                if let Some(note) = e.row.as_ref().and_then(|r| r.note.as_ref()) {
                    let _ = writeln!(out, "note ({}): {note}", e.model);
                }
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        for e in &self.errors {
            let _ = writeln!(out, "error ({}): {}", e.kind, e.message);
        }
        out
    }
}
