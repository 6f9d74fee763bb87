//! `compois`: COM-Poisson regression from the command line.
//!
//! Exit status is 0 on success, 1 when a model fails statistically (no
//! convergence, separation, ...) and 2 for usage, parse and I/O problems.

mod commands;
mod report;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use compois::baselines::FittedKind;
use compois::data::{load_csv_with, ColumnTransform, CsvOptions, Dataset, Transform};
use compois::diag::DevianceKind;
use compois::fit::OptimSettings;
use compois::simulate::{Design, UniformCovariate};
use compois::Error;

use commands::{ModelChoice, Outcome};
use report::Report;

#[derive(Parser)]
#[command(
    name = "compois",
    version,
    about = "COM-Poisson regression for count data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads for bootstrap and large fits (default: all cores).
    #[arg(long, global = true, env = "COMPOIS_THREADS")]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Write the report here instead of standard output.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,

    /// Column holding the counts.
    #[arg(long)]
    response: String,

    /// Comma-separated covariate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,

    /// Use the natural log of this column; may be repeated.
    #[arg(long = "log", value_name = "COLUMN")]
    log: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> compois::Result<Dataset> {
        let opts = CsvOptions {
            response: self.response.clone(),
            covariates: self.covariates.clone(),
            transforms: self
                .log
                .iter()
                .map(|c| ColumnTransform::new(c.clone(), Transform::Log))
                .collect(),
        };
        load_csv_with(&self.data, &opts)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Fitted {
    Mean,
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum Deviance {
    Exact,
    Approx,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one regression model.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = ModelChoice::Com)]
        model: ModelChoice,
    },
    /// Likelihood-ratio test of nu = 1 against a free nu.
    Test {
        #[command(flatten)]
        data: DataArgs,
        /// Also calibrate the p-value with this many null simulations.
        #[arg(long, default_value_t = 0)]
        calibrate: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parametric bootstrap intervals for the COM-Poisson fit.
    Bootstrap {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        n_boot: usize,
        #[arg(long, default_value_t = 0.90)]
        ci: f64,
    },
    /// Leverage, residuals and flagged observations.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = Deviance::Exact)]
        deviance: Deviance,
    },
    /// Log-likelihood, AIC, AICc and MSE side by side.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        #[arg(
            long,
            value_enum,
            value_delimiter = ',',
            default_value = "com,poisson,negbin,rgpr"
        )]
        models: Vec<ModelChoice>,
        /// Fitted values for the COM-Poisson MSE.
        #[arg(long, value_enum, default_value_t = Fitted::Median)]
        fitted: Fitted,
    },
    /// Write a simulated COM-Poisson dataset as CSV.
    Simulate {
        #[arg(long)]
        n: usize,
        /// Coefficients, intercept first.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        beta: Vec<f64>,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        seed: u64,
        /// NAME:LOW:HIGH for a uniform covariate; one per non-intercept
        /// coefficient (default x1, x2, ... on [0, 1)).
        #[arg(
            long = "covariate",
            value_name = "NAME:LOW:HIGH",
            allow_hyphen_values = true
        )]
        covariates: Vec<String>,
        #[arg(long, default_value = "y")]
        response: String,
    },
}

fn parse_covariate(spec: &str) -> compois::Result<UniformCovariate> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidParameter(format!("covariate spec {spec:?} is not NAME:LOW:HIGH"));
    if parts.len() != 3 || parts[0].is_empty() {
        return Err(bad());
    }
    let lo = parts[1].trim().parse().map_err(|_| bad())?;
    let hi = parts[2].trim().parse().map_err(|_| bad())?;
    Ok(UniformCovariate::new(parts[0], lo, hi))
}

fn design(
    n: usize,
    beta: Vec<f64>,
    nu: f64,
    covariates: &[String],
    response: String,
) -> compois::Result<Design> {
    let covariates = if covariates.is_empty() {
        (1..beta.len())
            .map(|j| UniformCovariate::new(format!("x{j}"), 0.0, 1.0))
            .collect()
    } else {
        covariates
            .iter()
            .map(|s| parse_covariate(s))
            .collect::<compois::Result<_>>()?
    };
    Ok(Design {
        n,
        covariates,
        beta,
        nu,
        response,
    })
}

enum Output {
    Report(Box<Outcome>),
    Csv(String),
}

fn run(command: &Command) -> compois::Result<Output> {
    let settings = OptimSettings::default();
    let out = match command {
        Command::Fit { data, model } => commands::fit(&data.load()?, *model, &settings)?,
        Command::Test {
            data,
            calibrate,
            seed,
        } => commands::test(&data.load()?, &settings, *calibrate, *seed)?,
        Command::Bootstrap {
            data,
            seed,
            n_boot,
            ci,
        } => commands::bootstrap(&data.load()?, &settings, *n_boot, *ci, *seed)?,
        Command::Diagnose { data, deviance } => {
            let kind = match deviance {
                Deviance::Exact => DevianceKind::Exact,
                Deviance::Approx => DevianceKind::Approx,
            };
            commands::diagnose(&data.load()?, &settings, kind)?
        }
        Command::Compare {
            data,
            models,
            fitted,
        } => {
            let fitted = match fitted {
                Fitted::Mean => FittedKind::Mean,
                Fitted::Median => FittedKind::Median,
            };
            commands::compare(&data.load()?, &settings, models, fitted)?
        }
        Command::Simulate {
            n,
            beta,
            nu,
            seed,
            covariates,
            response,
        } => {
            let d = design(*n, beta.clone(), *nu, covariates, response.clone())?;
            return Ok(Output::Csv(commands::simulate_csv(&d, *seed)?));
        }
    };
    Ok(Output::Report(Box::new(out)))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit { .. } => "fit",
        Command::Test { .. } => "test",
        Command::Bootstrap { .. } => "bootstrap",
        Command::Diagnose { .. } => "diagnose",
        Command::Compare { .. } => "compare",
        Command::Simulate { .. } => "simulate",
    }
}

fn emit(cli: &Cli, text: &str) -> std::io::Result<()> {
    match &cli.output {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    }
}

fn render(cli: &Cli, report: &Report) -> String {
    match cli.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        // Only fails if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }

    let (text, code) = match run(&cli.command) {
        Ok(Output::Csv(csv)) => (csv, 0),
        Ok(Output::Report(out)) => (render(&cli, &out.report), u8::from(out.failed)),
        Err(e) => {
            let code = if e.is_input_error() { 2 } else { 1 };
            if cli.format == Format::Text || matches!(cli.command, Command::Simulate { .. }) {
                eprintln!("error: {e}");
                return ExitCode::from(code);
            }
            let mut report = Report::new(command_name(&cli.command));
            report.push_error(&e);
            (render(&cli, &report), code)
        }
    };
    if let Err(e) = emit(&cli, &text) {
        eprintln!("error: cannot write output: {e}");
        return ExitCode::from(2);
    }
    ExitCode::from(code)
}
