//! Count datasets and design matrices.
//!
//! The design always carries a leading intercept column of ones.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

const RANK_TOL: f64 = 1e-10;

/// Per-column preprocessing applied while loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Transform::Identity),
            "log" => Ok(Transform::Log),
            other => Err(Error::InvalidParameter(format!(
                "unknown transform '{other}' (expected 'log' or 'identity')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnTransform {
    pub column: String,
    pub transform: Transform,
}

impl ColumnTransform {
    pub fn new(column: impl Into<String>, transform: Transform) -> Self {
        Self {
            column: column.into(),
            transform,
        }
    }
}

/// Options for [`load_csv_with`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    pub response: String,
    /// Covariate columns in order; `None` takes every non-response column.
    pub covariates: Option<Vec<String>>,
    pub transforms: Vec<ColumnTransform>,
}

/// Observed counts plus the design matrix (intercept first).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    response: String,
}

impl Dataset {
    /// Builds a dataset from covariate columns (no intercept); the intercept
    /// column is prepended here.
    pub fn new(
        response: impl Into<String>,
        y: Vec<u64>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: covariates.nrows(),
            });
        }
        if covariate_names.len() != covariates.ncols() {
            return Err(Error::DimensionMismatch {
                expected: covariates.ncols(),
                got: covariate_names.len(),
            });
        }
        let p = covariates.ncols();
        let x = DMatrix::from_fn(
            n,
            p + 1,
            |i, j| {
                if j == 0 {
                    1.0
                } else {
                    covariates[(i, j - 1)]
                }
            },
        );
        let mut names = Vec::with_capacity(p + 1);
        names.push(INTERCEPT.to_string());
        names.extend(covariate_names);
        Self::from_design(response, y, x, names)
    }

    /// Builds a dataset from a full design whose first column is the
    /// intercept.
    pub fn from_design(
        response: impl Into<String>,
        y: Vec<u64>,
        x: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.nrows(),
            });
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: names.len(),
            });
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidParameter(
                "first design column must be the intercept (all ones)".into(),
            ));
        }
        if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Parse {
                row: idx % n + 1,
                column: names[idx / n].clone(),
                message: "non-finite covariate value".into(),
            });
        }
        // p covariates + intercept + dispersion, plus one residual df.
        let required = x.ncols() + 1;
        if n < required {
            return Err(Error::TooFewObservations { n, required });
        }
        let rank = numerical_rank(&x);
        if rank < x.ncols() {
            return Err(Error::RankDeficient {
                rank,
                columns: x.ncols(),
            });
        }
        Ok(Self {
            y,
            x,
            names,
            response: response.into(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Number of regression coefficients including the intercept (`p + 1`).
    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn y_f64(&self) -> DVector<f64> {
        DVector::from_iterator(self.y.len(), self.y.iter().map(|&v| v as f64))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response(&self) -> &str {
        &self.response
    }

    /// Same design, different counts.
    pub fn with_response(&self, y: Vec<u64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::DimensionMismatch {
                expected: self.y.len(),
                got: y.len(),
            });
        }
        Ok(Self {
            y,
            x: self.x.clone(),
            names: self.names.clone(),
            response: self.response.clone(),
        })
    }

    /// Writes covariates (without the intercept) followed by the response.
    /// Floats use the shortest representation that round-trips exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names[1..].iter().map(String::as_str).collect();
        header.push(&self.response);
        wtr.write_record(&header).map_err(csv_io)?;
        for i in 0..self.n_obs() {
            let mut rec: Vec<String> = (1..self.x.ncols())
                .map(|j| format!("{}", self.x[(i, j)]))
                .collect();
            rec.push(self.y[i].to_string());
            wtr.write_record(&rec).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .collect();
    let largest = diag.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&d| d > RANK_TOL * largest).count()
}

/// `Xβ`; `exp` of each entry is the observation's `λ_i`.
pub fn linear_predictor(ds: &Dataset, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if beta.len() != ds.n_coef() {
        return Err(Error::DimensionMismatch {
            expected: ds.n_coef(),
            got: beta.len(),
        });
    }
    Ok(&ds.x * beta)
}

pub fn load_csv(
    path: impl AsRef<Path>,
    response: &str,
    transforms: &[ColumnTransform],
) -> Result<Dataset> {
    load_csv_with(
        path,
        &CsvOptions {
            response: response.to_string(),
            covariates: None,
            transforms: transforms.to_vec(),
        },
    )
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, opts)
}

pub fn read_csv<R: Read>(reader: R, opts: &CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_io)?
        .iter()
        .map(str::to_string)
        .collect();
    let col_index = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    };
    let resp_idx = col_index(&opts.response)?;
    let cov_names: Vec<String> = match &opts.covariates {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .filter(|h| **h != opts.response)
            .cloned()
            .collect(),
    };
    let cov_idx = cov_names
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<Vec<_>>>()?;
    for t in &opts.transforms {
        if !cov_names.contains(&t.column) {
            return Err(Error::UnknownColumn(t.column.clone()));
        }
    }

    let mut y = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let raw = record.get(resp_idx).unwrap_or("");
        if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
            return Err(Error::MissingValue {
                row,
                column: opts.response.clone(),
            });
        }
        y.push(parse_count(raw).ok_or_else(|| Error::InvalidResponse {
            row,
            value: raw.to_string(),
        })?);
        for (name, &j) in cov_names.iter().zip(&cov_idx) {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                return Err(Error::MissingValue {
                    row,
                    column: name.clone(),
                });
            }
            let mut v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            let transform = opts
                .transforms
                .iter()
                .rev()
                .find(|t| &t.column == name)
                .map_or(Transform::Identity, |t| t.transform);
            if transform == Transform::Log {
                if !(v > 0.0) {
                    return Err(Error::Parse {
                        row,
                        column: name.clone(),
                        message: format!("log transform needs a positive value, got {v}"),
                    });
                }
                v = v.ln();
            }
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
    }
    let n = y.len();
    let covariates = DMatrix::from_row_slice(n, cov_names.len(), &values);
    Dataset::new(opts.response.clone(), y, cov_names, covariates)
}

fn parse_count(raw: &str) -> Option<u64> {
    if let Ok(v) = raw.parse::<u64>() {
        return Some(v);
    }
    // Accept integral floats such as "3.0".
    let v: f64 = raw.parse().ok()?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
        Some(v as u64)
    } else {
        None
    }
}
