//! Helpers shared by the integration tests.

#![allow(dead_code)]

use compois::data::{load_csv, Dataset};
use compois::dist::{
    expect_fn, ln_factorial, log_normalizer, log_pmf, mean_exact, moments, var_exact, Cdf,
    ComParams, SeriesPolicy,
};
use compois::simulate::{simulate, Design, UniformCovariate};

pub const LAMBDAS: [f64; 4] = [0.3, 1.0, 2.0, 8.0];
pub const NUS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 5.0];

pub fn airfreight() -> Dataset {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/airfreight.csv");
    load_csv(path, "broken", &[]).unwrap()
}

/// One covariate on `[0, 2)` and COM-Poisson responses.
pub fn sim_one(n: usize, b0: f64, b1: f64, nu: f64, seed: u64) -> Dataset {
    let design = Design {
        n,
        covariates: vec![UniformCovariate::new("x", 0.0, 2.0)],
        beta: vec![b0, b1],
        nu,
        response: "y".into(),
    };
    simulate(&design, seed).unwrap()
}

pub fn params(lambda: f64, nu: f64) -> ComParams {
    ComParams::new(lambda, nu).unwrap()
}

fn grid() -> impl Iterator<Item = (f64, f64)> {
    LAMBDAS
        .iter()
        .flat_map(|&l| NUS.iter().map(move |&n| (l, n)))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Sums the pmf until the terms past the mode are negligible.
pub fn pmf_total(p: ComParams) -> f64 {
    let mut total = 0.0;
    let mut y = 0u64;
    loop {
        let pr = log_pmf(y, p).unwrap().exp();
        total += pr;
        if pr < 1e-20 && (y as f64) > p.lambda().powf(1.0 / p.nu()) {
            return total;
        }
        y += 1;
    }
}

pub fn normalization() -> Result<(), String> {
    let tol = 10.0 * SeriesPolicy::default().rel_tol();
    for (l, n) in grid() {
        let s = pmf_total(params(l, n));
        check((s - 1.0).abs() <= tol, || {
            format!("sum of pmf at ({l}, {n}) is {s}")
        })?;
    }
    Ok(())
}

fn poisson_log_pmf(y: u64, lambda: f64) -> f64 {
    y as f64 * lambda.ln() - lambda - ln_factorial(y)
}

pub fn special_cases() -> Result<(), String> {
    for &l in &LAMBDAS {
        for y in 0..60 {
            let got = log_pmf(y, params(l, 1.0)).unwrap();
            let want = poisson_log_pmf(y, l);
            check((got - want).abs() <= 1e-12, || {
                format!("poisson collapse at lambda {l}, y {y}: {got} vs {want}")
            })?;
        }
    }
    for &l in &[0.1, 0.3, 0.5, 0.9] {
        for y in 0..40 {
            let got = log_pmf(y, params(l, 0.0)).unwrap().exp();
            let want = (1.0 - l) * l.powi(y as i32);
            check((got - want).abs() <= 1e-12, || {
                format!("geometric collapse at lambda {l}, y {y}: {got} vs {want}")
            })?;
        }
    }
    for &l in &LAMBDAS {
        let p = params(l, 200.0);
        let p0 = log_pmf(0, p).unwrap().exp();
        let p1 = log_pmf(1, p).unwrap().exp();
        check(p0 + p1 >= 1.0 - 1e-8, || {
            format!("bernoulli mass at lambda {l}: {}", p0 + p1)
        })?;
        check(rel(p1 / p0, l) <= 1e-6, || {
            format!("bernoulli odds at lambda {l}: {}", p1 / p0)
        })?;
    }
    Ok(())
}

pub fn ratio_identity() -> Result<(), String> {
    for (l, n) in grid() {
        let p = params(l, n);
        for y in 1..=50u64 {
            let got = (log_pmf(y - 1, p).unwrap() - log_pmf(y, p).unwrap()).exp();
            let want = (y as f64).powf(n) / l;
            check(rel(got, want) <= 1e-10, || {
                format!("ratio at ({l}, {n}), y {y}: {got} vs {want}")
            })?;
        }
    }
    Ok(())
}

fn shifted(l: f64, n: f64, h: f64) -> ComParams {
    ComParams::from_log_lambda(l.ln() + h, n).unwrap()
}

pub fn derivative_identities() -> Result<(), String> {
    let pol = SeriesPolicy::default();
    let h = 1e-4;
    for (l, n) in grid() {
        let up = log_normalizer(shifted(l, n, h), pol).unwrap();
        let dn = log_normalizer(shifted(l, n, -h), pol).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let mean = mean_exact(params(l, n), pol).unwrap();
        check(rel(fd, mean) <= 1e-6, || {
            format!("d log Z at ({l}, {n}): {fd} vs {mean}")
        })?;

        let up = mean_exact(shifted(l, n, h), pol).unwrap();
        let dn = mean_exact(shifted(l, n, -h), pol).unwrap();
        let fd = (up - dn) / (2.0 * h);
        let var = var_exact(params(l, n), pol).unwrap();
        check(rel(fd, var) <= 1e-5, || {
            format!("d mean at ({l}, {n}): {fd} vs {var}")
        })?;
    }
    Ok(())
}

/// `E(Y^{r+1}) = λ ∂E(Y^r)/∂λ + E(Y) E(Y^r)` for r = 0, 1.
pub fn moment_recursion() -> Result<(), String> {
    let pol = SeriesPolicy::default();
    let h = 1e-4;
    for (l, n) in grid() {
        let mean = mean_exact(params(l, n), pol).unwrap();
        for r in 0..=1i32 {
            let pow = |p: ComParams| expect_fn(p, |y| (y as f64).powi(r), pol).unwrap();
            let d = (pow(shifted(l, n, h)) - pow(shifted(l, n, -h))) / (2.0 * h);
            let lhs = expect_fn(params(l, n), |y| (y as f64).powi(r + 1), pol).unwrap();
            let rhs = d + mean * pow(params(l, n));
            check(rel(rhs, lhs) <= 1e-4, || {
                format!("recursion r = {r} at ({l}, {n}): {rhs} vs {lhs}")
            })?;
        }
    }
    Ok(())
}

pub fn power_moment() -> Result<(), String> {
    let pol = SeriesPolicy::default();
    for (l, n) in grid() {
        let got = expect_fn(params(l, n), |y| (y as f64).powf(n), pol).unwrap();
        check(rel(got, l) <= 1e-6, || {
            format!("E(Y^nu) at ({l}, {n}): {got}")
        })?;
    }
    Ok(())
}

/// `var/mean` within `0.15/ν` of `1/ν` wherever `λ > 10^ν`.
pub fn dispersion_direction() -> Result<(), String> {
    let pol = SeriesPolicy::default();
    for (l, n) in grid().filter(|&(l, n)| l > 10f64.powf(n)) {
        let m = moments(params(l, n), pol).unwrap();
        let dev = (m.var / m.mean - 1.0 / n).abs();
        check(dev <= 0.15 / n, || {
            format!("var/mean at ({l}, {n}) is {}", m.var / m.mean)
        })?;
    }
    Ok(())
}

pub fn galois_connection() -> Result<(), String> {
    let qs = [1e-9, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0 - 1e-9];
    for (l, n) in grid() {
        let c = Cdf::new(params(l, n), SeriesPolicy::default()).unwrap();
        for &q in &qs {
            let qy = c.quantile(q);
            for y in qy.saturating_sub(3)..qy + 3 {
                check((qy <= y) == (q <= c.cdf(y)), || {
                    format!("quantile/cdf at ({l}, {n}), q {q}, y {y}")
                })?;
            }
        }
    }
    Ok(())
}

pub fn kernel_suite() -> Result<(), String> {
    normalization()?;
    special_cases()?;
    ratio_identity()?;
    derivative_identities()?;
    moment_recursion()?;
    power_moment()?;
    Ok(())
}
