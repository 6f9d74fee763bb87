mod common;

use compois::baselines::fit_poisson;
use compois::data::Dataset;
use compois::fit::{fisher_information, fit_com, fit_com_fixed_nu, loglik, score, OptimSettings};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::sim_one;

fn settings() -> OptimSettings {
    OptimSettings::default()
}

/// Small simulated regressions across the dispersion range.
fn dataset() -> impl Strategy<Value = Dataset> {
    (
        30usize..80,
        0.2f64..1.5,
        -0.6f64..0.6,
        0.4f64..3.0,
        any::<u64>(),
    )
        .prop_map(|(n, b0, b1, nu, seed)| sim_one(n, b0, b1, nu, seed))
        .prop_filter("needs variation in y", |ds| {
            ds.y().iter().any(|&y| y != ds.y()[0])
        })
}

fn fd_score(ds: &Dataset, beta: &DVector<f64>, nu: f64) -> DVector<f64> {
    let k = beta.len();
    let mut g = DVector::zeros(k + 1);
    for j in 0..=k {
        let h = 1e-6 * (1.0 + if j < k { beta[j].abs() } else { nu });
        let eval = |d: f64| {
            let mut b = beta.clone();
            let mut v = nu;
            if j < k {
                b[j] += d;
            } else {
                v += d;
            }
            loglik(ds, &b, v).unwrap()
        };
        g[j] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    g
}

fn fd_hessian(ds: &Dataset, beta: &DVector<f64>, nu: f64) -> DMatrix<f64> {
    let k = beta.len();
    let mut hess = DMatrix::zeros(k + 1, k + 1);
    for j in 0..=k {
        let h = 1e-5 * (1.0 + if j < k { beta[j].abs() } else { nu });
        let eval = |d: f64| {
            let mut b = beta.clone();
            let mut v = nu;
            if j < k {
                b[j] += d;
            } else {
                v += d;
            }
            score(ds, &b, v).unwrap()
        };
        hess.set_column(j, &((eval(h) - eval(-h)) / (2.0 * h)));
    }
    hess
}

fn max_abs(m: impl IntoIterator<Item = f64>) -> f64 {
    m.into_iter().fold(0.0, |a, v| a.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn score_matches_finite_differences(
        ds in dataset(),
        points in prop::collection::vec((-0.3f64..0.3, -0.3f64..0.3, 0.3f64..4.0), 20),
    ) {
        for (d0, d1, nu) in points {
            let beta = DVector::from_vec(vec![0.8 + d0, d1]);
            let g = score(&ds, &beta, nu).unwrap();
            let fd = fd_score(&ds, &beta, nu);
            let scale = max_abs(g.iter().copied()).max(1.0);
            prop_assert!(max_abs((&g - &fd).iter().copied()) <= 1e-5 * scale, "{g} vs {fd}");
        }
    }

    #[test]
    fn information_is_negative_hessian_at_mle(ds in dataset()) {
        let fr = fit_com(&ds, &settings()).unwrap();
        prop_assume!(fr.boundary.is_none());
        let info = fisher_information(&ds, &fr.beta, fr.nu).unwrap();
        let num = -fd_hessian(&ds, &fr.beta, fr.nu);
        let scale = max_abs(info.iter().copied());
        prop_assert!(max_abs((&info - &num).iter().copied()) <= 1e-3 * scale, "{info} vs {num}");
    }

    #[test]
    fn nu_one_reproduces_poisson(ds in dataset()) {
        let fr = fit_com_fixed_nu(&ds, 1.0, &settings()).unwrap();
        let pois = fit_poisson(&ds).unwrap();
        prop_assert!(max_abs((&fr.beta - &pois.beta).iter().copied()) <= 1e-6);
        prop_assert!((fr.loglik - pois.loglik).abs() <= 1e-6);
    }

    #[test]
    fn trace_is_nondecreasing_and_scaled_beta_exact(ds in dataset()) {
        let fr = fit_com(&ds, &settings()).unwrap();
        prop_assert!(fr.converged);
        for w in fr.trace.windows(2) {
            prop_assert!(w[1] >= w[0], "trace drops from {} to {}", w[0], w[1]);
        }
        for j in 0..fr.beta.len() {
            prop_assert_eq!(fr.scaled_beta[j], fr.beta[j] / fr.nu);
        }
        prop_assert_eq!(*fr.trace.last().unwrap(), fr.loglik);
    }

    #[test]
    fn covariate_shift_moves_only_the_intercept(ds in dataset(), c in -5.0f64..5.0) {
        let fr = fit_com(&ds, &settings()).unwrap();
        prop_assume!(fr.boundary.is_none());
        let mut x = ds.x().columns(1, 1).into_owned();
        x.add_scalar_mut(c);
        let shifted = Dataset::new("y", ds.y().to_vec(), vec!["x".into()], x).unwrap();
        let fs = fit_com(&shifted, &settings()).unwrap();
        prop_assert!((fs.nu - fr.nu).abs() <= 1e-6 * (1.0 + fr.nu), "{} vs {}", fs.nu, fr.nu);
        prop_assert!((fs.loglik - fr.loglik).abs() <= 1e-6);
        prop_assert!((fs.beta[1] - fr.beta[1]).abs() <= 1e-5);
        prop_assert!((fs.beta[0] - (fr.beta[0] - fr.beta[1] * c)).abs() <= 1e-5);
    }
}

#[test]
fn fits_recover_truth_at_scale() {
    for (nu, seed) in [(0.5, 1), (1.0, 2), (3.0, 3)] {
        let ds = sim_one(2000, 1.0, 0.5, nu, seed);
        let fr = fit_com(&ds, &settings()).unwrap();
        let se = fr.standard_errors();
        assert!(
            (fr.nu - nu).abs() < 4.0 * se[2],
            "nu {nu}: {} (se {})",
            fr.nu,
            se[2]
        );
        assert!(
            (fr.beta[1] - 0.5).abs() < 4.0 * se[1],
            "slope {}",
            fr.beta[1]
        );
    }
}
