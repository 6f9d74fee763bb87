mod common;

use compois::data::Dataset;
use compois::fit::{fit_com, OptimSettings};
use compois::infer::{dispersion_test, parametric_bootstrap, percentile_interval};
use proptest::prelude::*;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use common::sim_one;

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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn statistic_is_nonnegative_and_nested(ds in dataset()) {
        let t = dispersion_test(&ds).unwrap();
        prop_assert!(t.statistic >= 0.0);
        prop_assert!(t.loglik_alt >= t.loglik_null - 1e-6);
        prop_assert!((0.0..=1.0).contains(&t.p_value));
    }

    #[test]
    fn percentile_interval_commutes_with_monotone_maps(
        values in prop::collection::vec(0.01f64..100.0, 1..300),
        level in 0.5f64..0.99,
    ) {
        let (lo, hi) = percentile_interval(&values, level);
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        let (llo, lhi) = percentile_interval(&logs, level);
        prop_assert_eq!((llo, lhi), (lo.ln(), hi.ln()));
        prop_assert!(lo <= hi);
    }
}

#[test]
fn bootstrap_reproducible_and_log_equivariant() {
    let ds = sim_one(60, 1.0, 0.3, 2.0, 4);
    let fr = fit_com(&ds, &OptimSettings::default()).unwrap();
    let a = parametric_bootstrap(&ds, &fr, 150, 0.9, 99).unwrap();
    let b = parametric_bootstrap(&ds, &fr, 150, 0.9, 99).unwrap();
    assert_eq!(a, b);
    let c = parametric_bootstrap(&ds, &fr, 150, 0.9, 100).unwrap();
    assert_ne!(a.replicates, c.replicates);

    let k = fr.beta.len();
    let nu = &a.intervals[k];
    let (llo, lhi) = a.interval_of(k, f64::ln);
    assert_eq!((llo, lhi), (nu.lower.ln(), nu.upper.ln()));
}

/// Likelihood-ratio statistics for Poisson data, one per seed.
pub fn null_statistics(reps: u64, n: usize) -> Vec<f64> {
    (0..reps)
        .into_par_iter()
        .map(|seed| {
            let ds = sim_one(n, 1.0, 0.5, 1.0, 10_000 + seed);
            dispersion_test(&ds).unwrap().statistic
        })
        .collect()
}

#[test]
fn null_statistic_is_not_heavier_than_chi_square() {
    let mut c = null_statistics(500, 200);
    c.sort_by(f64::total_cmp);
    let chi = ChiSquared::new(1.0).unwrap();
    let m = c.len() as f64;
    // Empirical CDF falling below the reference means over-rejection.
    let d = c
        .iter()
        .enumerate()
        .map(|(i, &x)| chi.cdf(x) - i as f64 / m)
        .fold(0.0, f64::max);
    let critical = ((1.0f64 / 0.01).ln() / (2.0 * m)).sqrt();
    assert!(d < critical, "one-sided KS distance {d} exceeds {critical}");
}
