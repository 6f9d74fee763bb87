mod common;

use compois::dist::{
    consecutive_ratio, log_pmf, mean_approx, mean_approx_is_accurate, moments, quantile, sample,
    Cdf, ComParams, SeriesPolicy,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::params;

#[test]
fn grid_normalization() {
    common::normalization().unwrap();
}

#[test]
fn grid_special_cases() {
    common::special_cases().unwrap();
}

#[test]
fn grid_ratio_identity() {
    common::ratio_identity().unwrap();
}

#[test]
fn grid_derivative_identities() {
    common::derivative_identities().unwrap();
}

#[test]
fn grid_moment_recursion() {
    common::moment_recursion().unwrap();
}

#[test]
fn grid_power_moment() {
    common::power_moment().unwrap();
}

#[test]
fn grid_dispersion_direction() {
    common::dispersion_direction().unwrap();
}

#[test]
fn grid_galois_connection() {
    common::galois_connection().unwrap();
}

// The `ν ≤ 1` half of the usual validity rule does not extend to small λ.
#[test]
fn small_lambda_is_outside_the_dispersion_band() {
    let p = params(0.3, 0.25);
    let m = moments(p, SeriesPolicy::default()).unwrap();
    assert!((m.var / m.mean - 1.2369).abs() < 1e-3);
    assert!(mean_approx_is_accurate(p));
    assert!((mean_approx(p).unwrap() - 1.5081).abs() < 1e-3);
    assert!(m.mean < 0.4);
}

fn com_params() -> impl Strategy<Value = ComParams> {
    // Keeps the mode λ^{1/ν} well inside the default series cap.
    (-3.0f64..3.0, 0.05f64..6.0)
        .prop_filter("mode too large", |(ll, nu)| ll / nu < 7.0)
        .prop_map(|(ll, nu)| ComParams::from_log_lambda(ll, nu).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pmf_sums_to_one(p in com_params()) {
        let s = common::pmf_total(p);
        prop_assert!((s - 1.0).abs() < 1e-10, "{s}");
    }

    #[test]
    fn ratio_matches_log_pmf(p in com_params(), y in 1u64..60) {
        let r = consecutive_ratio(y, p).unwrap();
        let from_pmf = (log_pmf(y - 1, p).unwrap() - log_pmf(y, p).unwrap()).exp();
        prop_assert!((r - from_pmf).abs() <= 1e-9 * r, "{r} vs {from_pmf}");
    }

    #[test]
    fn quantile_is_left_inverse_of_cdf(p in com_params(), q in 0.0f64..1.0, y in 0u64..80) {
        let c = Cdf::new(p, SeriesPolicy::default()).unwrap();
        prop_assert_eq!(c.quantile(q) <= y, q <= c.cdf(y));
        prop_assert_eq!(c.quantile(q), quantile(q, p).unwrap());
    }

    #[test]
    fn cdf_is_monotone(p in com_params(), y in 0u64..80) {
        let c = Cdf::new(p, SeriesPolicy::default()).unwrap();
        prop_assert!(c.cdf(y) <= c.cdf(y + 1));
        prop_assert!(c.cdf(y) <= 1.0 + 1e-12);
    }

    #[test]
    fn underdispersion_iff_nu_above_one(ll in -1.0f64..3.0, nu in 0.1f64..5.0) {
        prop_assume!((nu - 1.0).abs() > 0.05 && ll / nu < 7.0);
        let m = moments(ComParams::from_log_lambda(ll, nu).unwrap(), SeriesPolicy::default()).unwrap();
        prop_assert_eq!(m.var < m.mean, nu > 1.0);
    }

    #[test]
    fn sampling_is_seeded(p in com_params(), seed in any::<u64>()) {
        let draw = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..5).map(|_| sample(p, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(draw(seed), draw(seed));
    }
}
