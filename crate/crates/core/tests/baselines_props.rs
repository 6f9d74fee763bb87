mod common;

use compois::baselines::{
    compare_models, fit_negbin, fit_poisson, negbin_loglik, poisson_loglik, rgpr_loglik,
    FittedKind, FittedModel,
};
use compois::data::Dataset;
use compois::fit::{fit_com, OptimSettings};
use nalgebra::DVector;
use proptest::prelude::*;

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
    fn com_nests_poisson(ds in dataset()) {
        let com = fit_com(&ds, &OptimSettings::default()).unwrap();
        let pois = fit_poisson(&ds).unwrap();
        prop_assert!(com.loglik >= pois.loglik - 1e-6, "{} < {}", com.loglik, pois.loglik);
    }

    #[test]
    fn dispersion_limits_reproduce_poisson(
        ds in dataset(),
        b0 in -0.5f64..1.5,
        b1 in -0.5f64..0.5,
    ) {
        let beta = DVector::from_vec(vec![b0, b1]);
        let pois = poisson_loglik(&ds, &beta).unwrap();
        let rgpr = rgpr_loglik(&ds, &beta, 0.0).unwrap().unwrap();
        prop_assert!((rgpr - pois).abs() <= 1e-4);
        // Expanding in 1/r: nb = pois + Σ((y − μ)² − y)/(2r) + O(y³/r²).
        let r = 1e9;
        let nb = negbin_loglik(&ds, &beta, r).unwrap();
        let mu = (ds.x() * &beta).map(f64::exp);
        let first: f64 = ds
            .y()
            .iter()
            .zip(mu.iter())
            .map(|(&y, &m)| ((y as f64 - m).powi(2) - y as f64) / (2.0 * r))
            .sum();
        prop_assert!(
            (nb - pois - first).abs() <= 1e-6 + 1e-12 * pois.abs(),
            "{nb} vs {pois} + {first}"
        );
    }

    #[test]
    fn aicc_minus_aic_is_the_small_sample_penalty(ds in dataset()) {
        let com = fit_com(&ds, &OptimSettings::default()).unwrap();
        let pois = fit_poisson(&ds).unwrap();
        let nb = fit_negbin(&ds).unwrap();
        let models = [
            FittedModel::Com(&com),
            FittedModel::Baseline(&pois),
            FittedModel::Baseline(&nb),
        ];
        let cmp = compare_models(&ds, &models, FittedKind::Median).unwrap();
        let n = ds.n_obs() as f64;
        for row in &cmp.rows {
            let k = row.k as f64;
            let penalty = 2.0 * k * (k + 1.0) / (n - k - 1.0);
            prop_assert!((row.aicc - row.aic - penalty).abs() <= 1e-9 * row.aic.abs().max(1.0));
            prop_assert_eq!(row.aic, -2.0 * row.loglik + 2.0 * k);
        }
    }
}

#[test]
fn overdispersed_data_prefers_negbin_over_poisson() {
    let ds = sim_one(500, 1.5, 0.4, 0.3, 17);
    let pois = fit_poisson(&ds).unwrap();
    let nb = fit_negbin(&ds).unwrap();
    assert!(!nb.boundary);
    assert!(nb.loglik > pois.loglik + 10.0);
}

#[test]
fn negbin_converges_when_the_moment_start_is_on_the_flat_tail() {
    let y = vec![
        1, 1, 1, 0, 0, 2, 0, 1, 1, 1, 0, 1, 0, 5, 0, 0, 0, 0, 1, 2, 2, 1, 2, 0, 0, 1, 1, 1, 1, 0, 0,
    ];
    let x = [
        1.5458148886442022,
        0.3540691273716665,
        0.7269485842992713,
        0.039873187534439136,
        1.03466637309192,
        1.1834600845572987,
        1.764571340839478,
        0.6172281446164445,
        1.5918287647935978,
        0.8848174482305744,
        1.1567702523922385,
        0.1552916487912488,
        1.3614810242200783,
        0.0983675435852045,
        0.6020725560877125,
        1.360251974181327,
        0.949200173157108,
        0.9085839941796054,
        0.4804582255563883,
        1.6381840415870927,
        0.5819573279150463,
        0.3770181049195602,
        0.6582546649628505,
        0.8472383375417119,
        1.72470813937802,
        1.0576377037417775,
        1.4102368605980562,
        0.6396874621347886,
        0.1255804216412022,
        0.47012246643319955,
        1.9089737160414368,
    ];
    let ds = Dataset::new(
        "y",
        y,
        vec!["x".into()],
        nalgebra::DMatrix::from_column_slice(x.len(), 1, &x),
    )
    .unwrap();
    let nb = fit_negbin(&ds).unwrap();
    let pois = fit_poisson(&ds).unwrap();
    assert!(!nb.boundary);
    assert!(nb.loglik >= pois.loglik);
    let r = nb.extra.unwrap();
    assert!((10.0..20.0).contains(&r), "r = {r}");
}
