use compois::data::{linear_predictor, read_csv, CsvOptions, Dataset};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = Dataset> {
    (1usize..4)
        .prop_flat_map(|p| (p + 3..30, Just(p)))
        .prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(0u64..1000, n),
                prop::collection::vec(-1e6f64..1e6, n * p),
            )
                .prop_map(move |(y, xs)| {
                    let names = (1..=p).map(|j| format!("x{j}")).collect();
                    let x = DMatrix::from_vec(n, p, xs);
                    Dataset::new("count", y, names, x).unwrap()
                })
        })
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(ds in dataset()) {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let opts = CsvOptions { response: "count".into(), ..Default::default() };
        let back = read_csv(buf.as_slice(), &opts).unwrap();
        prop_assert_eq!(back.y(), ds.y());
        prop_assert_eq!(back.x(), ds.x());
        prop_assert_eq!(back.names(), ds.names());
    }

    #[test]
    fn linear_predictor_is_linear(ds in dataset(), seed in any::<u64>()) {
        let k = ds.n_coef();
        let b1 = DVector::from_fn(k, |j, _| ((seed >> j) % 7) as f64 - 3.0);
        let b2 = DVector::from_fn(k, |j, _| ((seed >> (j + 8)) % 5) as f64 * 0.25);
        let sum = linear_predictor(&ds, &(&b1 + &b2)).unwrap();
        let parts = linear_predictor(&ds, &b1).unwrap() + linear_predictor(&ds, &b2).unwrap();
        for (a, b) in sum.iter().zip(parts.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }
}
