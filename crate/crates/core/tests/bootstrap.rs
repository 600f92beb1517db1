use featclash_core::metrics::{bootstrap_ci, lower_quantile};

/// Means of all n^n ordered resamples, sorted.
fn exhaustive_means(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let total = n.pow(n as u32);
    let mut means: Vec<f64> = (0..total)
        .map(|mut code| {
            let mut sum = 0.0;
            for _ in 0..n {
                sum += values[code % n];
                code /= n;
            }
            sum / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    means
}

#[test]
fn two_point_sample_matches_exhaustive_quantiles() {
    for sample in [
        [0.0, 1.0, 1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0, 1.0, 1.0],
        [1.0, 0.0, 0.0, 0.0, 1.0],
    ] {
        let exact = exhaustive_means(&sample);
        assert_eq!(exact.len(), 3125);
        let lo = lower_quantile(&exact, 0.025);
        let hi = lower_quantile(&exact, 0.975);
        for seed in 0..20 {
            let ci = bootstrap_ci(&sample, 1_000, 0.95, seed);
            assert_eq!(
                (ci.lower, ci.upper),
                (lo, hi),
                "sample {sample:?} seed {seed}"
            );
        }
    }
}

#[test]
fn same_seed_same_interval() {
    let v = [0.12, 0.4, 0.33, 0.05, 0.27];
    assert_eq!(
        bootstrap_ci(&v, 1_000, 0.95, 3),
        bootstrap_ci(&v, 1_000, 0.95, 3)
    );
}
