//! Monte-Carlo checks of the out-of-bag debiased importance.

use deepforest::rng::stream_rng;
use deepforest::{Dataset, Forest, ForestKind, ForestParams, Task};
use rand::Rng;

fn noise_dataset(n: usize, k: usize, seed: u64, relevant_binary: bool) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let mut features = Vec::with_capacity(n * k);
    let mut response = Vec::with_capacity(n);
    for _ in 0..n {
        let first: f64 = if rng.gen::<f64>() < 0.5 { 0.0 } else { 1.0 };
        features.push(first);
        for _ in 1..k {
            features.push(rng.gen());
        }
        if relevant_binary {
            // Deterministic labels from the binary feature.
            response.push(first);
        } else {
            // Labels independent of every feature.
            response.push(rng.gen());
        }
    }
    let names = (0..k).map(|j| format!("f{j}")).collect();
    Dataset::new(features, response, n, k, 1, Task::Regression, names, vec![]).unwrap()
}

fn oob_mdi_over_seeds(relevant_binary: bool) -> Vec<Vec<f64>> {
    (0..20u64)
        .map(|seed| {
            let d = noise_dataset(500, 5, seed, relevant_binary);
            let params = ForestParams::new(ForestKind::BestSplit, 200, seed ^ 0x5eed)
                .with_bootstrap(true);
            Forest::fit(&d, &params).unwrap().mdi_oob(&d).unwrap()
        })
        .collect()
}

/// With labels independent of every feature, the out-of-bag importance of
/// each feature averages to zero within Monte-Carlo error.
#[test]
fn oob_mdi_is_centered_on_zero_under_the_null() {
    let per_seed = oob_mdi_over_seeds(false);
    let n = per_seed.len() as f64;
    for k in 0..5 {
        let values: Vec<f64> = per_seed.iter().map(|v| v[k]).collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            mean.abs() <= 3.0 * se,
            "feature {k}: mean {mean:.5} exceeds 3 x SE {se:.5}"
        );
    }
}

/// A single deterministic binary feature dominates every noise feature by
/// more than an order of magnitude.
#[test]
fn oob_mdi_separates_the_relevant_feature() {
    let per_seed = oob_mdi_over_seeds(true);
    let n = per_seed.len() as f64;
    let means: Vec<f64> = (0..5)
        .map(|k| per_seed.iter().map(|v| v[k]).sum::<f64>() / n)
        .collect();
    for k in 1..5 {
        assert!(
            means[0] > 10.0 * means[k].abs(),
            "relevant {} vs noise feature {k} at {}",
            means[0],
            means[k]
        );
    }
}
