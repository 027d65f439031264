//! Shared statistics helpers for integration tests.

#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square goodness-of-fit p-value of observed counts against
/// analytic probabilities. Adjacent cells are pooled until each expected
/// count reaches 5 so the chi-square approximation stays valid in thin
/// Zipfian tails.
pub fn chi_square_p(observed: &[u64], probability: &[f64]) -> f64 {
    assert_eq!(observed.len(), probability.len());
    let draws: u64 = observed.iter().sum();
    let mut statistic = 0f64;
    let mut buckets = 0usize;
    let (mut o_acc, mut e_acc) = (0f64, 0f64);
    for (&o, &p) in observed.iter().zip(probability) {
        o_acc += o as f64;
        e_acc += p * draws as f64;
        if e_acc >= 5.0 {
            statistic += (o_acc - e_acc).powi(2) / e_acc;
            buckets += 1;
            (o_acc, e_acc) = (0.0, 0.0);
        }
    }
    if e_acc > 0.0 {
        // Fold the remainder into the last bucket.
        statistic += (o_acc - e_acc).powi(2) / e_acc;
    }
    assert!(buckets >= 2, "need at least two buckets for a meaningful test");
    let df = (buckets - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(statistic)
}
