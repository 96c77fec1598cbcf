//! Sample statistics shared by the experiments and the timing report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("need at least {need} samples, got {got}")]
pub struct InsufficientSamples {
    pub need: usize,
    pub got: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub jitter: f64,
    pub min: f64,
    pub max: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn summarize(xs: &[f64]) -> Result<Summary, InsufficientSamples> {
    if xs.len() < 2 {
        return Err(InsufficientSamples { need: 2, got: xs.len() });
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
    Ok(Summary {
        count: xs.len(),
        mean: m,
        jitter: var.sqrt(),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

/// Fixed-width bins from the bin containing the minimum to the one
/// containing the maximum. Every finite sample lands in exactly one bin.
pub fn histogram(xs: &[f64], width: f64) -> Vec<Bin> {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() || width <= 0.0 {
        return Vec::new();
    }
    let idx = |x: f64| (x / width).floor() as i64;
    let lo = finite.iter().map(|&x| idx(x)).min().expect("non-empty");
    let hi = finite.iter().map(|&x| idx(x)).max().expect("non-empty");
    let mut bins: Vec<Bin> = (lo..=hi)
        .map(|i| Bin { lo: i as f64 * width, hi: (i + 1) as f64 * width, count: 0 })
        .collect();
    for x in finite {
        bins[(idx(x) - lo) as usize].count += 1;
    }
    bins
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_samples_have_zero_jitter() {
        let s = summarize(&[42.0; 50]).unwrap();
        assert_eq!((s.mean, s.jitter), (42.0, 0.0));
    }

    #[test]
    fn needs_two_samples() {
        assert_eq!(summarize(&[1.0]), Err(InsufficientSamples { need: 2, got: 1 }));
    }

    #[test]
    fn normal_samples_recover_their_mean() {
        use rand_distr::{Distribution, Normal};
        let d = Normal::new(100.0, 30.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..2000).map(|_| d.sample(&mut rng)).collect();
        let s = summarize(&xs).unwrap();
        assert!((s.mean - 100.0).abs() < 5.0, "{}", s.mean);
        assert!((s.jitter - 30.0).abs() < 3.0, "{}", s.jitter);
    }

    #[test]
    fn known_histogram() {
        let bins = histogram(&[1.0, 9.9, 10.0, 25.0], 10.0);
        let counts: Vec<u64> = bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![2, 1, 1]);
        assert_eq!((bins[0].lo, bins[2].hi), (0.0, 30.0));
    }

    proptest! {
        #[test]
        fn bins_sum_to_sample_count(xs in proptest::collection::vec(0.0f64..1e4, 1..300), w in 1.0f64..50.0) {
            let total: u64 = histogram(&xs, w).iter().map(|b| b.count).sum();
            prop_assert_eq!(total as usize, xs.len());
        }

        #[test]
        fn jitter_is_shift_invariant(xs in proptest::collection::vec(-1e3f64..1e3, 2..100), k in -1e3f64..1e3) {
            let shifted: Vec<f64> = xs.iter().map(|x| x + k).collect();
            let (a, b) = (summarize(&xs).unwrap(), summarize(&shifted).unwrap());
            prop_assert!((a.jitter - b.jitter).abs() < 1e-6);
            prop_assert!((a.mean + k - b.mean).abs() < 1e-6);
        }
    }
}
