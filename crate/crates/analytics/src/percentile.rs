//! Nearest-rank percentiles and the bounded-memory histogram fallback.
//!
//! Percentiles are exact nearest-rank over retained samples at desk scale.
//! When a run exceeds the configured sample cap, samples spill into a
//! fixed-resolution logarithmic histogram whose buckets are 1% wide in
//! relative terms, bounding both memory and quantile error.

use ebf_core::time::Ns;
use serde::{Deserialize, Serialize};

use crate::AnalyticsError;

/// Nearest-rank percentile: the ⌈p/100 · n⌉-th smallest sample, for
/// p in (0, 100]. p = 100 is the maximum.
pub fn percentile(samples: &[Ns], p: f64) -> Result<Ns, AnalyticsError> {
    if samples.is_empty() {
        return Err(AnalyticsError::EmptySamples);
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(AnalyticsError::InvalidPercentile(p));
    }
    let rank = nearest_rank(p, samples.len());
    let mut scratch: Vec<Ns> = samples.to_vec();
    let (_, nth, _) = scratch.select_nth_unstable(rank - 1);
    Ok(*nth)
}

/// 1-based nearest rank, multiplying before dividing so that exact decile
/// cases do not pick up float fuzz.
pub(crate) fn nearest_rank(p: f64, n: usize) -> usize {
    ((p * n as f64) / 100.0).ceil().max(1.0) as usize
}

/// Growth factor of the histogram buckets: 1% relative width.
const HIST_GROWTH: f64 = 1.01;

/// Logarithmic histogram over nanosecond values with ~1% relative error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    counts: Vec<u64>,
    total: u64,
}

impl LogHistogram {
    pub fn new() -> Self {
        LogHistogram {
            counts: Vec::new(),
            total: 0,
        }
    }

    fn bucket_of(value: Ns) -> usize {
        // Values of 0 or 1 ns share bucket 0.
        ((value.max(1) as f64).ln() / HIST_GROWTH.ln()).floor() as usize
    }

    fn bucket_value(bucket: usize) -> Ns {
        // Geometric midpoint of the bucket.
        HIST_GROWTH.powf(bucket as f64 + 0.5).round() as Ns
    }

    pub fn record(&mut self, value: Ns) {
        let b = Self::bucket_of(value);
        if b >= self.counts.len() {
            self.counts.resize(b + 1, 0);
        }
        self.counts[b] += 1;
        self.total += 1;
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn merge(&mut self, other: &LogHistogram) {
        if other.counts.len() > self.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (dst, src) in self.counts.iter_mut().zip(&other.counts) {
            *dst += src;
        }
        self.total += other.total;
    }

    pub fn percentile(&self, p: f64) -> Result<Ns, AnalyticsError> {
        if self.total == 0 {
            return Err(AnalyticsError::EmptySamples);
        }
        if !(p > 0.0 && p <= 100.0) {
            return Err(AnalyticsError::InvalidPercentile(p));
        }
        let rank = nearest_rank(p, self.total as usize) as u64;
        let mut seen = 0;
        for (bucket, &count) in self.counts.iter().enumerate() {
            seen += count;
            if seen >= rank {
                return Ok(Self::bucket_value(bucket));
            }
        }
        Ok(Self::bucket_value(self.counts.len().saturating_sub(1)))
    }
}

impl Default for LogHistogram {
    fn default() -> Self {
        Self::new()
    }
}

/// Sample storage that keeps exact values until `cap` is exceeded, then spills
/// into the logarithmic histogram. The mean stays exact either way.
#[derive(Clone, Debug)]
pub enum SampleStore {
    Exact {
        samples: Vec<Ns>,
        cap: usize,
    },
    Histogram {
        hist: LogHistogram,
        sum: u128,
        count: u64,
    },
}

impl SampleStore {
    pub fn with_cap(cap: usize) -> Self {
        SampleStore::Exact {
            samples: Vec::new(),
            cap,
        }
    }

    pub fn push(&mut self, value: Ns) {
        match self {
            SampleStore::Exact { samples, cap } => {
                if samples.len() < *cap {
                    samples.push(value);
                    return;
                }
                let mut hist = LogHistogram::new();
                let mut sum = 0u128;
                for &s in samples.iter() {
                    hist.record(s);
                    sum += u128::from(s);
                }
                hist.record(value);
                sum += u128::from(value);
                *self = SampleStore::Histogram {
                    count: hist.len(),
                    hist,
                    sum,
                };
            }
            SampleStore::Histogram { hist, sum, count } => {
                hist.record(value);
                *sum += u128::from(value);
                *count += 1;
            }
        }
    }

    pub fn len(&self) -> u64 {
        match self {
            SampleStore::Exact { samples, .. } => samples.len() as u64,
            SampleStore::Histogram { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_ns(&self) -> Option<f64> {
        match self {
            SampleStore::Exact { samples, .. } => {
                if samples.is_empty() {
                    None
                } else {
                    let sum: u128 = samples.iter().map(|&s| u128::from(s)).sum();
                    Some(sum as f64 / samples.len() as f64)
                }
            }
            SampleStore::Histogram { sum, count, .. } => {
                (*count > 0).then(|| *sum as f64 / *count as f64)
            }
        }
    }

    pub fn percentile(&self, p: f64) -> Result<Ns, AnalyticsError> {
        match self {
            SampleStore::Exact { samples, .. } => percentile(samples, p),
            SampleStore::Histogram { hist, .. } => hist.percentile(p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_pcg::Pcg64;

    #[test]
    fn decile_example_by_hand() {
        // {10, 20, ..., 100}: ⌈0.9 × 10⌉ = 9th smallest = 90.
        let samples: Vec<Ns> = (1..=10).map(|i| i * 10).collect();
        assert_eq!(percentile(&samples, 90.0).unwrap(), 90);
        assert_eq!(percentile(&samples, 50.0).unwrap(), 50);
    }

    #[test]
    fn single_sample_is_every_percentile() {
        for p in [0.1, 50.0, 99.9, 100.0] {
            assert_eq!(percentile(&[42], p).unwrap(), 42);
        }
    }

    #[test]
    fn p100_is_the_maximum() {
        let samples = [7, 3, 99, 12];
        assert_eq!(percentile(&samples, 100.0).unwrap(), 99);
    }

    #[test]
    fn empty_samples_is_an_error() {
        assert_eq!(percentile(&[], 50.0), Err(AnalyticsError::EmptySamples));
    }

    #[test]
    fn out_of_range_p_is_rejected() {
        assert!(percentile(&[1], 0.0).is_err());
        assert!(percentile(&[1], 100.5).is_err());
    }

    fn oracle(samples: &[Ns], p: f64) -> Ns {
        // Brute force: sort fully, index the nearest rank.
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        sorted[nearest_rank(p, sorted.len()) - 1]
    }

    #[test]
    fn matches_sort_and_index_oracle_on_random_multisets() {
        let mut rng = Pcg64::seed_from_u64(0x5eed);
        for case in 0..1000 {
            let n = rng.random_range(1..=10_000);
            let samples: Vec<Ns> = (0..n).map(|_| rng.random_range(0..5_000_000)).collect();
            let p = rng.random_range(1..=1000) as f64 / 10.0;
            assert_eq!(
                percentile(&samples, p).unwrap(),
                oracle(&samples, p),
                "case {case}: n={n} p={p}"
            );
        }
    }

    #[test]
    fn histogram_stays_within_one_percent() {
        let mut rng = Pcg64::seed_from_u64(1);
        let samples: Vec<Ns> = (0..200_000)
            .map(|_| rng.random_range(1_000..1_000_000_000))
            .collect();
        let mut hist = LogHistogram::new();
        for &s in &samples {
            hist.record(s);
        }
        for p in [50.0, 90.0, 99.0, 99.9] {
            let exact = oracle(&samples, p) as f64;
            let approx = hist.percentile(p).unwrap() as f64;
            let rel = (approx - exact).abs() / exact;
            assert!(
                rel < 0.011,
                "p{p}: exact {exact}, approx {approx}, rel {rel}"
            );
        }
    }

    #[test]
    fn histogram_merge_equals_combined_recording() {
        let mut a = LogHistogram::new();
        let mut b = LogHistogram::new();
        let mut combined = LogHistogram::new();
        for v in 1..2000u64 {
            if v % 2 == 0 {
                a.record(v * 997)
            } else {
                b.record(v * 997)
            }
            combined.record(v * 997);
        }
        a.merge(&b);
        assert_eq!(a, combined);
    }

    #[test]
    fn store_spills_to_histogram_past_cap() {
        let mut store = SampleStore::with_cap(100);
        for v in 1..=500u64 {
            store.push(v * 1_000_000);
        }
        assert_eq!(store.len(), 500);
        assert!(matches!(store, SampleStore::Histogram { .. }));
        // Mean stays exact.
        let expected_mean = (1..=500u64).sum::<u64>() as f64 / 500.0 * 1e6;
        assert!((store.mean_ns().unwrap() - expected_mean).abs() < 1e-6);
        // Percentile stays within the histogram's relative error.
        let p90 = store.percentile(90.0).unwrap() as f64;
        assert!((p90 - 450e6).abs() / 450e6 < 0.011, "p90 {p90}");
    }

    proptest! {
        #[test]
        fn percentile_is_monotone_in_p(
            mut samples in proptest::collection::vec(0u64..1_000_000, 1..200),
            p1 in 1.0f64..100.0,
            p2 in 1.0f64..100.0,
        ) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let a = percentile(&samples, lo).unwrap();
            let b = percentile(&samples, hi).unwrap();
            prop_assert!(a <= b);
            // And invariant under permutation of the input order.
            let before = percentile(&samples, lo).unwrap();
            samples.reverse();
            prop_assert_eq!(before, percentile(&samples, lo).unwrap());
        }
    }
}
