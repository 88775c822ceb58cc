//! Closed-form queueing predictions.
//!
//! For an M/M/1 station with arrival rate λ and service rate μ (stable when
//! λ < μ), the sojourn time is exponential, so
//!
//! ```text
//! T_mean = 1 / (μ − λ)
//! T_p    = −ln(1 − p/100) / (μ − λ)
//! ```
//!
//! The M/M/k mean via Erlang C is an explicitly labeled extension validated
//! only against the simulator. Rates are per second, times in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueuingError {
    #[error("unstable system: lambda {lambda} >= mu {mu} (utilization would reach 1)")]
    UnstableSystem { lambda: f64, mu: f64 },
    #[error("percentile must lie strictly between 0 and 100, got {0}")]
    InvalidPercentile(f64),
    #[error("rates must be finite and non-negative: lambda {lambda}, mu {mu}")]
    InvalidRate { lambda: f64, mu: f64 },
    #[error("servers must be >= 1")]
    NoServers,
    #[error("measured runs and predictions do not pair up: {0}")]
    MismatchedSettings(String),
    #[error("gap report needs at least one (measured, predicted) pair")]
    EmptyGap,
}

fn check_stable(lambda: f64, mu: f64) -> Result<(), QueuingError> {
    if !(lambda.is_finite() && mu.is_finite()) || lambda < 0.0 || mu <= 0.0 {
        return Err(QueuingError::InvalidRate { lambda, mu });
    }
    if lambda >= mu {
        return Err(QueuingError::UnstableSystem { lambda, mu });
    }
    Ok(())
}

/// Mean M/M/1 sojourn time in seconds: 1/(μ − λ).
pub fn mm1_mean_secs(lambda: f64, mu: f64) -> Result<f64, QueuingError> {
    check_stable(lambda, mu)?;
    Ok(1.0 / (mu - lambda))
}

/// p'th percentile M/M/1 sojourn time in seconds: −ln(1 − p/100)/(μ − λ).
///
/// Computed as the percentile factor times `mm1_mean_secs`, which makes the
/// identity T_50 = ln 2 · T_mean hold exactly in floating point.
pub fn mm1_percentile_secs(lambda: f64, mu: f64, p: f64) -> Result<f64, QueuingError> {
    if !(p > 0.0 && p < 100.0) {
        return Err(QueuingError::InvalidPercentile(p));
    }
    Ok(-(1.0 - p / 100.0).ln() * mm1_mean_secs(lambda, mu)?)
}

/// Erlang C: probability an arrival waits in an M/M/k queue with offered load
/// a = λ/μ and k servers.
pub fn erlang_c(lambda: f64, mu: f64, servers: u32) -> Result<f64, QueuingError> {
    if servers == 0 {
        return Err(QueuingError::NoServers);
    }
    let k = servers as f64;
    if !(lambda.is_finite() && mu.is_finite()) || lambda < 0.0 || mu <= 0.0 {
        return Err(QueuingError::InvalidRate { lambda, mu });
    }
    if lambda >= k * mu {
        return Err(QueuingError::UnstableSystem { lambda, mu: k * mu });
    }
    let a = lambda / mu;
    let rho = a / k;
    // term_i = a^i / i!, built incrementally to avoid factorial overflow.
    let mut term = 1.0;
    let mut sum = 0.0;
    for i in 0..servers {
        sum += term;
        term *= a / (i + 1) as f64;
    }
    // term now holds a^k / k!.
    let tail = term / (1.0 - rho);
    Ok(tail / (sum + tail))
}

/// Mean M/M/k sojourn time in seconds: Erlang-C wait plus one service time.
/// Extension beyond the M/M/1 formulas above; validated against simulation.
pub fn mmk_mean_secs(lambda: f64, mu: f64, servers: u32) -> Result<f64, QueuingError> {
    let wait = erlang_c(lambda, mu, servers)? / (servers as f64 * mu - lambda);
    Ok(wait + 1.0 / mu)
}

/// One prediction row: inputs plus the closed-form mean and percentile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueuePrediction {
    pub lambda_per_sec: f64,
    pub mu_per_sec: f64,
    pub p: f64,
    pub t_mean_secs: f64,
    pub t_p_secs: f64,
}

pub fn predict(lambda: f64, mu: f64, p: f64) -> Result<QueuePrediction, QueuingError> {
    Ok(QueuePrediction {
        lambda_per_sec: lambda,
        mu_per_sec: mu,
        p,
        t_mean_secs: mm1_mean_secs(lambda, mu)?,
        t_p_secs: mm1_percentile_secs(lambda, mu, p)?,
    })
}

/// Measured-over-predicted ratios for a set of matched settings, aggregated
/// with the arithmetic mean (which reproduces the reference triples) and the
/// geometric mean alongside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub ratios: Vec<f64>,
    pub mean_ratio: f64,
    pub geomean_ratio: f64,
}

/// `measured` and `predicted` are (lambda, seconds) pairs; settings must match
/// one-to-one in order.
pub fn gap_report(
    measured: &[(f64, f64)],
    predicted: &[(f64, f64)],
) -> Result<GapSummary, QueuingError> {
    if measured.len() != predicted.len() {
        return Err(QueuingError::MismatchedSettings(format!(
            "{} measured runs vs {} predictions",
            measured.len(),
            predicted.len()
        )));
    }
    if measured.is_empty() {
        return Err(QueuingError::EmptyGap);
    }
    let mut ratios = Vec::with_capacity(measured.len());
    for (&(ml, mv), &(pl, pv)) in measured.iter().zip(predicted) {
        if (ml - pl).abs() > 1e-9 * ml.abs().max(1.0) {
            return Err(QueuingError::MismatchedSettings(format!(
                "measured lambda {ml} has no matching prediction (found {pl})"
            )));
        }
        ratios.push(mv / pv);
    }
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let geomean_ratio = (ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64).exp();
    Ok(GapSummary {
        ratios,
        mean_ratio,
        geomean_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MS: f64 = 1e-3;

    #[test]
    fn mm1_mean_matches_reference_settings() {
        // mu = 20/s with lambda 1.0, 9.1, 16.7 gives ~53, ~91, ~303 ms.
        assert!((mm1_mean_secs(1.0, 20.0).unwrap() - 52.63 * MS).abs() < 0.01 * MS);
        assert!((mm1_mean_secs(9.1, 20.0).unwrap() - 91.74 * MS).abs() < 0.01 * MS);
        assert!((mm1_mean_secs(16.7, 20.0).unwrap() - 303.03 * MS).abs() < 0.01 * MS);
        // lambda = 0 degenerates to the pure service time.
        assert!((mm1_mean_secs(0.0, 20.0).unwrap() - 50.0 * MS).abs() < 1e-12);
    }

    #[test]
    fn mm1_p99_matches_reference_settings() {
        assert!((mm1_percentile_secs(1.0, 20.0, 99.0).unwrap() - 242.4 * MS).abs() < 0.05 * MS);
        assert!((mm1_percentile_secs(9.1, 20.0, 99.0).unwrap() - 422.5 * MS).abs() < 0.05 * MS);
        assert!((mm1_percentile_secs(16.7, 20.0, 99.0).unwrap() - 1395.5 * MS).abs() < 0.05 * MS);
    }

    #[test]
    fn percentile_vanishes_as_p_approaches_zero() {
        let t = mm1_percentile_secs(1.0, 20.0, 1e-12).unwrap();
        assert!((0.0..1e-12).contains(&t));
    }

    #[test]
    fn unstable_and_invalid_inputs_are_rejected() {
        assert_eq!(
            mm1_mean_secs(20.0, 20.0),
            Err(QueuingError::UnstableSystem {
                lambda: 20.0,
                mu: 20.0
            })
        );
        assert!(mm1_mean_secs(25.0, 20.0).is_err());
        assert_eq!(
            mm1_percentile_secs(1.0, 20.0, 100.0),
            Err(QueuingError::InvalidPercentile(100.0))
        );
        assert_eq!(
            mm1_percentile_secs(1.0, 20.0, 0.0),
            Err(QueuingError::InvalidPercentile(0.0))
        );
    }

    #[test]
    fn erlang_c_single_server_reduces_to_utilization() {
        // For k = 1 the waiting probability is rho.
        for (lambda, mu) in [(1.0, 20.0), (9.1, 20.0), (16.7, 20.0)] {
            let c = erlang_c(lambda, mu, 1).unwrap();
            assert!((c - lambda / mu).abs() < 1e-12);
        }
        // k = 1 mean equals the M/M/1 mean.
        let a = mmk_mean_secs(9.1, 20.0, 1).unwrap();
        let b = mm1_mean_secs(9.1, 20.0).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn mmk_adds_capacity() {
        let one = mmk_mean_secs(9.1, 20.0, 1).unwrap();
        let two = mmk_mean_secs(9.1, 20.0, 2).unwrap();
        assert!(two < one);
        assert!(two > 1.0 / 20.0); // never beats the bare service time
    }

    #[test]
    fn gap_reproduces_reference_mean_ratio() {
        let measured = [(1.0, 123.0 * MS), (9.1, 459.0 * MS), (16.7, 852.0 * MS)];
        let predicted: Vec<(f64, f64)> = measured
            .iter()
            .map(|&(l, _)| (l, mm1_mean_secs(l, 20.0).unwrap()))
            .collect();
        let gap = gap_report(&measured, &predicted).unwrap();
        assert!(
            (gap.mean_ratio - 3.4).abs() < 0.05,
            "mean gap {}",
            gap.mean_ratio
        );
        assert!(gap.geomean_ratio > 1.0 && gap.geomean_ratio < gap.mean_ratio);
    }

    #[test]
    fn gap_reproduces_reference_p99_ratio() {
        let measured = [(1.0, 953.0 * MS), (9.1, 5008.0 * MS), (16.7, 11980.0 * MS)];
        let predicted: Vec<(f64, f64)> = measured
            .iter()
            .map(|&(l, _)| (l, mm1_percentile_secs(l, 20.0, 99.0).unwrap()))
            .collect();
        let gap = gap_report(&measured, &predicted).unwrap();
        assert!(
            (gap.mean_ratio - 8.1).abs() < 0.05,
            "p99 gap {}",
            gap.mean_ratio
        );
    }

    #[test]
    fn gap_of_identical_values_is_one() {
        let vals = [(1.0, 0.1), (2.0, 0.2)];
        let gap = gap_report(&vals, &vals).unwrap();
        assert_eq!(gap.ratios, vec![1.0, 1.0]);
        assert_eq!(gap.mean_ratio, 1.0);
    }

    #[test]
    fn gap_rejects_mismatches() {
        assert!(matches!(
            gap_report(&[(1.0, 0.1)], &[(1.0, 0.1), (2.0, 0.2)]),
            Err(QueuingError::MismatchedSettings(_))
        ));
        assert!(matches!(
            gap_report(&[(1.0, 0.1)], &[(2.0, 0.1)]),
            Err(QueuingError::MismatchedSettings(_))
        ));
        assert_eq!(gap_report(&[], &[]), Err(QueuingError::EmptyGap));
    }

    proptest! {
        #[test]
        fn median_is_ln2_times_mean_exactly(
            lambda in 0.0f64..99.0,
            gap in 0.01f64..400.0,
        ) {
            let mu = lambda + gap;
            let median = mm1_percentile_secs(lambda, mu, 50.0).unwrap();
            let mean = mm1_mean_secs(lambda, mu).unwrap();
            // Bitwise equality: the implementation factors through the mean.
            prop_assert_eq!(median, std::f64::consts::LN_2 * mean);
        }

        #[test]
        fn mean_is_monotone_in_rates(
            lambda in 0.0f64..50.0,
            gap in 0.1f64..100.0,
            bump in 0.001f64..10.0,
        ) {
            let mu = lambda + gap;
            let base = mm1_mean_secs(lambda, mu).unwrap();
            // Strictly increasing in lambda on the stable region.
            if lambda + bump < mu {
                prop_assert!(mm1_mean_secs(lambda + bump, mu).unwrap() > base);
            }
            // Strictly decreasing in mu.
            prop_assert!(mm1_mean_secs(lambda, mu + bump).unwrap() < base);
        }

        #[test]
        fn percentile_is_monotone_in_p(
            lambda in 0.0f64..50.0,
            gap in 0.1f64..100.0,
            p_lo in 1.0f64..98.0,
            dp in 0.5f64..1.9,
        ) {
            let mu = lambda + gap;
            let lo = mm1_percentile_secs(lambda, mu, p_lo).unwrap();
            let hi = mm1_percentile_secs(lambda, mu, p_lo + dp).unwrap();
            prop_assert!(hi > lo);
        }

        #[test]
        fn tail_percentiles_dominate_mean(
            lambda in 0.0f64..50.0,
            gap in 0.1f64..100.0,
            p in 63.3f64..99.99,
        ) {
            // For p above 1 − 1/e (~63.2%), T_p >= T_mean.
            let mu = lambda + gap;
            let tp = mm1_percentile_secs(lambda, mu, p).unwrap();
            let tm = mm1_mean_secs(lambda, mu).unwrap();
            prop_assert!(tp >= tm);
        }
    }
}
