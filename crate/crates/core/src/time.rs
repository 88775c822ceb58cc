//! Time is kept as integer nanoseconds on a monotonic timeline. Latency is
//! always a subtraction of two such stamps, so it can never go negative under
//! wall-clock adjustments. Wall-clock time appears only in report metadata.

/// Nanoseconds, used both for monotonic timestamps and for durations.
pub type Ns = u64;

pub const NS_PER_US: Ns = 1_000;
pub const NS_PER_MS: Ns = 1_000_000;
pub const NS_PER_SEC: Ns = 1_000_000_000;

/// Converts non-negative seconds to nanoseconds, rounding to the nearest tick.
pub fn ns_from_secs_f64(secs: f64) -> Ns {
    debug_assert!(secs >= 0.0, "negative duration: {secs}");
    (secs * NS_PER_SEC as f64).round() as Ns
}

pub fn ns_from_ms_f64(ms: f64) -> Ns {
    ns_from_secs_f64(ms / 1_000.0)
}

pub fn secs_from_ns(ns: Ns) -> f64 {
    ns as f64 / NS_PER_SEC as f64
}

pub fn ms_from_ns(ns: Ns) -> f64 {
    ns as f64 / NS_PER_MS as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_millis() {
        assert_eq!(ns_from_ms_f64(215.5), 215_500_000);
        assert_eq!(ms_from_ns(215_500_000), 215.5);
        assert_eq!(ns_from_secs_f64(0.0), 0);
    }
}
