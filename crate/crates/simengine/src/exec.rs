//! Pure pieces of plan execution: branch resolution and the tiered-search
//! stop rule. The event loop drives these; tests can drive them directly.

use ebf_core::topology::Plan;
use rand::RngExt;
use rand_pcg::Pcg64;

/// Picks one arm of a probability-weighted branch. Weights were validated to
/// sum to 1 within tolerance; the last arm absorbs residual float mass.
pub fn resolve_weighted<'a>(arms: &'a [(f64, Plan)], rng: &mut Pcg64) -> &'a Plan {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (w, plan) in arms {
        acc += w;
        if u < acc {
            return plan;
        }
    }
    &arms.last().expect("validated non-empty").1
}

/// Walks popularity-ordered tiers, probing one at a time until the cumulative
/// yield reaches the quota. Unprobed tiers produce no spans; probing every
/// tier without reaching the quota flags a shortfall (the request still
/// completes).
#[derive(Clone, Debug)]
pub struct TieredCursor {
    quota: u64,
    tier_count: usize,
    accumulated: u64,
    next_tier: usize,
}

impl TieredCursor {
    pub fn new(quota: u64, tier_count: usize) -> Self {
        TieredCursor {
            quota,
            tier_count,
            accumulated: 0,
            next_tier: 0,
        }
    }

    /// Index of the tier to probe next, or `None` when the search is done
    /// (quota met, or all tiers exhausted, or quota zero).
    pub fn next_probe(&self) -> Option<usize> {
        if self.quota_met() || self.next_tier >= self.tier_count {
            None
        } else {
            Some(self.next_tier)
        }
    }

    pub fn record_yield(&mut self, results: u64) {
        self.accumulated = self.accumulated.saturating_add(results);
        self.next_tier += 1;
    }

    pub fn quota_met(&self) -> bool {
        self.accumulated >= self.quota
    }

    pub fn accumulated(&self) -> u64 {
        self.accumulated
    }

    /// True when every tier was probed and the quota still was not reached.
    pub fn shortfall(&self) -> bool {
        self.next_tier >= self.tier_count && !self.quota_met()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_quota_probes_nothing() {
        let cursor = TieredCursor::new(0, 3);
        assert_eq!(cursor.next_probe(), None);
        assert!(cursor.quota_met());
        assert!(!cursor.shortfall());
    }

    #[test]
    fn first_tier_covering_quota_stops_the_search() {
        let mut cursor = TieredCursor::new(100, 3);
        assert_eq!(cursor.next_probe(), Some(0));
        cursor.record_yield(120);
        assert_eq!(cursor.next_probe(), None);
        assert!(cursor.quota_met());
        assert!(!cursor.shortfall());
    }

    #[test]
    fn tiers_accumulate_until_quota() {
        let mut cursor = TieredCursor::new(100, 3);
        cursor.record_yield(60);
        assert_eq!(cursor.next_probe(), Some(1));
        cursor.record_yield(50);
        assert_eq!(cursor.next_probe(), None);
        assert_eq!(cursor.accumulated(), 110);
    }

    #[test]
    fn exhausting_all_tiers_short_flags() {
        let mut cursor = TieredCursor::new(1000, 2);
        cursor.record_yield(10);
        cursor.record_yield(20);
        assert_eq!(cursor.next_probe(), None);
        assert!(cursor.shortfall());
    }

    #[test]
    fn weighted_branch_is_binomially_fair() {
        let arms = vec![
            (0.5, Plan::Station("a".into())),
            (0.5, Plan::Station("b".into())),
        ];
        let mut rng = Pcg64::seed_from_u64(3);
        let n = 100_000;
        let mut first = 0u64;
        for _ in 0..n {
            if matches!(resolve_weighted(&arms, &mut rng), Plan::Station(id) if id == "a") {
                first += 1;
            }
        }
        let share = first as f64 / n as f64;
        assert!((share - 0.5).abs() < 0.01, "share {share}");
    }

    #[test]
    fn degenerate_weights_pick_the_certain_arm() {
        let arms = vec![
            (0.0, Plan::Station("never".into())),
            (1.0, Plan::Station("always".into())),
        ];
        let mut rng = Pcg64::seed_from_u64(4);
        for _ in 0..1000 {
            assert!(
                matches!(resolve_weighted(&arms, &mut rng), Plan::Station(id) if id == "always")
            );
        }
    }
}
