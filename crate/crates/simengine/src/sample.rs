//! Service-time and tier-yield sampling.

use ebf_core::component::{ServiceTimeModel, YieldModel};
use ebf_core::time::{Ns, ns_from_secs_f64};
use rand::RngExt;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rand_pcg::Pcg64;

/// Draws one service time. Always strictly positive (floored at one tick).
pub fn sample_service_time(model: &ServiceTimeModel, rng: &mut Pcg64) -> Ns {
    let ns = match model {
        ServiceTimeModel::Deterministic { value_ns } => *value_ns,
        ServiceTimeModel::Exponential { rate_per_sec } => {
            let unit: f64 = rng.sample(Exp1);
            ns_from_secs_f64(unit / rate_per_sec)
        }
        ServiceTimeModel::LogNormal { location, scale } => {
            let z: f64 = rng.sample(StandardNormal);
            ns_from_secs_f64((location + scale * z).exp())
        }
        ServiceTimeModel::ShiftedPareto {
            shape,
            scale_ns,
            shift_ns,
        } => {
            // X = x_m · U^(-1/α) with U uniform on (0, 1].
            let u = 1.0 - rng.random::<f64>();
            shift_ns + (*scale_ns as f64 * u.powf(-1.0 / shape)).round() as Ns
        }
        ServiceTimeModel::Empirical { samples, .. } => samples[rng.random_range(0..samples.len())],
    };
    ns.max(1)
}

/// Draws the number of results one tier probe returns.
pub fn sample_yield(model: &YieldModel, rng: &mut Pcg64) -> u64 {
    match model {
        YieldModel::Deterministic(n) => *n,
        YieldModel::Poisson(mean) => {
            if *mean <= 0.0 {
                0
            } else {
                let draw: f64 = Poisson::new(*mean).expect("validated mean").sample(rng);
                draw as u64
            }
        }
        YieldModel::UniformInt { lo, hi } => rng.random_range(*lo..=*hi),
    }
}
