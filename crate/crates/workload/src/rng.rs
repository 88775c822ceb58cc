//! Substream derivation: every user, station, or generator stream gets an
//! independent PCG-64 generator whose seed is derived from the master seed, a
//! domain label, and an index. Two different (domain, index) pairs never share
//! a stream, and the derivation itself is stable across runs and platforms.

use ebf_core::hash::fnv64;
use rand::SeedableRng;
use rand_pcg::Pcg64;

/// SplitMix64 finalizer, used to decorrelate derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    mix(master ^ mix(fnv64(domain.as_bytes()) ^ mix(index)))
}

pub fn substream(master: u64, domain: &str, index: u64) -> Pcg64 {
    Pcg64::seed_from_u64(derive_seed(master, domain, index))
}
