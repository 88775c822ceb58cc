//! Host-wide monotonic time. CLOCK_MONOTONIC is shared by every process on a
//! Linux host, so spans stamped by co-located services nest correctly inside
//! client-side root spans; `Instant` would give each process its own origin.

use ebf_core::time::Ns;

#[cfg(unix)]
pub fn monotonic_ns() -> Ns {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // Safety: clock_gettime writes into the provided struct; CLOCK_MONOTONIC
    // is always available on the targets this crate supports.
    unsafe {
        libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts);
    }
    ts.tv_sec as Ns * 1_000_000_000 + ts.tv_nsec as Ns
}

#[cfg(not(unix))]
pub fn monotonic_ns() -> Ns {
    use std::sync::OnceLock;
    use std::time::Instant;
    static ORIGIN: OnceLock<Instant> = OnceLock::new();
    ORIGIN.get_or_init(Instant::now).elapsed().as_nanos() as Ns
}
