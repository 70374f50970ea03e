//! Fixtures shared by the benchmarks.

use tiersim_core::{generate_workload, HotnessOrder, SiteItem, Trace, WorkloadSpec};

/// `n` items with pseudo-random values and weights from a fixed LCG.
pub fn items(n: u32, seed: u64) -> Vec<SiteItem> {
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    let mut next = move || {
        x = x
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        x >> 33
    };
    (0..n)
        .map(|i| SiteItem::new(i, next() % 1_000_000, 1 + next() % 4096))
        .collect()
}

/// A skewed trace of `accesses` accesses over 16 sites.
pub fn trace(accesses: u64) -> Trace {
    let spec = WorkloadSpec {
        sites: 16,
        site_bytes_min: 1 << 20,
        site_bytes_max: 32 << 20,
        object_bytes: 512 << 10,
        skew: 1.5,
        accesses,
        hotness: HotnessOrder::ColdFirst,
        ..Default::default()
    };
    generate_workload(&spec, 7).expect("fixture spec is valid")
}
