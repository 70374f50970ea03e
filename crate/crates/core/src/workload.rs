//! Synthetic trace generator with power-law site hotness.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ObjectId, SiteId, ThreadId};
use crate::trace::{Trace, TraceEvent};

const LINE: u64 = 64;

/// Which sites end up hot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HotnessOrder {
    /// Random permutation of sites.
    #[default]
    Shuffled,
    /// Later-allocated sites are hotter, so first touch fills the fast tier
    /// with cold data.
    ColdFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub sites: u32,
    pub threads: u32,
    /// Site footprints are drawn log-uniformly from this range.
    pub site_bytes_min: u64,
    pub site_bytes_max: u64,
    /// Each site's footprint is allocated in chunks of this size.
    pub object_bytes: u64,
    /// Zipf exponent over site hotness rank. `inf` sends every access to
    /// the hottest site.
    pub skew: f64,
    pub phases: u32,
    pub accesses: u64,
    pub write_fraction: f64,
    pub compute_ns_per_access: u64,
    /// Accesses between `T` events.
    pub batch: u64,
    pub hotness: HotnessOrder,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            sites: 16,
            threads: 4,
            site_bytes_min: 1 << 20,
            site_bytes_max: 64 << 20,
            object_bytes: 1 << 20,
            skew: 1.2,
            phases: 1,
            accesses: 1_000_000,
            write_fraction: 0.3,
            compute_ns_per_access: 0,
            batch: 64,
            hotness: HotnessOrder::Shuffled,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("workload needs at least one {0}")]
    Empty(&'static str),
    #[error("site size range {min}..={max} is empty or zero")]
    SizeRange { min: u64, max: u64 },
    #[error("object_bytes must be ≥ 1")]
    ObjectBytes,
    #[error("skew must be ≥ 0, got {0}")]
    Skew(f64),
    #[error("write_fraction must be in [0, 1], got {0}")]
    WriteFraction(f64),
    #[error("batch must be ≥ 1")]
    Batch,
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.sites == 0 {
            return Err(WorkloadError::Empty("site"));
        }
        if self.threads == 0 {
            return Err(WorkloadError::Empty("thread"));
        }
        if self.phases == 0 {
            return Err(WorkloadError::Empty("phase"));
        }
        if self.site_bytes_min == 0 || self.site_bytes_min > self.site_bytes_max {
            return Err(WorkloadError::SizeRange {
                min: self.site_bytes_min,
                max: self.site_bytes_max,
            });
        }
        if self.object_bytes == 0 {
            return Err(WorkloadError::ObjectBytes);
        }
        if self.skew.is_nan() || self.skew < 0.0 {
            return Err(WorkloadError::Skew(self.skew));
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(WorkloadError::WriteFraction(self.write_fraction));
        }
        if self.batch == 0 {
            return Err(WorkloadError::Batch);
        }
        Ok(())
    }
}

struct SiteLayout {
    bytes: u64,
    first_object: u64,
}

/// Builds a deterministic trace from `spec` and `seed`.
///
/// All sites allocate up front, in site order, round-robin over threads.
/// Accesses then pick a site by Zipf weight over its current hotness rank,
/// and a cache line uniformly within the site's footprint. With several
/// phases the ranking rotates at each phase start.
pub fn generate_workload(spec: &WorkloadSpec, seed: u64) -> Result<Trace, WorkloadError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut layout = Vec::with_capacity(spec.sites as usize);
    let mut next_object = 1u64;
    let mut alloc_no = 0u64;

    let (lo, hi) = (
        (spec.site_bytes_min as f64).ln(),
        (spec.site_bytes_max as f64).ln(),
    );
    for site in 0..spec.sites {
        let bytes = if lo == hi {
            spec.site_bytes_min
        } else {
            let b = rng.gen_range(lo..=hi).exp().round() as u64;
            b.clamp(spec.site_bytes_min, spec.site_bytes_max)
        };
        layout.push(SiteLayout {
            bytes,
            first_object: next_object,
        });
        let mut left = bytes;
        while left > 0 {
            let chunk = left.min(spec.object_bytes);
            events.push(TraceEvent::Alloc {
                thread: ThreadId((alloc_no % spec.threads as u64) as u32),
                site: SiteId(site),
                bytes: chunk,
            });
            alloc_no += 1;
            next_object += 1;
            left -= chunk;
        }
    }

    // rank_site[r] = site with hotness rank r in the first phase
    let mut rank_site: Vec<u32> = (0..spec.sites).collect();
    match spec.hotness {
        HotnessOrder::Shuffled => rank_site.shuffle(&mut rng),
        HotnessOrder::ColdFirst => rank_site.reverse(),
    }
    let picker = if spec.skew.is_infinite() || spec.sites == 1 {
        None
    } else {
        let w: Vec<f64> = (0..spec.sites)
            .map(|r| 1.0 / ((r + 1) as f64).powf(spec.skew))
            .collect();
        Some(WeightedIndex::new(&w).expect("weights are positive and finite"))
    };
    let shift = (spec.sites / spec.phases).max(1) as usize;
    let per_phase = spec.accesses.div_ceil(spec.phases as u64).max(1);

    for i in 0..spec.accesses {
        let phase = (i / per_phase) as usize;
        let rank = picker.as_ref().map_or(0, |p| p.sample(&mut rng));
        let site = rank_site[(rank + phase * shift) % rank_site.len()];
        let sl = &layout[site as usize];
        let line = rng.gen_range(0..sl.bytes.div_ceil(LINE));
        let off = line * LINE;
        let object = ObjectId(sl.first_object + off / spec.object_bytes);
        let offset = off % spec.object_bytes;
        events.push(if rng.gen_bool(spec.write_fraction) {
            TraceEvent::Write { object, offset }
        } else {
            TraceEvent::Read { object, offset }
        });
        if (i + 1) % spec.batch == 0 && spec.compute_ns_per_access > 0 {
            events.push(TraceEvent::Time(spec.batch * spec.compute_ns_per_access));
        }
    }
    let tail = spec.accesses % spec.batch;
    if tail > 0 && spec.compute_ns_per_access > 0 {
        events.push(TraceEvent::Time(tail * spec.compute_ns_per_access));
    }
    Ok(Trace { events })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn small() -> WorkloadSpec {
        WorkloadSpec {
            sites: 8,
            threads: 2,
            site_bytes_min: 4096,
            site_bytes_max: 1 << 20,
            object_bytes: 64 << 10,
            accesses: 20_000,
            ..Default::default()
        }
    }

    fn site_counts(trace: &Trace, range: std::ops::Range<usize>) -> BTreeMap<SiteId, u64> {
        let mut site_of = Vec::new();
        for e in &trace.events {
            if let TraceEvent::Alloc { site, .. } = e {
                site_of.push(*site);
            }
        }
        let mut counts = BTreeMap::new();
        let accesses: Vec<_> = trace.events.iter().filter(|e| e.is_access()).collect();
        for e in &accesses[range] {
            if let TraceEvent::Read { object, .. } | TraceEvent::Write { object, .. } = e {
                *counts.entry(site_of[object.0 as usize - 1]).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn infinite_skew_hits_one_site() {
        let spec = WorkloadSpec {
            skew: f64::INFINITY,
            ..small()
        };
        let t = generate_workload(&spec, 3).unwrap();
        assert_eq!(site_counts(&t, 0..20_000).len(), 1);
    }

    #[test]
    fn same_seed_same_trace() {
        let a = generate_workload(&small(), 42).unwrap();
        let b = generate_workload(&small(), 42).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        assert_ne!(
            a.digest(),
            generate_workload(&small(), 43).unwrap().digest()
        );
    }

    #[test]
    fn phases_shift_the_hot_set() {
        let spec = WorkloadSpec {
            phases: 2,
            skew: 2.0,
            ..small()
        };
        let t = generate_workload(&spec, 9).unwrap();
        let first = site_counts(&t, 0..10_000);
        let second = site_counts(&t, 10_000..20_000);
        assert_ne!(first, second);
        let hottest = |m: &BTreeMap<SiteId, u64>| *m.iter().max_by_key(|(_, c)| **c).unwrap().0;
        assert_ne!(hottest(&first), hottest(&second));
    }

    #[test]
    fn trace_is_valid_and_complete() {
        let spec = WorkloadSpec {
            compute_ns_per_access: 5,
            ..small()
        };
        let t = generate_workload(&spec, 1).unwrap();
        let reparsed = Trace::from_text(&t.to_text()).unwrap();
        assert_eq!(reparsed, t);
        assert_eq!(t.access_count(), 20_000);
        let time: u64 = t
            .events
            .iter()
            .map(|e| if let TraceEvent::Time(d) = e { *d } else { 0 })
            .sum();
        assert_eq!(time, 20_000 * 5);
    }

    #[test]
    fn cold_first_puts_heat_on_last_site() {
        let spec = WorkloadSpec {
            hotness: HotnessOrder::ColdFirst,
            skew: 3.0,
            ..small()
        };
        let t = generate_workload(&spec, 1).unwrap();
        let counts = site_counts(&t, 0..20_000);
        assert_eq!(
            *counts.iter().max_by_key(|(_, c)| **c).unwrap().0,
            SiteId(7)
        );
    }

    #[test]
    fn rejects_bad_specs() {
        assert_eq!(
            generate_workload(
                &WorkloadSpec {
                    sites: 0,
                    ..small()
                },
                0
            ),
            Err(WorkloadError::Empty("site"))
        );
        assert!(generate_workload(
            &WorkloadSpec {
                skew: -1.0,
                ..small()
            },
            0
        )
        .is_err());
        assert!(generate_workload(
            &WorkloadSpec {
                write_fraction: 1.5,
                ..small()
            },
            0
        )
        .is_err());
        assert!(generate_workload(
            &WorkloadSpec {
                site_bytes_min: 10,
                site_bytes_max: 5,
                ..small()
            },
            0
        )
        .is_err());
        assert!(generate_workload(
            &WorkloadSpec {
                batch: 0,
                ..small()
            },
            0
        )
        .is_err());
    }
}
