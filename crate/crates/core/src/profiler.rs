//! Sampled access profiling keyed by allocation site.
//!
//! Only accesses to site-shared arenas are attributed. Samples accumulate
//! per site, so remapping an arena never resets its hotness.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{ArenaKind, ArenaRuntime, ObjectRecord};
use crate::config::{CostModel, SamplingMode, SiteId, Tier};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SiteProfile {
    pub site_id: SiteId,
    pub access_samples: u64,
    pub resident_pages: u64,
    /// Of `resident_pages`, how many sit on the fast tier.
    pub resident_fast_pages: u64,
    pub current_tier: Tier,
}

impl SiteProfile {
    pub fn estimated_accesses(&self, sample_period: u64) -> u64 {
        estimated_accesses(self.access_samples, sample_period)
    }
}

/// Scales a sample count back up to an access estimate.
pub fn estimated_accesses(samples: u64, sample_period: u64) -> u64 {
    samples.saturating_mul(sample_period)
}

/// A consistent copy of every shared arena's profile at one instant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileSnapshot {
    pub sites: Vec<SiteProfile>,
    pub sample_period: u64,
    pub snapshot_time: u64,
    /// Fast pages held by thread-private arenas; not available to sites.
    pub reserved_fast_pages: u64,
}

/// On-disk form of one profile entry.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireEntry {
    site: SiteId,
    tier: Tier,
    samples: u64,
    pages: u64,
}

impl ProfileSnapshot {
    pub fn empty(sample_period: u64) -> Self {
        Self {
            sites: Vec::new(),
            sample_period,
            snapshot_time: 0,
            reserved_fast_pages: 0,
        }
    }

    pub fn estimated_accesses(&self, site: &SiteProfile) -> u64 {
        site.estimated_accesses(self.sample_period)
    }

    pub fn get(&self, site: SiteId) -> Option<&SiteProfile> {
        self.sites.iter().find(|s| s.site_id == site)
    }

    /// Serializes as a JSON array of `{site, tier, samples, pages}`.
    pub fn to_json(&self) -> String {
        let wire: Vec<WireEntry> = self
            .sites
            .iter()
            .map(|s| WireEntry {
                site: s.site_id,
                tier: s.current_tier,
                samples: s.access_samples,
                pages: s.resident_pages,
            })
            .collect();
        serde_json::to_string_pretty(&wire).expect("profile serialization is infallible")
    }

    /// Parses a profile written by [`ProfileSnapshot::to_json`]. Each site's
    /// pages are taken to reside wholly on its listed tier.
    pub fn from_json(text: &str, sample_period: u64) -> Result<Self, serde_json::Error> {
        let wire: Vec<WireEntry> = serde_json::from_str(text)?;
        let mut sites: Vec<SiteProfile> = wire
            .into_iter()
            .map(|w| SiteProfile {
                site_id: w.site,
                access_samples: w.samples,
                resident_pages: w.pages,
                resident_fast_pages: if w.tier == Tier::Fast { w.pages } else { 0 },
                current_tier: w.tier,
            })
            .collect();
        sites.sort_by_key(|s| s.site_id);
        Ok(Self {
            sites,
            sample_period,
            snapshot_time: 0,
            reserved_fast_pages: 0,
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("reweight factor {0} outside [0, 1]")]
    BadFactor(f64),
}

#[derive(Clone, Debug)]
pub struct AccessProfiler {
    period: u64,
    mode: SamplingMode,
    reads_only: bool,
    global_counter: u64,
    site_counters: BTreeMap<SiteId, u64>,
    samples: BTreeMap<SiteId, u64>,
    rng: ChaCha8Rng,
}

impl AccessProfiler {
    pub fn new(cost: &CostModel, seed: u64) -> Self {
        Self {
            period: cost.sample_period.max(1),
            mode: cost.sampling,
            reads_only: cost.sample_reads_only,
            global_counter: 0,
            site_counters: BTreeMap::new(),
            samples: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample_period(&self) -> u64 {
        self.period
    }

    /// Observes one access to `object`; returns whether it was sampled.
    pub fn record_access(
        &mut self,
        object: &ObjectRecord,
        kind: ArenaKind,
        is_write: bool,
    ) -> bool {
        if self.reads_only && is_write {
            return false;
        }
        self.global_counter += 1;
        let shared = kind.is_shared();
        let hit = match self.mode {
            SamplingMode::Stride => {
                if !shared {
                    return false;
                }
                let c = self.site_counters.entry(object.site_id).or_insert(0);
                *c += 1;
                c.is_multiple_of(self.period)
            }
            SamplingMode::GlobalStride => shared && self.global_counter.is_multiple_of(self.period),
            SamplingMode::Random => {
                let draw = self.rng.gen_range(0..self.period) == 0;
                shared && draw
            }
        };
        if hit {
            *self.samples.entry(object.site_id).or_insert(0) += 1;
        }
        hit
    }

    pub fn samples(&self, site: SiteId) -> u64 {
        self.samples.get(&site).copied().unwrap_or(0)
    }

    /// Total accesses observed (attributed or not).
    pub fn accesses_seen(&self) -> u64 {
        self.global_counter
    }

    /// Collects samples and live page counts for every site with a shared arena.
    pub fn snapshot_profile(&self, arenas: &ArenaRuntime, now: u64) -> ProfileSnapshot {
        let sites = arenas
            .arenas()
            .iter()
            .filter_map(|a| match a.kind {
                ArenaKind::SiteShared(site) => Some((
                    site,
                    SiteProfile {
                        site_id: site,
                        access_samples: self.samples(site),
                        resident_pages: a.resident_pages(),
                        resident_fast_pages: a.resident_pages_fast,
                        current_tier: a.current_tier,
                    },
                )),
                _ => None,
            })
            .collect::<BTreeMap<_, _>>()
            .into_values()
            .collect();
        ProfileSnapshot {
            sites,
            sample_period: self.period,
            snapshot_time: now,
            reserved_fast_pages: arenas.private_fast_pages(),
        }
    }

    /// Scales every site's sample count by `factor`, rounding down.
    pub fn reweight_profile(&mut self, factor: f64) -> Result<(), ProfileError> {
        if !(0.0..=1.0).contains(&factor) {
            return Err(ProfileError::BadFactor(factor));
        }
        if factor == 1.0 {
            return Ok(());
        }
        for s in self.samples.values_mut() {
            *s = ((*s as f64) * factor).floor() as u64;
        }
        Ok(())
    }
}
