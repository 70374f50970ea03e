//! Trace replay under a placement policy.
//!
//! The clock is virtual: reads and writes advance it by the latency of the
//! tier holding the touched page, `T` events advance it directly, and
//! migrations stop the world for `pages × ns_per_page_moved`. Interval
//! boundaries are checked after every event.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena::{AllocEvent, ArenaError, ArenaKind, ArenaRuntime, Strategy};
use crate::config::{
    validate_config, ConfigError, CostModel, PolicyKind, SiteId, Tier, TierConfig,
};
pub use crate::hwcache::CacheStats;
use crate::hwcache::DirectMappedCache;
use crate::profiler::{AccessProfiler, ProfileSnapshot};
use crate::recommender::{recommend, Grant, Heuristic, TierRecommendation};
use crate::report::{IntervalRecord, IntervalRecorder};
use crate::tiering::{MigrationDecision, TieringEngine};
use crate::trace::{Trace, TraceEvent};

/// Everything a single run needs besides the trace.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub cost: CostModel,
    pub tiers: TierConfig,
    pub policy: PolicyKind,
    pub heuristic: Heuristic,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(
        cost: CostModel,
        tiers: TierConfig,
        policy: PolicyKind,
    ) -> Result<Self, ConfigError> {
        let v = validate_config(cost, tiers)?;
        Ok(Self {
            cost: v.cost,
            tiers: v.tiers,
            policy,
            heuristic: Heuristic::default(),
            seed: 0,
        })
    }

    pub fn with_heuristic(mut self, heuristic: Heuristic) -> Self {
        self.heuristic = heuristic;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_policy(mut self, policy: PolicyKind) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_fast_capacity(mut self, pages: u64) -> Self {
        self.tiers.fast_capacity_pages = pages;
        self
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("event {event}: both tiers exhausted placing {pages} pages")]
    CapacityExhausted { event: usize, pages: u64 },
    #[error("event {event}: access to object {object} which is not live")]
    DeadAccess { event: usize, object: u64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SitePlacement {
    pub fast_pages: u64,
    pub slow_pages: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub policy: PolicyKind,
    pub trace_digest: String,
    pub page_bytes: u64,
    pub total_sim_ns: u64,
    pub intervals: Vec<IntervalRecord>,
    /// Live pages per site when the trace ends.
    pub final_placements: BTreeMap<SiteId, SitePlacement>,
    pub peak_rss_pages: u64,
    pub fast_accesses: u64,
    pub slow_accesses: u64,
    pub pages_migrated_up: u64,
    pub pages_migrated_down: u64,
    pub migration_ns: u64,
    pub decisions: Vec<MigrationDecision>,
    pub hw_cache: Option<CacheStats>,
    /// Accumulated profile at the end of the run (profiling and online runs).
    pub final_profile: Option<ProfileSnapshot>,
    pub alloc_log: Vec<AllocEvent>,
}

/// Where an allocation of `pages` lands under first touch: the fast tier if
/// it has room, else the slow tier, else nowhere.
pub fn first_touch_place(rt: &ArenaRuntime, pages: u64) -> Option<Tier> {
    place_preferring(rt, Tier::Fast, pages)
}

fn place_preferring(rt: &ArenaRuntime, preferred: Tier, pages: u64) -> Option<Tier> {
    [preferred, preferred.other()]
        .into_iter()
        .find(|&t| rt.free_pages(t) >= pages)
}

/// Maximum number of simultaneously live pages over the trace.
pub fn measure_peak_rss(trace: &Trace, page_bytes: u64) -> u64 {
    let mut sizes: Vec<u64> = Vec::new();
    let (mut live, mut peak) = (0u64, 0u64);
    for e in &trace.events {
        match *e {
            TraceEvent::Alloc { bytes, .. } => {
                let pages = bytes.div_ceil(page_bytes);
                sizes.push(pages);
                live += pages;
                peak = peak.max(live);
            }
            TraceEvent::Free(obj) => live -= sizes[obj.0 as usize - 1],
            _ => {}
        }
    }
    peak
}

enum Mode {
    FirstTouch,
    /// Per-site arenas with sampling; tracks each site's peak pages.
    Profile {
        site_peak: BTreeMap<SiteId, u64>,
    },
    /// Per-thread-per-tier arenas placed by a fixed recommendation.
    Guided {
        recs: TierRecommendation,
        fast_live: BTreeMap<SiteId, u64>,
    },
    Online(Box<TieringEngine>),
    HwCache(DirectMappedCache),
}

struct Simulator<'a> {
    cfg: &'a SimConfig,
    mode: Mode,
    rt: ArenaRuntime,
    profiler: AccessProfiler,
    recorder: IntervalRecorder,
    clock: u64,
    next_boundary: u64,
    peak: u64,
    fast_accesses: u64,
    slow_accesses: u64,
    pages_up: u64,
    pages_down: u64,
    migration_ns: u64,
}

impl<'a> Simulator<'a> {
    fn new(cfg: &'a SimConfig, mode: Mode) -> Self {
        Self {
            cfg,
            mode,
            rt: ArenaRuntime::new(&cfg.cost, cfg.tiers),
            profiler: AccessProfiler::new(&cfg.cost, cfg.seed),
            recorder: IntervalRecorder::new(cfg.cost.page_bytes, cfg.cost.access_bytes),
            clock: 0,
            next_boundary: cfg.cost.interval_ns,
            peak: 0,
            fast_accesses: 0,
            slow_accesses: 0,
            pages_up: 0,
            pages_down: 0,
            migration_ns: 0,
        }
    }

    fn allocate(
        &mut self,
        idx: usize,
        thread: crate::config::ThreadId,
        site: SiteId,
        bytes: u64,
    ) -> Result<(), SimError> {
        let pages = self.rt.pages_for(bytes);
        let exhausted = SimError::CapacityExhausted { event: idx, pages };
        let (strategy, tier) = match &self.mode {
            Mode::FirstTouch => (
                Strategy::PerThreadTier,
                first_touch_place(&self.rt, pages).ok_or(exhausted)?,
            ),
            Mode::Profile { .. } => (
                Strategy::PerSite,
                first_touch_place(&self.rt, pages).ok_or(exhausted)?,
            ),
            Mode::Guided { recs, fast_live } => {
                let preferred = match recs.get(site) {
                    None => Tier::Fast,
                    Some(rec) if rec.tier == Tier::Slow => Tier::Slow,
                    Some(rec) => {
                        let placed = fast_live.get(&site).copied().unwrap_or(0);
                        let within = match rec.granted_pages {
                            Grant::All => true,
                            Grant::Pages(g) => placed + pages <= g,
                        };
                        if within {
                            Tier::Fast
                        } else {
                            Tier::Slow
                        }
                    }
                };
                (
                    Strategy::PerThreadTier,
                    place_preferring(&self.rt, preferred, pages).ok_or(exhausted)?,
                )
            }
            Mode::Online(_) => {
                let preferred = match self.rt.route(thread, site, Strategy::Hybrid, Tier::Fast) {
                    kind @ ArenaKind::SiteShared(_) => self
                        .rt
                        .arena_by_kind(kind)
                        .map_or(Tier::Fast, |a| a.current_tier),
                    _ => Tier::Fast,
                };
                (
                    Strategy::Hybrid,
                    place_preferring(&self.rt, preferred, pages).ok_or(exhausted)?,
                )
            }
            Mode::HwCache(_) => {
                if self.rt.free_pages(Tier::Slow) < pages {
                    return Err(exhausted);
                }
                (Strategy::PerThreadTier, Tier::Slow)
            }
        };
        let rec = self.rt.allocate(thread, site, bytes, strategy, tier)?;
        match &mut self.mode {
            Mode::Guided { fast_live, .. } if tier == Tier::Fast => {
                *fast_live.entry(site).or_insert(0) += rec.page_count;
            }
            Mode::Profile { site_peak } => {
                let now = self.rt.arena(rec.arena).map_or(0, |a| a.resident_pages());
                let e = site_peak.entry(site).or_insert(0);
                *e = (*e).max(now);
            }
            _ => {}
        }
        self.peak = self.peak.max(self.rt.resident_pages());
        Ok(())
    }

    fn access(
        &mut self,
        idx: usize,
        object: crate::config::ObjectId,
        offset: u64,
        is_write: bool,
    ) -> Result<(), SimError> {
        let rec = self.rt.object(object).ok_or(SimError::DeadAccess {
            event: idx,
            object: object.0,
        })?;
        let page = offset / self.cfg.cost.page_bytes;
        let (fast, ns) = match &mut self.mode {
            Mode::HwCache(cache) => cache.access(rec.global_first_page + page),
            _ => {
                let tier = rec.tier_of_page(page);
                (tier == Tier::Fast, self.cfg.cost.read_ns(tier))
            }
        };
        if matches!(self.mode, Mode::Profile { .. } | Mode::Online(_)) {
            let kind = self.rt.arena(rec.arena).expect("object arena exists").kind;
            let rec = rec.clone();
            self.profiler.record_access(&rec, kind, is_write);
        }
        self.clock += ns;
        self.recorder.access(fast);
        if fast {
            self.fast_accesses += 1;
        } else {
            self.slow_accesses += 1;
        }
        Ok(())
    }

    fn free(&mut self, object: crate::config::ObjectId) -> Result<(), SimError> {
        let (site, fast) = {
            let rec = self
                .rt
                .object(object)
                .ok_or(ArenaError::UnknownObject(object))?;
            (rec.site_id, rec.fast_pages)
        };
        self.rt.free(object)?;
        if let Mode::Guided { fast_live, .. } = &mut self.mode {
            if let Some(v) = fast_live.get_mut(&site) {
                *v = v.saturating_sub(fast);
            }
        }
        Ok(())
    }

    fn cross_boundaries(&mut self) {
        while self.clock >= self.next_boundary {
            let boundary = self.next_boundary;
            if let Mode::Online(engine) = &mut self.mode {
                let before = self.clock;
                let d = engine.online_step(&mut self.clock, &mut self.rt, &mut self.profiler);
                self.migration_ns += self.clock - before;
                self.pages_up += d.pages_up;
                self.pages_down += d.pages_down;
                self.recorder.migrated(d.pages_up, d.pages_down);
            }
            self.recorder.record_interval(boundary);
            self.next_boundary += self.cfg.cost.interval_ns;
        }
    }

    fn run(mut self, trace: &Trace) -> Result<RunResult, SimError> {
        for (idx, event) in trace.events.iter().enumerate() {
            match *event {
                TraceEvent::Time(d) => self.clock += d,
                TraceEvent::Alloc {
                    thread,
                    site,
                    bytes,
                } => self.allocate(idx, thread, site, bytes)?,
                TraceEvent::Free(obj) => self.free(obj)?,
                TraceEvent::Read { object, offset } => self.access(idx, object, offset, false)?,
                TraceEvent::Write { object, offset } => self.access(idx, object, offset, true)?,
            }
            self.cross_boundaries();
        }
        if self.recorder.has_pending(self.clock) {
            self.recorder.record_interval(self.clock);
        }

        let final_placements = self
            .rt
            .site_residency()
            .into_iter()
            .map(|(s, (f, sl))| {
                (
                    s,
                    SitePlacement {
                        fast_pages: f,
                        slow_pages: sl,
                    },
                )
            })
            .collect();
        let final_profile = match &self.mode {
            Mode::Profile { site_peak } => {
                let mut snap = self.profiler.snapshot_profile(&self.rt, self.clock);
                for s in &mut snap.sites {
                    s.resident_pages = site_peak
                        .get(&s.site_id)
                        .copied()
                        .unwrap_or(s.resident_pages);
                }
                Some(snap)
            }
            Mode::Online(_) => Some(self.profiler.snapshot_profile(&self.rt, self.clock)),
            _ => None,
        };
        let (decisions, hw_cache) = match self.mode {
            Mode::Online(engine) => (engine.decisions().to_vec(), None),
            Mode::HwCache(cache) => (Vec::new(), Some(cache.stats())),
            _ => (Vec::new(), None),
        };
        Ok(RunResult {
            policy: self.cfg.policy,
            trace_digest: trace.digest(),
            page_bytes: self.cfg.cost.page_bytes,
            total_sim_ns: self.clock,
            intervals: self.recorder.into_records(),
            final_placements,
            peak_rss_pages: self.peak,
            fast_accesses: self.fast_accesses,
            slow_accesses: self.slow_accesses,
            pages_migrated_up: self.pages_up,
            pages_migrated_down: self.pages_down,
            migration_ns: self.migration_ns,
            decisions,
            hw_cache,
            final_profile,
            alloc_log: self.rt.alloc_log().to_vec(),
        })
    }
}

/// Replays `trace` under `cfg.policy`. The offline policy runs both passes
/// and returns the guided one.
pub fn run(cfg: &SimConfig, trace: &Trace) -> Result<RunResult, SimError> {
    let mode = match cfg.policy {
        PolicyKind::FirstTouch => Mode::FirstTouch,
        PolicyKind::OfflineGuided => return run_offline_pair(cfg, trace).map(|(_, guided)| guided),
        PolicyKind::OnlineGuided => Mode::Online(Box::new(TieringEngine::new(
            cfg.heuristic,
            cfg.cost.clone(),
            cfg.tiers.fast_capacity_pages,
        ))),
        PolicyKind::HwCache => Mode::HwCache(DirectMappedCache::new(
            cfg.tiers.fast_capacity_pages,
            &cfg.cost,
        )),
    };
    Simulator::new(cfg, mode).run(trace)
}

/// Profiling pass: per-site arenas, first-touch placement, sampling on.
/// The result's `final_profile` holds each site's samples and peak pages.
pub fn run_profile_pass(cfg: &SimConfig, trace: &Trace) -> Result<RunResult, SimError> {
    let mut res = Simulator::new(
        cfg,
        Mode::Profile {
            site_peak: BTreeMap::new(),
        },
    )
    .run(trace)?;
    res.policy = PolicyKind::OfflineGuided;
    Ok(res)
}

/// Guided pass: each allocation goes to its site's recommended tier.
pub fn run_guided(
    cfg: &SimConfig,
    trace: &Trace,
    recs: &TierRecommendation,
) -> Result<RunResult, SimError> {
    let mode = Mode::Guided {
        recs: recs.clone(),
        fast_live: BTreeMap::new(),
    };
    let mut res = Simulator::new(cfg, mode).run(trace)?;
    res.policy = PolicyKind::OfflineGuided;
    Ok(res)
}

/// Recommendations from a profiling pass's full-run profile.
pub fn offline_recommendations(cfg: &SimConfig, profile: &ProfileSnapshot) -> TierRecommendation {
    recommend(profile, cfg.heuristic, cfg.tiers.fast_capacity_pages)
}

/// Profiles the trace in one replay, then replays it again under the
/// resulting recommendations.
pub fn run_offline_pair(
    cfg: &SimConfig,
    trace: &Trace,
) -> Result<(RunResult, RunResult), SimError> {
    let profile_run = run_profile_pass(cfg, trace)?;
    let profile = profile_run
        .final_profile
        .clone()
        .unwrap_or_else(|| ProfileSnapshot::empty(cfg.cost.sample_period));
    let recs = offline_recommendations(cfg, &profile);
    let guided = run_guided(cfg, trace, &recs)?;
    Ok((profile_run, guided))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ThreadId;

    fn cfg(policy: PolicyKind, fast: u64) -> SimConfig {
        SimConfig::new(
            CostModel::default(),
            TierConfig {
                fast_capacity_pages: fast,
                slow_capacity_pages: None,
            },
            policy,
        )
        .unwrap()
    }

    fn reads(n: usize) -> Trace {
        let mut text = String::from("A 0 1 4096\n");
        for _ in 0..n {
            text.push_str("R 1 0\n");
        }
        Trace::from_text(&text).unwrap()
    }

    #[test]
    fn fast_and_slow_read_costs() {
        let fast = run(&cfg(PolicyKind::FirstTouch, 10), &reads(1000)).unwrap();
        assert_eq!(fast.total_sim_ns, 1000 * 100);
        let slow = run(&cfg(PolicyKind::FirstTouch, 0), &reads(1000)).unwrap();
        assert_eq!(slow.total_sim_ns, 1000 * 400);
        assert_eq!(slow.slow_accesses, 1000);
    }

    #[test]
    fn empty_trace_is_zeroed() {
        for p in PolicyKind::ALL {
            let r = run(&cfg(p, 10), &Trace::default()).unwrap();
            assert_eq!(r.total_sim_ns, 0, "{p}");
            assert!(r.intervals.is_empty());
            assert_eq!(r.peak_rss_pages, 0);
            assert!(r.final_placements.is_empty());
        }
    }

    #[test]
    fn first_touch_placement() {
        let mut rt = ArenaRuntime::new(
            &CostModel::default(),
            TierConfig {
                fast_capacity_pages: 4,
                slow_capacity_pages: Some(10),
            },
        );
        assert_eq!(first_touch_place(&rt, 2), Some(Tier::Fast));
        rt.allocate(
            ThreadId(0),
            SiteId(1),
            3 * 4096,
            Strategy::PerThreadTier,
            Tier::Fast,
        )
        .unwrap();
        assert_eq!(first_touch_place(&rt, 2), Some(Tier::Slow));
        assert_eq!(first_touch_place(&rt, 1), Some(Tier::Fast));
        assert_eq!(first_touch_place(&rt, 11), None);
    }

    #[test]
    fn both_tiers_exhausted_aborts() {
        let c = SimConfig::new(
            CostModel::default(),
            TierConfig {
                fast_capacity_pages: 1,
                slow_capacity_pages: Some(1),
            },
            PolicyKind::FirstTouch,
        )
        .unwrap();
        let t = Trace::from_text("A 0 1 4096\nA 0 1 4096\nA 0 1 4096\n").unwrap();
        assert!(matches!(
            run(&c, &t),
            Err(SimError::CapacityExhausted { event: 2, pages: 1 })
        ));
    }

    #[test]
    fn peak_rss() {
        let t = Trace::from_text("A 0 1 40960\nF 1\nA 0 1 24576\n").unwrap();
        assert_eq!(measure_peak_rss(&t, 4096), 10);
        let t = Trace::from_text("A 0 1 40960\nA 0 2 40960\n").unwrap();
        assert_eq!(measure_peak_rss(&t, 4096), 20);
        assert_eq!(measure_peak_rss(&Trace::default(), 4096), 0);
    }

    #[test]
    fn intervals_close_on_boundaries() {
        let cost = CostModel {
            interval_ns: 1000,
            ..Default::default()
        };
        let c = SimConfig::new(cost, TierConfig::unbounded(), PolicyKind::FirstTouch).unwrap();
        let t = Trace::from_text("A 0 1 4096\nR 1 0\nT 900\nR 1 0\nT 2500\nR 1 0\n").unwrap();
        let r = run(&c, &t).unwrap();
        let ends: Vec<_> = r.intervals.iter().map(|i| i.interval_end_ns).collect();
        assert_eq!(ends, vec![1000, 2000, 3000, 3700]);
        let counts: Vec<_> = r.intervals.iter().map(|i| i.fast_accesses).collect();
        assert_eq!(counts, vec![1, 1, 0, 1]);
        assert_eq!(r.total_sim_ns, 3700);
    }

    #[test]
    fn hw_cache_charges_fills() {
        let t = Trace::from_text("A 0 1 8192\nR 1 0\nR 1 0\nR 1 4096\nR 1 0\n").unwrap();
        let r = run(&cfg(PolicyKind::HwCache, 1), &t).unwrap();
        let stats = r.hw_cache.unwrap();
        assert_eq!((stats.hits, stats.misses), (1, 3));
        assert_eq!(r.total_sim_ns, 100 + 3 * 1400);
        assert_eq!(
            r.final_placements[&SiteId(1)],
            SitePlacement {
                fast_pages: 0,
                slow_pages: 2
            }
        );
    }

    #[test]
    fn guided_places_by_recommendation() {
        let mut recs = TierRecommendation::default();
        recs.set(SiteId(1), Tier::Slow, Grant::All);
        recs.set(SiteId(2), Tier::Fast, Grant::Pages(2));
        let t = Trace::from_text("A 0 1 4096\nA 0 2 8192\nA 0 2 4096\nA 0 3 4096\n").unwrap();
        let r = run_guided(&cfg(PolicyKind::OfflineGuided, 100), &t, &recs).unwrap();
        assert_eq!(
            r.final_placements[&SiteId(1)],
            SitePlacement {
                fast_pages: 0,
                slow_pages: 1
            }
        );
        assert_eq!(
            r.final_placements[&SiteId(2)],
            SitePlacement {
                fast_pages: 2,
                slow_pages: 1
            }
        );
        // unknown site falls back to first touch
        assert_eq!(
            r.final_placements[&SiteId(3)],
            SitePlacement {
                fast_pages: 1,
                slow_pages: 0
            }
        );
    }
}
