//! Online break-even migration.
//!
//! At every interval the engine compares the rental cost of leaving
//! mis-tiered data in place (extra slow-tier latency already paid by the
//! accumulated profile) with the purchase cost of moving it (pages times the
//! per-page migration time) and enforces the recommendations once rental
//! exceeds purchase.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::arena::ArenaRuntime;
use crate::config::{CostModel, SiteId, Tier};
use crate::profiler::{AccessProfiler, ProfileSnapshot, SiteProfile};
use crate::recommender::{hottest_first, recommend, Heuristic, SiteItem, TierRecommendation};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationDecision {
    pub time_ns: u64,
    pub rental_cost_ns: u64,
    pub purchase_cost_ns: u64,
    pub migrate: bool,
    pub pages_up: u64,
    pub pages_down: u64,
    pub shortfall_pages: u64,
    /// Sites assigned to the fast tier by the last enforced recommendation.
    pub fast_sites: Vec<SiteId>,
}

/// Pages a site must move to match `recs`: `(up, down)`.
fn mismatch(site: &SiteProfile, recs: &TierRecommendation) -> (u64, u64) {
    let want = recs.desired_fast_pages(site.site_id, site.resident_pages);
    let have = site.resident_fast_pages;
    (want.saturating_sub(have), have.saturating_sub(want))
}

/// Extra latency paid for accesses that land on the slow tier but would be
/// fast under `recs`, net of the reverse direction. Accesses are split in
/// proportion to the pages that would move, which is the whole site when its
/// arena sits on a single tier.
pub fn get_rental_cost(prof: &ProfileSnapshot, recs: &TierRecommendation, cost: &CostModel) -> u64 {
    let (mut a, mut b) = (0u128, 0u128);
    for site in &prof.sites {
        if site.resident_pages == 0 {
            continue;
        }
        let (up, down) = mismatch(site, recs);
        let accs = prof.estimated_accesses(site) as u128;
        let pages = site.resident_pages as u128;
        a += accs * up as u128 / pages;
        b += accs * down as u128 / pages;
    }
    if a > b {
        let ns = (a - b) * cost.extra_ns_per_slower_access as u128;
        ns.min(u64::MAX as u128) as u64
    } else {
        0
    }
}

/// Time to move every mis-tiered page in either direction.
pub fn get_purchase_cost(
    prof: &ProfileSnapshot,
    recs: &TierRecommendation,
    cost: &CostModel,
) -> u64 {
    let pages: u64 = prof
        .sites
        .iter()
        .map(|s| {
            let (up, down) = mismatch(s, recs);
            up + down
        })
        .sum();
    pages.saturating_mul(cost.ns_per_page_moved)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Enforcement {
    pub pages_down: u64,
    pub pages_up: u64,
    pub shortfall: u64,
}

/// Remaps shared arenas to match `recs`: demotions first to free space,
/// then promotions hottest-first until the fast tier fills.
pub fn enforce_tier_recs(
    rt: &mut ArenaRuntime,
    prof: &ProfileSnapshot,
    recs: &TierRecommendation,
) -> Enforcement {
    let mut out = Enforcement::default();
    let mut promote: Vec<(SiteItem, u64)> = Vec::new();

    for site in &prof.sites {
        let Some(arena) = rt.shared_arena(site.site_id).map(|a| a.id) else {
            continue;
        };
        let resident = rt.arena(arena).map_or(0, |a| a.resident_pages());
        let live = SiteProfile {
            resident_pages: resident,
            resident_fast_pages: rt.arena(arena).map_or(0, |a| a.resident_pages_fast),
            ..site.clone()
        };
        let (up, down) = mismatch(&live, recs);
        match recs.tier_of(site.site_id) {
            Tier::Slow => {
                let r = rt
                    .move_pages(arena, Tier::Slow, down)
                    .expect("arena exists");
                out.pages_down += r.moved;
                out.shortfall += r.shortfall;
            }
            Tier::Fast => {
                if down > 0 {
                    let r = rt
                        .move_pages(arena, Tier::Slow, down)
                        .expect("arena exists");
                    out.pages_down += r.moved;
                    out.shortfall += r.shortfall;
                }
                let item = SiteItem {
                    site_id: site.site_id,
                    value: prof.estimated_accesses(site),
                    weight: resident,
                };
                promote.push((item, up));
            }
        }
    }

    promote.sort_by(|a, b| hottest_first(&a.0, &b.0));
    for (item, up) in promote {
        let arena = rt.shared_arena(item.site_id).expect("checked above").id;
        let r = rt.move_pages(arena, Tier::Fast, up).expect("arena exists");
        out.pages_up += r.moved;
        out.shortfall += r.shortfall;
    }
    out
}

/// The online tiering loop's state.
#[derive(Clone, Debug)]
pub struct TieringEngine {
    heuristic: Heuristic,
    cost: CostModel,
    fast_capacity_pages: u64,
    decisions: Vec<MigrationDecision>,
    assignments: BTreeMap<SiteId, Tier>,
}

impl TieringEngine {
    pub fn new(heuristic: Heuristic, cost: CostModel, fast_capacity_pages: u64) -> Self {
        Self {
            heuristic,
            cost,
            fast_capacity_pages,
            decisions: Vec::new(),
            assignments: BTreeMap::new(),
        }
    }

    /// Snapshots the profile, recommends, and migrates if renting has cost
    /// more than buying.
    pub fn maybe_migrate(
        &mut self,
        now: u64,
        rt: &mut ArenaRuntime,
        profiler: &AccessProfiler,
    ) -> MigrationDecision {
        let prof = profiler.snapshot_profile(rt, now);
        let recs = recommend(&prof, self.heuristic, self.fast_capacity_pages);
        let rental = get_rental_cost(&prof, &recs, &self.cost);
        let purchase = get_purchase_cost(&prof, &recs, &self.cost);
        let mut decision = MigrationDecision {
            time_ns: now,
            rental_cost_ns: rental,
            purchase_cost_ns: purchase,
            ..Default::default()
        };
        if rental > purchase {
            let done = enforce_tier_recs(rt, &prof, &recs);
            decision.migrate = true;
            decision.pages_up = done.pages_up;
            decision.pages_down = done.pages_down;
            decision.shortfall_pages = done.shortfall;
            for (site, rec) in &recs.sites {
                self.assignments.insert(*site, rec.tier);
            }
        }
        decision.fast_sites = self
            .assignments
            .iter()
            .filter(|(_, t)| **t == Tier::Fast)
            .map(|(s, _)| *s)
            .collect();
        self.decisions.push(decision.clone());
        decision
    }

    /// One interval of the online loop: decide, forget (if configured), and
    /// charge migration time to `clock`.
    pub fn online_step(
        &mut self,
        clock: &mut u64,
        rt: &mut ArenaRuntime,
        profiler: &mut AccessProfiler,
    ) -> MigrationDecision {
        let decision = self.maybe_migrate(*clock, rt, profiler);
        profiler
            .reweight_profile(self.cost.decay_factor)
            .expect("decay factor validated with the cost model");
        *clock += (decision.pages_up + decision.pages_down) * self.cost.ns_per_page_moved;
        decision
    }

    pub fn decisions(&self) -> &[MigrationDecision] {
        &self.decisions
    }

    /// Site tiers as of the last enforced recommendation.
    pub fn assignments(&self) -> &BTreeMap<SiteId, Tier> {
        &self.assignments
    }
}
