//! Profile-to-tier heuristics.
//!
//! Each site is an item whose value is its estimated access count and whose
//! weight is its resident page count. The fast tier is the knapsack.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::config::{SiteId, Tier};
use crate::profiler::ProfileSnapshot;

/// Upper bound on knapsack capacity units; page weights are bucketed to fit.
pub const KNAPSACK_MAX_UNITS: u64 = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Knapsack,
    Hotset,
    #[default]
    Thermos,
}

impl Heuristic {
    pub const ALL: [Heuristic; 3] = [Heuristic::Knapsack, Heuristic::Hotset, Heuristic::Thermos];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Knapsack => "knapsack",
            Heuristic::Hotset => "hotset",
            Heuristic::Thermos => "thermos",
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown heuristic '{0}' (valid: knapsack, hotset, thermos)")]
pub struct UnknownHeuristic(pub String);

impl FromStr for Heuristic {
    type Err = UnknownHeuristic;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase();
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name() == norm)
            .ok_or_else(|| UnknownHeuristic(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SiteItem {
    pub site_id: SiteId,
    /// Estimated accesses (bandwidth proxy).
    pub value: u64,
    /// Resident pages (capacity).
    pub weight: u64,
}

impl SiteItem {
    pub fn new(site: u32, value: u64, weight: u64) -> Self {
        Self {
            site_id: SiteId(site),
            value,
            weight,
        }
    }
}

/// Value per unit of weight; zero-weight items count as one unit.
pub fn density(item: &SiteItem) -> f64 {
    item.value as f64 / item.weight.max(1) as f64
}

/// Hottest-first order: density descending, then value descending, then
/// site id ascending. Densities are compared exactly.
pub fn hottest_first(a: &SiteItem, b: &SiteItem) -> Ordering {
    let lhs = a.value as u128 * b.weight.max(1) as u128;
    let rhs = b.value as u128 * a.weight.max(1) as u128;
    rhs.cmp(&lhs)
        .then(b.value.cmp(&a.value))
        .then(a.site_id.cmp(&b.site_id))
}

fn sorted_by_density(items: &[SiteItem]) -> Vec<SiteItem> {
    let mut v: Vec<SiteItem> = items.iter().copied().filter(|i| i.value > 0).collect();
    v.sort_by(hottest_first);
    v
}

/// Exact 0/1 knapsack over `capacity_units`.
///
/// Among optimal subsets the lexicographically smallest sorted site-id
/// sequence is returned. Zero-value items are never selected.
pub fn knapsack(items: &[SiteItem], capacity_units: u64) -> BTreeSet<SiteId> {
    let mut pool: Vec<SiteItem> = items.iter().copied().filter(|i| i.value > 0).collect();
    pool.sort_by_key(|i| i.site_id);
    let total: u64 = pool.iter().map(|i| i.weight).fold(0, u64::saturating_add);
    if capacity_units >= total {
        return pool.iter().map(|i| i.site_id).collect();
    }
    let cap = capacity_units as usize;
    let n = pool.len();
    let width = cap + 1;
    // best[i * width + c]: max value from items i.. within capacity c
    let mut best = vec![0u64; (n + 1) * width];
    for i in (0..n).rev() {
        let (w, v) = (pool[i].weight, pool[i].value);
        for c in 0..=cap {
            let skip = best[(i + 1) * width + c];
            let take = if w as usize <= c && w <= capacity_units {
                best[(i + 1) * width + c - w as usize].saturating_add(v)
            } else {
                0
            };
            best[i * width + c] = skip.max(take);
        }
    }
    let mut chosen = BTreeSet::new();
    let mut c = cap;
    for (i, item) in pool.iter().enumerate() {
        let w = item.weight;
        if w as usize <= c
            && best[(i + 1) * width + c - w as usize].saturating_add(item.value)
                == best[i * width + c]
        {
            chosen.insert(item.site_id);
            c -= w as usize;
        }
    }
    chosen
}

/// Density-sorted selection that stops right after the cumulative weight
/// first exceeds `capacity_units` (the crossing item is kept).
pub fn hotset(items: &[SiteItem], capacity_units: u64) -> BTreeSet<SiteId> {
    hotset_order(items, capacity_units).into_iter().collect()
}

/// [`hotset`] selection in the order items were added.
pub fn hotset_order(items: &[SiteItem], capacity_units: u64) -> Vec<SiteId> {
    let mut out = Vec::new();
    let mut used: u64 = 0;
    for item in sorted_by_density(items) {
        out.push(item.site_id);
        used = used.saturating_add(item.weight);
        if used > capacity_units {
            break;
        }
    }
    out
}

/// Density-sorted packing that never over-commits the fast tier.
///
/// An item that does not fit whole may take the remaining free pages if its
/// pro-rated value beats the value of admitted items it would displace.
/// Using only free pages displaces nothing.
pub fn thermos(items: &[SiteItem], capacity_units: u64) -> TierRecommendation {
    let mut recs = TierRecommendation::default();
    for item in items {
        recs.set(item.site_id, Tier::Slow, Grant::All);
    }
    let mut admitted: Vec<SiteItem> = Vec::new();
    let mut remaining = capacity_units;
    for item in sorted_by_density(items) {
        if item.weight <= remaining {
            remaining -= item.weight;
            admitted.push(item);
            recs.set(item.site_id, Tier::Fast, Grant::All);
            continue;
        }
        let displaced = displaced_value(&admitted, item.weight, remaining);
        // value * (remaining / weight) > displaced, in exact arithmetic
        let prorated = item.value as u128 * remaining as u128;
        if prorated > displaced * item.weight as u128 {
            recs.set(item.site_id, Tier::Fast, Grant::Pages(remaining));
            admitted.push(item);
            remaining = 0;
        }
    }
    recs
}

/// Aggregate value of already-admitted items a candidate would push out if
/// it claimed `free` pages. Free pages displace nothing; with no free pages
/// the candidate would evict the coldest admitted items covering its weight.
fn displaced_value(admitted: &[SiteItem], weight: u64, free: u64) -> u128 {
    if free > 0 {
        return 0;
    }
    let mut need = weight;
    let mut value = 0u128;
    for item in admitted.iter().rev() {
        if need == 0 {
            break;
        }
        value += item.value as u128;
        need = need.saturating_sub(item.weight);
    }
    value
}

/// Pages a recommendation grants a site on the fast tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Grant {
    All,
    Pages(u64),
}

impl Grant {
    pub fn cap(self, resident: u64) -> u64 {
        match self {
            Grant::All => resident,
            Grant::Pages(p) => p.min(resident),
        }
    }
}

impl Serialize for Grant {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Grant::All => s.serialize_str("all"),
            Grant::Pages(p) => s.serialize_u64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for Grant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct GrantVisitor;
        impl Visitor<'_> for GrantVisitor {
            type Value = Grant;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"all\" or a page count")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Grant, E> {
                Ok(Grant::Pages(v))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Grant, E> {
                if v == "all" {
                    Ok(Grant::All)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(GrantVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteRec {
    pub tier: Tier,
    pub granted_pages: Grant,
}

/// Per-site target tiers. Sites absent from the map are treated as slow.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TierRecommendation {
    pub sites: BTreeMap<SiteId, SiteRec>,
}

impl TierRecommendation {
    pub fn set(&mut self, site: SiteId, tier: Tier, granted_pages: Grant) {
        self.sites.insert(
            site,
            SiteRec {
                tier,
                granted_pages,
            },
        );
    }

    pub fn get(&self, site: SiteId) -> Option<SiteRec> {
        self.sites.get(&site).copied()
    }

    pub fn tier_of(&self, site: SiteId) -> Tier {
        self.get(site).map_or(Tier::Slow, |r| r.tier)
    }

    /// How many of a site's `resident` pages the recommendation wants on the fast tier.
    pub fn desired_fast_pages(&self, site: SiteId, resident: u64) -> u64 {
        match self.get(site) {
            Some(SiteRec {
                tier: Tier::Fast,
                granted_pages,
            }) => granted_pages.cap(resident),
            _ => 0,
        }
    }

    pub fn fast_sites(&self) -> BTreeSet<SiteId> {
        self.sites
            .iter()
            .filter(|(_, r)| r.tier == Tier::Fast)
            .map(|(s, _)| *s)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recommendation serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn all_slow(snapshot: &ProfileSnapshot) -> TierRecommendation {
    let mut recs = TierRecommendation::default();
    for s in &snapshot.sites {
        recs.set(s.site_id, Tier::Slow, Grant::All);
    }
    recs
}

/// Converts a profile into per-site tier recommendations.
///
/// Pages already held by thread-private arenas come off the top of the fast
/// capacity. Sites without samples always stay slow.
pub fn recommend(
    snapshot: &ProfileSnapshot,
    heuristic: Heuristic,
    fast_capacity_pages: u64,
) -> TierRecommendation {
    let items: Vec<SiteItem> = snapshot
        .sites
        .iter()
        .filter(|s| s.access_samples > 0)
        .map(|s| SiteItem {
            site_id: s.site_id,
            value: snapshot.estimated_accesses(s),
            weight: s.resident_pages,
        })
        .collect();
    let capacity = fast_capacity_pages.saturating_sub(snapshot.reserved_fast_pages);

    let mut recs = all_slow(snapshot);
    match heuristic {
        Heuristic::Knapsack => {
            let unit = capacity.div_ceil(KNAPSACK_MAX_UNITS).max(1);
            let bucketed: Vec<SiteItem> = items
                .iter()
                .map(|i| SiteItem {
                    weight: i.weight.div_ceil(unit),
                    ..*i
                })
                .collect();
            for site in knapsack(&bucketed, capacity / unit) {
                recs.set(site, Tier::Fast, Grant::All);
            }
        }
        Heuristic::Hotset => {
            for site in hotset(&items, capacity) {
                recs.set(site, Tier::Fast, Grant::All);
            }
        }
        Heuristic::Thermos => {
            for (site, rec) in thermos(&items, capacity).sites {
                recs.sites.insert(site, rec);
            }
        }
    }
    recs
}
