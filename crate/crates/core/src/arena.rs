//! Arena bookkeeping for the three allocation strategies.
//!
//! Objects live in page-granular arenas. Each object keeps its leading
//! `fast_pages` pages on the fast tier and the rest on the slow tier, so an
//! arena's resident counts are always the sum over its live objects.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CostModel, ObjectId, SiteId, ThreadId, Tier, TierConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArenaId(pub u32);

impl std::fmt::Display for ArenaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArenaKind {
    ThreadPrivate(ThreadId),
    SiteShared(SiteId),
    ThreadTier(ThreadId, Tier),
}

impl ArenaKind {
    pub fn is_shared(&self) -> bool {
        matches!(self, ArenaKind::SiteShared(_))
    }
}

/// Arena allocation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// One arena per allocation site, shared by all threads (profiling runs).
    PerSite,
    /// One arena per thread per tier (offline guided runs).
    PerThreadTier,
    /// Thread-private arenas until a site's live bytes pass the promotion
    /// threshold, then one shared arena per site (online runs).
    Hybrid,
}

#[derive(Clone, Debug)]
pub struct Arena {
    pub id: ArenaId,
    pub kind: ArenaKind,
    /// Tier the arena is bound to; new pages land here unless the driver spills them.
    pub current_tier: Tier,
    pub resident_pages_fast: u64,
    pub resident_pages_slow: u64,
    next_page: u64,
    live: BTreeSet<ObjectId>,
}

impl Arena {
    pub fn resident_pages(&self) -> u64 {
        self.resident_pages_fast + self.resident_pages_slow
    }

    pub fn live_objects(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.live.iter().copied()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectRecord {
    pub object_id: ObjectId,
    pub site_id: SiteId,
    pub thread_id: ThreadId,
    pub size_bytes: u64,
    pub arena: ArenaId,
    /// First page within the arena's virtual page space.
    pub first_page: u64,
    pub page_count: u64,
    /// Leading pages resident on the fast tier.
    pub fast_pages: u64,
    /// First page in the run-wide page numbering (used by the hardware cache).
    pub global_first_page: u64,
}

impl ObjectRecord {
    pub fn slow_pages(&self) -> u64 {
        self.page_count - self.fast_pages
    }

    pub fn tier_of_page(&self, page_index: u64) -> Tier {
        if page_index < self.fast_pages {
            Tier::Fast
        } else {
            Tier::Slow
        }
    }
}

/// One allocation as routed by the runtime.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocEvent {
    pub object: ObjectId,
    pub site: SiteId,
    pub thread: ThreadId,
    pub size_bytes: u64,
    /// The site's live bytes just before this allocation.
    pub prior_active_bytes: u64,
    pub arena: ArenaId,
    pub kind: ArenaKind,
    pub tier: Tier,
}

/// Result of moving an arena's pages to another tier.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RemapOutcome {
    pub moved: u64,
    /// Pages that should have moved but did not fit on the target tier.
    pub shortfall: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArenaError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("double free of object {0}")]
    DoubleFree(ObjectId),
    #[error("unknown arena {0}")]
    UnknownArena(ArenaId),
    #[error("zero-byte allocation at site {0}")]
    ZeroSize(SiteId),
}

#[derive(Clone, Debug)]
pub struct ArenaRuntime {
    page_bytes: u64,
    promotion_threshold_bytes: u64,
    tiers: TierConfig,
    arenas: Vec<Arena>,
    by_kind: BTreeMap<ArenaKind, ArenaId>,
    objects: BTreeMap<ObjectId, ObjectRecord>,
    next_object: u64,
    site_bytes: BTreeMap<SiteId, u64>,
    used_fast: u64,
    used_slow: u64,
    next_global_page: u64,
    log: Vec<AllocEvent>,
}

impl ArenaRuntime {
    pub fn new(cost: &CostModel, tiers: TierConfig) -> Self {
        Self {
            page_bytes: cost.page_bytes,
            promotion_threshold_bytes: cost.promotion_threshold_bytes,
            tiers,
            arenas: Vec::new(),
            by_kind: BTreeMap::new(),
            objects: BTreeMap::new(),
            next_object: 1,
            site_bytes: BTreeMap::new(),
            used_fast: 0,
            used_slow: 0,
            next_global_page: 0,
            log: Vec::new(),
        }
    }

    pub fn tiers(&self) -> TierConfig {
        self.tiers
    }

    pub fn pages_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_bytes)
    }

    /// The arena an allocation would be routed to, without allocating.
    pub fn route(
        &self,
        thread: ThreadId,
        site: SiteId,
        strategy: Strategy,
        tier: Tier,
    ) -> ArenaKind {
        match strategy {
            Strategy::PerSite => ArenaKind::SiteShared(site),
            Strategy::PerThreadTier => ArenaKind::ThreadTier(thread, tier),
            Strategy::Hybrid => {
                if self.active_site_bytes(site) > self.promotion_threshold_bytes {
                    ArenaKind::SiteShared(site)
                } else {
                    ArenaKind::ThreadPrivate(thread)
                }
            }
        }
    }

    pub fn arena_by_kind(&self, kind: ArenaKind) -> Option<&Arena> {
        self.by_kind
            .get(&kind)
            .map(|id| &self.arenas[id.0 as usize])
    }

    /// Places a new object wholly on `tier`. Tier capacity is the caller's
    /// responsibility.
    pub fn allocate(
        &mut self,
        thread: ThreadId,
        site: SiteId,
        size_bytes: u64,
        strategy: Strategy,
        tier: Tier,
    ) -> Result<ObjectRecord, ArenaError> {
        if size_bytes == 0 {
            return Err(ArenaError::ZeroSize(site));
        }
        let kind = self.route(thread, site, strategy, tier);
        let arena_id = match self.by_kind.get(&kind) {
            Some(&id) => id,
            None => {
                let id = ArenaId(self.arenas.len() as u32);
                self.arenas.push(Arena {
                    id,
                    kind,
                    current_tier: tier,
                    resident_pages_fast: 0,
                    resident_pages_slow: 0,
                    next_page: 0,
                    live: BTreeSet::new(),
                });
                self.by_kind.insert(kind, id);
                id
            }
        };
        let page_count = self.pages_for(size_bytes);
        let object_id = ObjectId(self.next_object);
        self.next_object += 1;

        let arena = &mut self.arenas[arena_id.0 as usize];
        let first_page = arena.next_page;
        arena.next_page += page_count;
        arena.live.insert(object_id);
        let fast_pages = match tier {
            Tier::Fast => {
                arena.resident_pages_fast += page_count;
                self.used_fast += page_count;
                page_count
            }
            Tier::Slow => {
                arena.resident_pages_slow += page_count;
                self.used_slow += page_count;
                0
            }
        };

        let prior = self.site_bytes.entry(site).or_insert(0);
        let prior_active_bytes = *prior;
        *prior += size_bytes;

        let record = ObjectRecord {
            object_id,
            site_id: site,
            thread_id: thread,
            size_bytes,
            arena: arena_id,
            first_page,
            page_count,
            fast_pages,
            global_first_page: self.next_global_page,
        };
        self.next_global_page += page_count;
        self.log.push(AllocEvent {
            object: object_id,
            site,
            thread,
            size_bytes,
            prior_active_bytes,
            arena: arena_id,
            kind,
            tier,
        });
        self.objects.insert(object_id, record.clone());
        Ok(record)
    }

    /// Releases an object's pages; returns how many were released.
    pub fn free(&mut self, object: ObjectId) -> Result<u64, ArenaError> {
        let Some(rec) = self.objects.remove(&object) else {
            return Err(if object.0 >= 1 && object.0 < self.next_object {
                ArenaError::DoubleFree(object)
            } else {
                ArenaError::UnknownObject(object)
            });
        };
        let arena = &mut self.arenas[rec.arena.0 as usize];
        arena.live.remove(&object);
        arena.resident_pages_fast -= rec.fast_pages;
        arena.resident_pages_slow -= rec.slow_pages();
        self.used_fast -= rec.fast_pages;
        self.used_slow -= rec.slow_pages();
        if let Some(bytes) = self.site_bytes.get_mut(&rec.site_id) {
            *bytes -= rec.size_bytes;
        }
        Ok(rec.page_count)
    }

    /// Moves every resident page of `arena` to `target`, as far as capacity allows.
    pub fn remap_arena(
        &mut self,
        arena: ArenaId,
        target: Tier,
    ) -> Result<RemapOutcome, ArenaError> {
        self.move_pages(arena, target, u64::MAX)
    }

    /// Moves up to `limit` pages of `arena` onto `target` and binds the arena
    /// to `target`. Promotions walk objects oldest-first, demotions
    /// newest-first.
    pub fn move_pages(
        &mut self,
        arena: ArenaId,
        target: Tier,
        limit: u64,
    ) -> Result<RemapOutcome, ArenaError> {
        let a = self
            .arenas
            .get(arena.0 as usize)
            .ok_or(ArenaError::UnknownArena(arena))?;
        let off_target = match target {
            Tier::Fast => a.resident_pages_slow,
            Tier::Slow => a.resident_pages_fast,
        };
        let wanted = off_target.min(limit);
        let room = self.free_pages(target);
        let budget = wanted.min(room);

        let ids: Vec<ObjectId> = match target {
            Tier::Fast => a.live.iter().copied().collect(),
            Tier::Slow => a.live.iter().rev().copied().collect(),
        };
        let mut left = budget;
        for id in ids {
            if left == 0 {
                break;
            }
            let rec = self
                .objects
                .get_mut(&id)
                .expect("arena lists only live objects");
            let n = match target {
                Tier::Fast => {
                    let n = rec.slow_pages().min(left);
                    rec.fast_pages += n;
                    n
                }
                Tier::Slow => {
                    let n = rec.fast_pages.min(left);
                    rec.fast_pages -= n;
                    n
                }
            };
            left -= n;
        }
        let moved = budget - left;
        debug_assert_eq!(left, 0);

        let a = &mut self.arenas[arena.0 as usize];
        a.current_tier = target;
        match target {
            Tier::Fast => {
                a.resident_pages_slow -= moved;
                a.resident_pages_fast += moved;
                self.used_slow -= moved;
                self.used_fast += moved;
            }
            Tier::Slow => {
                a.resident_pages_fast -= moved;
                a.resident_pages_slow += moved;
                self.used_fast -= moved;
                self.used_slow += moved;
            }
        }
        Ok(RemapOutcome {
            moved,
            shortfall: wanted - moved,
        })
    }

    /// Resident `(fast, slow)` pages of an arena.
    pub fn rss_pages(&self, arena: ArenaId) -> Result<(u64, u64), ArenaError> {
        self.arenas
            .get(arena.0 as usize)
            .map(|a| (a.resident_pages_fast, a.resident_pages_slow))
            .ok_or(ArenaError::UnknownArena(arena))
    }

    /// Live bytes allocated at `site`; zero for sites never seen.
    pub fn active_site_bytes(&self, site: SiteId) -> u64 {
        self.site_bytes.get(&site).copied().unwrap_or(0)
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.objects.get(&id)
    }

    pub fn live_objects(&self) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.values()
    }

    pub fn arena(&self, id: ArenaId) -> Option<&Arena> {
        self.arenas.get(id.0 as usize)
    }

    pub fn arenas(&self) -> &[Arena] {
        &self.arenas
    }

    pub fn shared_arena(&self, site: SiteId) -> Option<&Arena> {
        self.arena_by_kind(ArenaKind::SiteShared(site))
    }

    pub fn is_shared(&self, arena: ArenaId) -> bool {
        self.arena(arena).is_some_and(|a| a.kind.is_shared())
    }

    pub fn used_pages(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Fast => self.used_fast,
            Tier::Slow => self.used_slow,
        }
    }

    pub fn free_pages(&self, tier: Tier) -> u64 {
        self.tiers
            .capacity(tier)
            .saturating_sub(self.used_pages(tier))
    }

    pub fn resident_pages(&self) -> u64 {
        self.used_fast + self.used_slow
    }

    /// Fast pages held by thread-private arenas.
    pub fn private_fast_pages(&self) -> u64 {
        self.arenas
            .iter()
            .filter(|a| matches!(a.kind, ArenaKind::ThreadPrivate(_)))
            .map(|a| a.resident_pages_fast)
            .sum()
    }

    /// Per-site `(fast, slow)` resident pages across all arenas.
    pub fn site_residency(&self) -> BTreeMap<SiteId, (u64, u64)> {
        let mut out: BTreeMap<SiteId, (u64, u64)> = BTreeMap::new();
        for rec in self.objects.values() {
            let e = out.entry(rec.site_id).or_default();
            e.0 += rec.fast_pages;
            e.1 += rec.slow_pages();
        }
        out
    }

    /// Every allocation routed so far, in order.
    pub fn alloc_log(&self) -> &[AllocEvent] {
        &self.log
    }
}
