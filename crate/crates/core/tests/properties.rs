use std::collections::BTreeMap;

use proptest::prelude::*;

use tiersim_core::arena::{ArenaId, ArenaKind, ArenaRuntime, Strategy as Routing};
use tiersim_core::recommender::{hotset, knapsack, thermos};
use tiersim_core::report::{intervals_csv, IntervalRecord};
use tiersim_core::{
    AccessProfiler, CostModel, Grant, ObjectId, SiteId, SiteItem, ThreadId, Tier, TierConfig,
    Trace, TraceEvent,
};

fn items_strategy(max: usize) -> impl Strategy<Value = Vec<SiteItem>> {
    prop::collection::vec((0u64..10_000, 0u64..200), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (val, w))| SiteItem::new(i as u32, val, w))
            .collect()
    })
}

#[derive(Clone, Debug)]
enum Op {
    Alloc {
        thread: u32,
        site: u32,
        pages: u64,
        fast: bool,
    },
    Free(usize),
    Move {
        arena: usize,
        fast: bool,
        limit: u64,
    },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u32..3, 0u32..4, 1u64..40, any::<bool>()).prop_map(|(thread, site, pages, fast)| {
            Op::Alloc {
                thread,
                site,
                pages,
                fast,
            }
        }),
        (0usize..64).prop_map(Op::Free),
        (0usize..16, any::<bool>(), 0u64..100).prop_map(|(arena, fast, limit)| Op::Move {
            arena,
            fast,
            limit
        }),
    ]
}

proptest! {
    #[test]
    fn pages_are_conserved(ops in prop::collection::vec(op(), 1..80), fast_cap in 0u64..200) {
        let cost = CostModel { promotion_threshold_bytes: 16 * 4096, ..Default::default() };
        let mut rt = ArenaRuntime::new(&cost, TierConfig { fast_capacity_pages: fast_cap, slow_capacity_pages: None });
        let mut live: Vec<ObjectId> = Vec::new();
        for op in ops {
            match op {
                Op::Alloc { thread, site, pages, fast } => {
                    let tier = if fast && rt.free_pages(Tier::Fast) >= pages { Tier::Fast } else { Tier::Slow };
                    let rec = rt.allocate(ThreadId(thread), SiteId(site), pages * 4096, Routing::Hybrid, tier).unwrap();
                    live.push(rec.object_id);
                }
                Op::Free(i) if !live.is_empty() => {
                    let id = live.remove(i % live.len());
                    rt.free(id).unwrap();
                }
                Op::Free(_) => {}
                Op::Move { arena, fast, limit } => {
                    let n = rt.arenas().len();
                    if n > 0 {
                        let target = if fast { Tier::Fast } else { Tier::Slow };
                        let out = rt.move_pages(ArenaId((arena % n) as u32), target, limit).unwrap();
                        prop_assert!(out.moved <= limit);
                    }
                }
            }
            let live_pages: u64 = rt.live_objects().map(|o| o.page_count).sum();
            prop_assert_eq!(rt.used_pages(Tier::Fast) + rt.used_pages(Tier::Slow), live_pages);
            prop_assert!(rt.used_pages(Tier::Fast) <= fast_cap);
            let mut per_arena: BTreeMap<ArenaId, (u64, u64)> = BTreeMap::new();
            for o in rt.live_objects() {
                prop_assert!(o.fast_pages <= o.page_count);
                let e = per_arena.entry(o.arena).or_default();
                e.0 += o.fast_pages;
                e.1 += o.slow_pages();
            }
            for a in rt.arenas() {
                prop_assert_eq!(per_arena.get(&a.id).copied().unwrap_or_default(), rt.rss_pages(a.id).unwrap());
            }
        }
    }

    #[test]
    fn knapsack_is_optimal(items in items_strategy(10), cap in 0u64..400) {
        let chosen = knapsack(&items, cap);
        let pick = |mask: u32| items.iter().enumerate().filter(move |(i, _)| mask & (1 << i) != 0).map(|(_, it)| it);
        let mut best = 0;
        for mask in 0u32..(1 << items.len()) {
            let w: u64 = pick(mask).map(|it| it.weight).sum();
            if w <= cap {
                best = best.max(pick(mask).map(|it| it.value).sum::<u64>());
            }
        }
        let got: Vec<_> = items.iter().filter(|it| chosen.contains(&it.site_id)).collect();
        prop_assert!(got.iter().map(|it| it.weight).sum::<u64>() <= cap);
        prop_assert_eq!(got.iter().map(|it| it.value).sum::<u64>(), best);
    }

    #[test]
    fn hotset_overshoots_by_at_most_one_item(items in items_strategy(30), cap in 0u64..2000) {
        let chosen = hotset(&items, cap);
        let picked: Vec<_> = items.iter().filter(|it| chosen.contains(&it.site_id)).collect();
        let total: u64 = picked.iter().map(|it| it.weight).sum();
        let heaviest = picked.iter().map(|it| it.weight).max().unwrap_or(0);
        prop_assert!(total <= cap + heaviest);
        if total <= cap {
            prop_assert_eq!(picked.len(), items.len());
        }
    }

    #[test]
    fn thermos_never_overcommits(items in items_strategy(30), cap in 0u64..2000) {
        let recs = thermos(&items, cap);
        let mut granted = 0;
        let mut partial = 0;
        for it in &items {
            let rec = recs.get(it.site_id).unwrap();
            if rec.tier == Tier::Fast {
                granted += rec.granted_pages.cap(it.weight);
                if let Grant::Pages(g) = rec.granted_pages {
                    prop_assert!(g > 0 && g < it.weight);
                    partial += 1;
                }
            }
        }
        prop_assert!(granted <= cap);
        prop_assert!(partial <= 1);
    }

    #[test]
    fn heuristics_ignore_value_scale(items in items_strategy(10), cap in 0u64..400, k in 1u64..50) {
        let scaled: Vec<SiteItem> = items.iter().map(|it| SiteItem::new(it.site_id.0, it.value * k, it.weight)).collect();
        prop_assert_eq!(knapsack(&items, cap), knapsack(&scaled, cap));
        prop_assert_eq!(hotset(&items, cap), hotset(&scaled, cap));
        prop_assert_eq!(thermos(&items, cap), thermos(&scaled, cap));
    }

    #[test]
    fn stride_estimates_within_one_period(
        sites in prop::collection::vec(0u32..5, 0..3000),
        period in 1u64..700,
    ) {
        let cost = CostModel { sample_period: period, promotion_threshold_bytes: 0, ..Default::default() };
        let mut rt = ArenaRuntime::new(&cost, TierConfig::unbounded());
        let mut objs = BTreeMap::new();
        for s in 0..5 {
            // the second allocation of each site is its first shared one
            rt.allocate(ThreadId(0), SiteId(s), 4096, Routing::Hybrid, Tier::Fast).unwrap();
            let rec = rt.allocate(ThreadId(0), SiteId(s), 4096, Routing::Hybrid, Tier::Fast).unwrap();
            objs.insert(s, rec);
        }
        let mut profiler = AccessProfiler::new(&cost, 0);
        let mut truth: BTreeMap<u32, u64> = BTreeMap::new();
        for s in &sites {
            let rec = &objs[s];
            let kind = rt.arena(rec.arena).unwrap().kind;
            prop_assert!(matches!(kind, ArenaKind::SiteShared(_)));
            profiler.record_access(rec, kind, false);
            *truth.entry(*s).or_insert(0) += 1;
        }
        for (s, n) in truth {
            let est = profiler.samples(SiteId(s)) * period;
            prop_assert!(est.abs_diff(n) <= period, "site {} true {} est {}", s, n, est);
        }
    }

    #[test]
    fn interval_csv_round_trips(rows in prop::collection::vec(
        (any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>(), any::<u32>(), 0f64..1e12), 0..20)
    ) {
        let mut end = 0u64;
        let records: Vec<IntervalRecord> = rows
            .into_iter()
            .map(|(d, f, s, u, w, bw)| {
                end += d as u64 + 1;
                IntervalRecord {
                    interval_end_ns: end,
                    fast_accesses: f as u64,
                    slow_accesses: s as u64,
                    bytes_migrated_up: u as u64 * 4096,
                    bytes_migrated_down: w as u64 * 4096,
                    est_bandwidth_bytes_per_s: bw,
                }
            })
            .collect();
        let bytes = intervals_csv(&records);
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let back: Vec<IntervalRecord> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn trace_text_round_trips(sizes in prop::collection::vec(1u64..100_000, 1..20), picks in prop::collection::vec((any::<u16>(), any::<u32>(), any::<bool>()), 0..100)) {
        let mut events: Vec<TraceEvent> = sizes
            .iter()
            .enumerate()
            .map(|(i, &bytes)| TraceEvent::Alloc { thread: ThreadId(i as u32 % 3), site: SiteId(i as u32 % 5), bytes })
            .collect();
        for (o, off, w) in picks {
            let idx = o as usize % sizes.len();
            let object = ObjectId(idx as u64 + 1);
            let offset = off as u64 % sizes[idx];
            events.push(if w { TraceEvent::Write { object, offset } } else { TraceEvent::Read { object, offset } });
            events.push(TraceEvent::Time(off as u64));
        }
        let t = Trace { events };
        let back = Trace::from_text(&t.to_text()).unwrap();
        prop_assert_eq!(back.digest(), t.digest());
        prop_assert_eq!(back, t);
    }
}
