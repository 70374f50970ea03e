//! Trace-driven simulator for guided data tiering across a fast and a slow
//! memory tier.
//!
//! A trace of allocations and accesses is replayed against an arena
//! allocator whose arenas can be remapped between tiers. Policies decide
//! where data lives: plain first touch, a two-pass offline profile, an
//! online loop that migrates when renting the wrong placement has cost more
//! than fixing it, or the fast tier acting as a hardware cache.

pub mod arena;
pub mod config;
pub mod experiment;
pub mod hwcache;
pub mod profiler;
pub mod recommender;
pub mod report;
pub mod sim;
pub mod tiering;
pub mod trace;
pub mod workload;

pub use arena::{
    AllocEvent, Arena, ArenaError, ArenaId, ArenaKind, ArenaRuntime, ObjectRecord, Strategy,
};
pub use config::{
    validate_config, AllocationSite, ConfigError, CostModel, ObjectId, PolicyKind, RunConfig,
    SamplingMode, SiteId, ThreadId, Tier, TierConfig, TierSpec,
};
pub use profiler::{AccessProfiler, ProfileSnapshot, SiteProfile};
pub use recommender::{recommend, Grant, Heuristic, SiteItem, SiteRec, TierRecommendation};
pub use report::{IntervalRecord, Summary};
pub use sim::{run, run_offline_pair, RunResult, SimConfig, SimError};
pub use tiering::{MigrationDecision, TieringEngine};
pub use trace::{Trace, TraceError, TraceEvent};
pub use workload::{generate_workload, HotnessOrder, WorkloadSpec};
