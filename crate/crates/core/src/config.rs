//! Shared vocabulary: tiers, identifiers, the cost model and run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recommender::Heuristic;

/// One of the two memory tiers.
///
/// `Fast` is small and quick, `Slow` is large with higher latency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Fast,
    Slow,
}

impl Tier {
    pub fn other(self) -> Tier {
        match self {
            Tier::Fast => Tier::Slow,
            Tier::Slow => Tier::Fast,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Fast => "fast",
            Tier::Slow => "slow",
        })
    }
}

macro_rules! id_newtype {
    ($(#[$meta:meta])* $name:ident($inner:ty)) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(
    /// Allocation-site identifier as it appears in the trace.
    SiteId(u32)
);
id_newtype!(
    /// Object identifier; the N-th allocation in a trace creates object N.
    ObjectId(u64)
);
id_newtype!(ThreadId(u32));

/// Identity of an allocation context: the allocating instruction plus up to
/// three layers of callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AllocationSite {
    pub site_id: SiteId,
    pub context_depth: u8,
}

impl AllocationSite {
    pub const MAX_CONTEXT_DEPTH: u8 = 4;

    pub fn new(site_id: SiteId) -> Self {
        Self {
            site_id,
            context_depth: 1,
        }
    }
}

/// How access samples are drawn from the access stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Every `sample_period`-th attributable access of each site is sampled.
    #[default]
    Stride,
    /// Every `sample_period`-th access overall is sampled, like a hardware
    /// counter overflow; the sample lands on whichever site owns that access.
    GlobalStride,
    /// Each access is sampled independently with probability `1 / sample_period`.
    Random,
}

/// Latency and migration constants plus simulator knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    pub extra_ns_per_slower_access: u64,
    pub ns_per_page_moved: u64,
    pub fast_read_ns: u64,
    /// Defaults to `fast_read_ns + extra_ns_per_slower_access` when absent.
    pub slow_read_ns: Option<u64>,
    pub hw_page_fill_ns: u64,
    pub page_bytes: u64,
    pub sample_period: u64,
    pub interval_ns: u64,
    pub promotion_threshold_bytes: u64,
    pub decay_factor: f64,
    /// Bytes credited to interval bandwidth per access (one cache line).
    pub access_bytes: u64,
    pub sampling: SamplingMode,
    /// Sample loads only; stores neither advance counters nor get attributed.
    pub sample_reads_only: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            extra_ns_per_slower_access: 300,
            ns_per_page_moved: 2_000,
            fast_read_ns: 100,
            slow_read_ns: None,
            hw_page_fill_ns: 1_000,
            page_bytes: 4_096,
            sample_period: 512,
            interval_ns: 10_000_000_000,
            promotion_threshold_bytes: 4 << 20,
            decay_factor: 1.0,
            access_bytes: 64,
            sampling: SamplingMode::Stride,
            sample_reads_only: false,
        }
    }
}

impl CostModel {
    pub fn slow_read_ns(&self) -> u64 {
        self.slow_read_ns
            .unwrap_or(self.fast_read_ns + self.extra_ns_per_slower_access)
    }

    pub fn read_ns(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Fast => self.fast_read_ns,
            Tier::Slow => self.slow_read_ns(),
        }
    }

    /// Pages needed to hold `bytes`.
    pub fn pages_for(&self, bytes: u64) -> u64 {
        bytes.div_ceil(self.page_bytes)
    }
}

/// Physical capacity of each tier, in pages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierConfig {
    pub fast_capacity_pages: u64,
    /// `None` means unbounded.
    pub slow_capacity_pages: Option<u64>,
}

impl TierConfig {
    pub fn unbounded() -> Self {
        Self {
            fast_capacity_pages: u64::MAX,
            slow_capacity_pages: None,
        }
    }

    pub fn capacity(&self, tier: Tier) -> u64 {
        match tier {
            Tier::Fast => self.fast_capacity_pages,
            Tier::Slow => self.slow_capacity_pages.unwrap_or(u64::MAX),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0} must be > 0")]
    NonPositiveLatency(&'static str),
    #[error("page_bytes must be a power of two")]
    PageBytesNotPowerOfTwo,
    #[error("sample_period must be ≥ 1")]
    ZeroSamplePeriod,
    #[error("interval_ns must be > 0")]
    ZeroInterval,
    #[error("decay_factor must be in [0, 1]")]
    DecayOutOfRange,
    #[error("access_bytes must be > 0")]
    ZeroAccessBytes,
    #[error("tier_config: set exactly one of fast_capacity_pages or fast_capacity_pct")]
    AmbiguousFastCapacity,
    #[error("fast_capacity_pct must be a finite value ≥ 0")]
    BadCapacityPct,
    #[error("unknown policy '{0}' (valid: first-touch, offline-guided, online-guided, hw-cache)")]
    UnknownPolicy(String),
}

/// A cost model and tier configuration that passed [`validate_config`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedConfig {
    pub cost: CostModel,
    pub tiers: TierConfig,
}

/// Checks every invariant of the cost model and tier configuration and
/// reports the first violation.
pub fn validate_config(cost: CostModel, tiers: TierConfig) -> Result<ValidatedConfig, ConfigError> {
    for (name, value) in [
        (
            "extra_ns_per_slower_access",
            cost.extra_ns_per_slower_access,
        ),
        ("ns_per_page_moved", cost.ns_per_page_moved),
        ("fast_read_ns", cost.fast_read_ns),
        ("slow_read_ns", cost.slow_read_ns()),
        ("hw_page_fill_ns", cost.hw_page_fill_ns),
    ] {
        if value == 0 {
            return Err(ConfigError::NonPositiveLatency(name));
        }
    }
    if !cost.page_bytes.is_power_of_two() {
        return Err(ConfigError::PageBytesNotPowerOfTwo);
    }
    if cost.sample_period == 0 {
        return Err(ConfigError::ZeroSamplePeriod);
    }
    if cost.interval_ns == 0 {
        return Err(ConfigError::ZeroInterval);
    }
    if !(0.0..=1.0).contains(&cost.decay_factor) {
        return Err(ConfigError::DecayOutOfRange);
    }
    if cost.access_bytes == 0 {
        return Err(ConfigError::ZeroAccessBytes);
    }
    Ok(ValidatedConfig { cost, tiers })
}

/// Placement policy for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    FirstTouch,
    OfflineGuided,
    OnlineGuided,
    HwCache,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::FirstTouch,
        PolicyKind::OfflineGuided,
        PolicyKind::OnlineGuided,
        PolicyKind::HwCache,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::FirstTouch => "first-touch",
            PolicyKind::OfflineGuided => "offline-guided",
            PolicyKind::OnlineGuided => "online-guided",
            PolicyKind::HwCache => "hw-cache",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| ConfigError::UnknownPolicy(s.to_string()))
    }
}

/// Tier capacities as written in a config file. The fast tier is either an
/// absolute page count or a percentage of the trace's measured peak RSS.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierSpec {
    pub fast_capacity_pages: Option<u64>,
    pub fast_capacity_pct: Option<f64>,
    pub slow_capacity_pages: Option<u64>,
}

impl TierSpec {
    /// Resolves to concrete capacities. `peak_rss` is only called when the
    /// fast capacity is given as a percentage.
    pub fn resolve<E>(
        &self,
        peak_rss: impl FnOnce() -> Result<u64, E>,
    ) -> Result<Result<TierConfig, ConfigError>, E> {
        let fast = match (self.fast_capacity_pages, self.fast_capacity_pct) {
            (Some(pages), None) => pages,
            (None, Some(pct)) => {
                if !pct.is_finite() || pct < 0.0 {
                    return Ok(Err(ConfigError::BadCapacityPct));
                }
                pct_of(peak_rss()?, pct)
            }
            (None, None) => u64::MAX,
            (Some(_), Some(_)) => return Ok(Err(ConfigError::AmbiguousFastCapacity)),
        };
        Ok(Ok(TierConfig {
            fast_capacity_pages: fast,
            slow_capacity_pages: self.slow_capacity_pages,
        }))
    }
}

/// `pct` percent of `pages`, rounded down.
pub fn pct_of(pages: u64, pct: f64) -> u64 {
    ((pages as f64) * pct / 100.0).floor() as u64
}

/// Top-level run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub cost_model: CostModel,
    #[serde(default)]
    pub tier_config: TierSpec,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub heuristic: Heuristic,
    #[serde(default)]
    pub seed: u64,
    pub trace_path: PathBuf,
    pub output_prefix: PathBuf,
}

fn default_policy() -> PolicyKind {
    PolicyKind::OnlineGuided
}

impl RunConfig {
    pub fn new(trace_path: impl Into<PathBuf>, output_prefix: impl Into<PathBuf>) -> Self {
        Self {
            cost_model: CostModel::default(),
            tier_config: TierSpec::default(),
            policy: default_policy(),
            heuristic: Heuristic::default(),
            seed: 0,
            trace_path: trace_path.into(),
            output_prefix: output_prefix.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads a config file. Relative trace and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text).map_err(|source| LoadError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(dir) = path.parent() {
            if cfg.trace_path.is_relative() {
                cfg.trace_path = dir.join(&cfg.trace_path);
            }
            if cfg.output_prefix.is_relative() {
                cfg.output_prefix = dir.join(&cfg.output_prefix);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read config {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let v = validate_config(CostModel::default(), TierConfig::unbounded()).unwrap();
        assert_eq!(v.cost.extra_ns_per_slower_access, 300);
        assert_eq!(v.cost.ns_per_page_moved, 2_000);
        assert_eq!(v.cost.interval_ns, 10_000_000_000);
        assert_eq!(v.cost.sample_period, 512);
        assert_eq!(v.cost.promotion_threshold_bytes, 4 * 1024 * 1024);
        assert_eq!(v.cost.page_bytes, 4096);
        assert_eq!(v.cost.slow_read_ns(), 400);
        assert_eq!(v.cost.decay_factor, 1.0);
    }

    #[test]
    fn zero_sample_period_rejected() {
        let cost = CostModel {
            sample_period: 0,
            ..Default::default()
        };
        let err = validate_config(cost, TierConfig::unbounded()).unwrap_err();
        assert_eq!(err.to_string(), "sample_period must be ≥ 1");
    }

    #[test]
    fn odd_page_size_rejected() {
        let cost = CostModel {
            page_bytes: 3000,
            ..Default::default()
        };
        let err = validate_config(cost, TierConfig::unbounded()).unwrap_err();
        assert_eq!(err.to_string(), "page_bytes must be a power of two");
    }

    #[test]
    fn other_invariants() {
        let bad = [
            CostModel {
                fast_read_ns: 0,
                ..Default::default()
            },
            CostModel {
                interval_ns: 0,
                ..Default::default()
            },
            CostModel {
                decay_factor: 1.5,
                ..Default::default()
            },
            CostModel {
                decay_factor: f64::NAN,
                ..Default::default()
            },
            CostModel {
                page_bytes: 0,
                ..Default::default()
            },
        ];
        for cost in bad {
            assert!(validate_config(cost, TierConfig::unbounded()).is_err());
        }
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let text = r#"{"trace_path":"t","output_prefix":"o","polcy":"first-touch"}"#;
        assert!(RunConfig::from_json(text).is_err());
        let text = r#"{"trace_path":"t","output_prefix":"o","cost_model":{"sample_perod":3}}"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = r#"{
            "cost_model": {"sample_period": 64, "interval_ns": 1000000},
            "tier_config": {"fast_capacity_pct": 20},
            "policy": "first-touch",
            "heuristic": "hotset",
            "seed": 7,
            "trace_path": "trace.txt",
            "output_prefix": "out/run"
        }"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.cost_model.sample_period, 64);
        assert_eq!(cfg.cost_model.page_bytes, 4096);
        assert_eq!(cfg.policy, PolicyKind::FirstTouch);
        assert_eq!(cfg.heuristic, Heuristic::Hotset);
        let tiers = cfg
            .tier_config
            .resolve(|| Ok::<_, ()>(1000))
            .unwrap()
            .unwrap();
        assert_eq!(tiers.fast_capacity_pages, 200);
        assert_eq!(tiers.slow_capacity_pages, None);
    }

    #[test]
    fn policy_names() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        assert_eq!(
            "ONLINE_GUIDED".parse::<PolicyKind>().unwrap(),
            PolicyKind::OnlineGuided
        );
        assert!("lru".parse::<PolicyKind>().is_err());
    }
}
