//! Per-interval metrics, run summaries, and report files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PolicyKind, SiteId};
use crate::sim::{CacheStats, RunResult, SitePlacement};

pub const INTERVAL_CSV_HEADER: &str =
    "interval_end_ns,fast_accesses,slow_accesses,bytes_up,bytes_down,bandwidth_bps";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub interval_end_ns: u64,
    pub fast_accesses: u64,
    pub slow_accesses: u64,
    #[serde(rename = "bytes_up")]
    pub bytes_migrated_up: u64,
    #[serde(rename = "bytes_down")]
    pub bytes_migrated_down: u64,
    #[serde(rename = "bandwidth_bps")]
    pub est_bandwidth_bytes_per_s: f64,
}

impl IntervalRecord {
    pub fn accesses(&self) -> u64 {
        self.fast_accesses + self.slow_accesses
    }
}

/// Accumulates counters for the interval in progress.
#[derive(Clone, Debug)]
pub struct IntervalRecorder {
    page_bytes: u64,
    access_bytes: u64,
    start_ns: u64,
    fast: u64,
    slow: u64,
    pages_up: u64,
    pages_down: u64,
    records: Vec<IntervalRecord>,
}

impl IntervalRecorder {
    pub fn new(page_bytes: u64, access_bytes: u64) -> Self {
        Self {
            page_bytes,
            access_bytes,
            start_ns: 0,
            fast: 0,
            slow: 0,
            pages_up: 0,
            pages_down: 0,
            records: Vec::new(),
        }
    }

    pub fn access(&mut self, fast: bool) {
        if fast {
            self.fast += 1;
        } else {
            self.slow += 1;
        }
    }

    pub fn migrated(&mut self, pages_up: u64, pages_down: u64) {
        self.pages_up += pages_up;
        self.pages_down += pages_down;
    }

    pub fn has_pending(&self, now: u64) -> bool {
        now > self.start_ns || self.fast + self.slow + self.pages_up + self.pages_down > 0
    }

    /// Closes the current interval at `end_ns` and starts the next one.
    pub fn record_interval(&mut self, end_ns: u64) -> &IntervalRecord {
        let secs = end_ns.saturating_sub(self.start_ns) as f64 / 1e9;
        let accesses = self.fast + self.slow;
        let bandwidth = if accesses == 0 || secs == 0.0 {
            0.0
        } else {
            (self.access_bytes * accesses) as f64 / secs
        };
        self.records.push(IntervalRecord {
            interval_end_ns: end_ns,
            fast_accesses: self.fast,
            slow_accesses: self.slow,
            bytes_migrated_up: self.pages_up * self.page_bytes,
            bytes_migrated_down: self.pages_down * self.page_bytes,
            est_bandwidth_bytes_per_s: bandwidth,
        });
        self.start_ns = end_ns;
        self.fast = 0;
        self.slow = 0;
        self.pages_up = 0;
        self.pages_down = 0;
        self.records.last().expect("just pushed")
    }

    pub fn into_records(self) -> Vec<IntervalRecord> {
        self.records
    }
}

/// End-of-run summary written as `<prefix>.summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: PolicyKind,
    pub trace_digest: String,
    pub total_sim_ns: u64,
    pub fast_accesses: u64,
    pub slow_accesses: u64,
    pub bytes_migrated_up: u64,
    pub bytes_migrated_down: u64,
    pub total_migration_bytes: u64,
    pub migrations: u64,
    pub peak_rss_pages: u64,
    pub relative_throughput: Option<f64>,
    pub baseline: Option<String>,
    pub hw_cache: Option<CacheStats>,
    pub final_placements: BTreeMap<SiteId, SitePlacement>,
}

impl Summary {
    pub fn from_result(r: &RunResult) -> Self {
        let up = r.pages_migrated_up * r.page_bytes;
        let down = r.pages_migrated_down * r.page_bytes;
        Self {
            policy: r.policy,
            trace_digest: r.trace_digest.clone(),
            total_sim_ns: r.total_sim_ns,
            fast_accesses: r.fast_accesses,
            slow_accesses: r.slow_accesses,
            bytes_migrated_up: up,
            bytes_migrated_down: down,
            total_migration_bytes: up + down,
            migrations: r.decisions.iter().filter(|d| d.migrate).count() as u64,
            peak_rss_pages: r.peak_rss_pages,
            relative_throughput: None,
            baseline: None,
            hw_cache: r.hw_cache,
            final_placements: r.final_placements.clone(),
        }
    }

    /// Fills in throughput relative to `baseline`.
    pub fn with_baseline(mut self, baseline: &Summary) -> Result<Self, ReportError> {
        self.relative_throughput = Some(compare(baseline, &self)?);
        self.baseline = Some(baseline.policy.to_string());
        Ok(self)
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot compare runs of different traces ({baseline} vs {candidate})")]
    TraceMismatch { baseline: String, candidate: String },
    #[error("cannot write {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cannot read {path}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Baseline time over candidate time; above 1.0 means the candidate is faster.
pub fn compare(baseline: &Summary, candidate: &Summary) -> Result<f64, ReportError> {
    if baseline.trace_digest != candidate.trace_digest {
        return Err(ReportError::TraceMismatch {
            baseline: baseline.trace_digest.clone(),
            candidate: candidate.trace_digest.clone(),
        });
    }
    Ok(relative_throughput(
        baseline.total_sim_ns,
        candidate.total_sim_ns,
    ))
}

pub fn relative_throughput(baseline_ns: u64, candidate_ns: u64) -> f64 {
    if candidate_ns == 0 {
        if baseline_ns == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        baseline_ns as f64 / candidate_ns as f64
    }
}

/// `<prefix><suffix>` without treating the prefix's last dot as an extension.
pub fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = prefixed(path, ".tmp");
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(|source| {
        let _ = fs::remove_file(&tmp);
        ReportError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn intervals_csv(records: &[IntervalRecord]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let mut out = format!("{INTERVAL_CSV_HEADER}\n").into_bytes();
    for r in records {
        w.serialize(r).expect("in-memory csv write");
    }
    out.extend(w.into_inner().expect("in-memory csv flush"));
    out
}

pub fn read_intervals_csv(path: &Path) -> Result<Vec<IntervalRecord>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    rdr.deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err)
}

/// Writes `<prefix>.intervals.csv` and `<prefix>.summary.json`. Returns the
/// paths written.
pub fn write_reports(
    result: &RunResult,
    summary: &Summary,
    prefix: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let csv_path = prefixed(prefix, ".intervals.csv");
    write_atomic(&csv_path, &intervals_csv(&result.intervals))?;

    let json_path = prefixed(prefix, ".summary.json");
    let mut json = serde_json::to_vec_pretty(summary).expect("summary serialization is infallible");
    json.push(b'\n');
    write_atomic(&json_path, &json)?;
    Ok(vec![csv_path, json_path])
}

/// Writes the online engine's per-interval decisions, one JSON object per
/// line, to `<prefix>.decisions.jsonl`.
pub fn write_decisions(result: &RunResult, prefix: &Path) -> Result<PathBuf, ReportError> {
    let path = prefixed(prefix, ".decisions.jsonl");
    let mut buf = Vec::new();
    for d in &result.decisions {
        serde_json::to_writer(&mut buf, d).expect("decision serialization is infallible");
        buf.push(b'\n');
    }
    write_atomic(&path, &buf)?;
    Ok(path)
}
