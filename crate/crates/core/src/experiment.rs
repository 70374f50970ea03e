//! Multi-run orchestration: policy comparisons and capacity sweeps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{pct_of, PolicyKind};
use crate::report::{prefixed, write_atomic, write_reports, ReportError, Summary};
use crate::sim::{measure_peak_rss, run, RunResult, SimConfig, SimError};
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("capacity percentage list is empty")]
    NoPercentages,
    #[error("capacity percentage {0} is not a finite value ≥ 0")]
    BadPercentage(f64),
    #[error("policy list is empty")]
    NoPolicies,
    #[error("{policy} run failed")]
    Run {
        policy: PolicyKind,
        source: SimError,
    },
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub pct: f64,
    pub relative_throughput: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub peak_rss_pages: u64,
    pub baseline: Summary,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<(SweepRow, RunResult, Summary)>,
}

fn run_as(
    cfg: &SimConfig,
    policy: PolicyKind,
    fast: u64,
    trace: &Trace,
) -> Result<RunResult, ExperimentError> {
    let cfg = cfg.clone().with_policy(policy).with_fast_capacity(fast);
    run(&cfg, trace).map_err(|source| ExperimentError::Run { policy, source })
}

/// Runs every policy at every fast capacity, given as a percentage of the
/// trace's peak RSS. Throughput is relative to first touch with an unbounded
/// fast tier. Rows come back policy-major in the order requested.
pub fn sweep(
    base: &SimConfig,
    trace: &Trace,
    policies: &[PolicyKind],
    pcts: &[f64],
) -> Result<SweepOutcome, ExperimentError> {
    if pcts.is_empty() {
        return Err(ExperimentError::NoPercentages);
    }
    if policies.is_empty() {
        return Err(ExperimentError::NoPolicies);
    }
    if let Some(&bad) = pcts.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(ExperimentError::BadPercentage(bad));
    }
    let peak = measure_peak_rss(trace, base.cost.page_bytes);
    let baseline = Summary::from_result(&run_as(base, PolicyKind::FirstTouch, u64::MAX, trace)?);

    let jobs: Vec<(PolicyKind, f64)> = policies
        .iter()
        .flat_map(|&p| pcts.iter().map(move |&pct| (p, pct)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(policy, pct)| {
            let result = run_as(base, policy, pct_of(peak, pct), trace)?;
            let summary = Summary::from_result(&result).with_baseline(&baseline)?;
            let row = SweepRow {
                policy,
                pct,
                relative_throughput: summary.relative_throughput.expect("baseline set"),
            };
            Ok((row, result, summary))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(SweepOutcome {
        peak_rss_pages: peak,
        baseline,
        rows: runs.iter().map(|(r, _, _)| r.clone()).collect(),
        runs,
    })
}

/// Writes `<prefix>.sweep.csv` and each run's reports under
/// `<prefix>.<policy>.pct<N>`.
pub fn write_sweep(outcome: &SweepOutcome, prefix: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    for (row, result, summary) in &outcome.runs {
        let run_prefix = prefixed(prefix, &format!(".{}.pct{}", row.policy, row.pct));
        written.extend(write_reports(result, summary, &run_prefix)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &outcome.rows {
        w.serialize(row).expect("in-memory csv write");
    }
    let path = prefixed(prefix, ".sweep.csv");
    write_atomic(&path, &w.into_inner().expect("in-memory csv flush"))?;
    written.push(path);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub policy: PolicyKind,
    pub total_sim_ns: u64,
    pub relative_throughput: f64,
}

/// Runs each policy at the configured capacity. The first policy is the
/// baseline.
pub fn compare_policies(
    base: &SimConfig,
    trace: &Trace,
    policies: &[PolicyKind],
) -> Result<Vec<(RunResult, Summary)>, ExperimentError> {
    if policies.is_empty() {
        return Err(ExperimentError::NoPolicies);
    }
    let fast = base.tiers.fast_capacity_pages;
    let results = policies
        .par_iter()
        .map(|&p| run_as(base, p, fast, trace))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = Summary::from_result(&results[0]);
    results
        .into_iter()
        .map(|r| {
            let s = Summary::from_result(&r).with_baseline(&baseline)?;
            Ok((r, s))
        })
        .collect()
}

/// Writes `<prefix>.compare.csv` and each policy's reports under
/// `<prefix>.<policy>`.
pub fn write_compare(
    runs: &[(RunResult, Summary)],
    prefix: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    let mut w = csv::Writer::from_writer(Vec::new());
    for (result, summary) in runs {
        written.extend(write_reports(
            result,
            summary,
            &prefixed(prefix, &format!(".{}", summary.policy)),
        )?);
        w.serialize(CompareRow {
            policy: summary.policy,
            total_sim_ns: summary.total_sim_ns,
            relative_throughput: summary.relative_throughput.unwrap_or(1.0),
        })
        .expect("in-memory csv write");
    }
    let path = prefixed(prefix, ".compare.csv");
    write_atomic(&path, &w.into_inner().expect("in-memory csv flush"))?;
    written.push(path);
    Ok(written)
}
