use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tiersim_core::experiment::{compare_policies, sweep, write_compare, write_sweep};
use tiersim_core::report::{prefixed, write_atomic, write_decisions, write_reports};
use tiersim_core::sim::{measure_peak_rss, offline_recommendations, run_guided, run_profile_pass};
use tiersim_core::{
    generate_workload, run, Heuristic, PolicyKind, ProfileSnapshot, RunConfig, RunResult,
    SimConfig, Summary, Trace, WorkloadSpec,
};

#[derive(Parser)]
#[command(
    name = "tiersim",
    version,
    about = "Replay memory traces against two-tier placement policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace
    Gen {
        /// Workload spec (JSON); defaults are used for missing keys
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay one trace under one policy
    Run(RunArgs),
    /// Profile a trace, then replay it under the resulting recommendations
    Offline {
        #[command(flatten)]
        run: RunArgs,
        /// Skip profiling and use this profile (JSON) instead
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Run several policies on one trace; the first is the baseline
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "first-touch,offline-guided,online-guided,hw-cache"
        )]
        policies: Vec<PolicyKind>,
    },
    /// Run policies at fast-tier capacities given as percentages of peak RSS
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated percentages, e.g. 10,20,30,40,50
        #[arg(long)]
        pcts: String,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "first-touch,offline-guided,online-guided,hw-cache"
        )]
        policies: Vec<PolicyKind>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output path prefix for report files
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    heuristic: Option<Heuristic>,
    #[arg(long)]
    fast_capacity_pct: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    interval_ns: Option<u64>,
    #[arg(long)]
    sample_period: Option<u64>,
    /// Also write the online engine's decisions as JSON lines
    #[arg(long)]
    decisions: bool,
}

/// Failure classes, mapped to exit codes 1 and 2.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T> Classify<T> for Result<T> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(Failure::Usage)
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(Failure::Runtime)
    }
}

struct Prepared {
    sim: SimConfig,
    trace: Trace,
    output: PathBuf,
}

impl RunArgs {
    /// Merges flags over the config file over defaults, loads the trace and
    /// resolves the fast capacity.
    fn prepare(&self) -> Result<Prepared> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::new(PathBuf::new(), PathBuf::new()),
        };
        if let Some(t) = &self.trace {
            cfg.trace_path = t.clone();
        }
        if let Some(o) = &self.output {
            cfg.output_prefix = o.clone();
        }
        if let Some(p) = self.policy {
            cfg.policy = p;
        }
        if let Some(h) = self.heuristic {
            cfg.heuristic = h;
        }
        if let Some(pct) = self.fast_capacity_pct {
            cfg.tier_config.fast_capacity_pct = Some(pct);
            cfg.tier_config.fast_capacity_pages = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.interval_ns {
            cfg.cost_model.interval_ns = n;
        }
        if let Some(p) = self.sample_period {
            cfg.cost_model.sample_period = p;
        }
        if cfg.trace_path.as_os_str().is_empty() {
            bail!("no trace given (use --trace or trace_path in the config)");
        }
        if cfg.output_prefix.as_os_str().is_empty() {
            bail!("no output prefix given (use --output or output_prefix in the config)");
        }

        let trace = Trace::load(&cfg.trace_path)?;
        let page_bytes = cfg.cost_model.page_bytes;
        let tiers = cfg
            .tier_config
            .resolve(|| {
                Ok::<_, std::convert::Infallible>(measure_peak_rss(&trace, page_bytes.max(1)))
            })
            .unwrap_or_else(|never| match never {})?;
        let sim = SimConfig::new(cfg.cost_model, tiers, cfg.policy)?
            .with_heuristic(cfg.heuristic)
            .with_seed(cfg.seed);
        Ok(Prepared {
            sim,
            trace,
            output: cfg.output_prefix,
        })
    }
}

fn summary_line(r: &RunResult, files: &[PathBuf]) -> String {
    let moved = (r.pages_migrated_up + r.pages_migrated_down) * r.page_bytes;
    format!(
        "{}: {} ns, {} fast / {} slow accesses, {} bytes migrated -> {}",
        r.policy,
        r.total_sim_ns,
        r.fast_accesses,
        r.slow_accesses,
        moved,
        files
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )
}

fn finish(r: &RunResult, prefix: &Path, decisions: bool) -> Result<()> {
    let mut files = write_reports(r, &Summary::from_result(r), prefix)?;
    if decisions && !r.decisions.is_empty() {
        files.push(write_decisions(r, prefix)?);
    }
    println!("{}", summary_line(r, &files));
    Ok(())
}

fn cmd_gen(spec: Option<&Path>, seed: u64, out: &Path) -> Result<(), Failure> {
    let spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read {}", p.display()))
                .usage()?;
            serde_json::from_str::<WorkloadSpec>(&text)
                .with_context(|| format!("invalid workload spec {}", p.display()))
                .usage()?
        }
        None => WorkloadSpec::default(),
    };
    let trace = generate_workload(&spec, seed)
        .map_err(anyhow::Error::from)
        .usage()?;
    write_atomic(out, trace.to_text().as_bytes())
        .map_err(anyhow::Error::from)
        .runtime()?;
    println!(
        "{} events ({} accesses) -> {}",
        trace.events.len(),
        trace.access_count(),
        out.display()
    );
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let p = args.prepare().usage()?;
    if p.sim.policy == PolicyKind::OfflineGuided {
        return offline(&p, None, args.decisions);
    }
    let r = run(&p.sim, &p.trace)
        .map_err(anyhow::Error::from)
        .runtime()?;
    finish(&r, &p.output, args.decisions).runtime()
}

fn offline(p: &Prepared, profile: Option<&Path>, decisions: bool) -> Result<(), Failure> {
    let profile = match profile {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))
                .usage()?;
            ProfileSnapshot::from_json(&text, p.sim.cost.sample_period)
                .with_context(|| format!("invalid profile {}", path.display()))
                .usage()?
        }
        None => {
            let pass = run_profile_pass(&p.sim, &p.trace)
                .map_err(anyhow::Error::from)
                .runtime()?;
            let profile = pass
                .final_profile
                .ok_or_else(|| anyhow!("profiling pass produced no profile"))
                .runtime()?;
            write_atomic(
                &prefixed(&p.output, ".profile.json"),
                profile.to_json().as_bytes(),
            )
            .map_err(anyhow::Error::from)
            .runtime()?;
            profile
        }
    };
    let recs = offline_recommendations(&p.sim, &profile);
    write_atomic(
        &prefixed(&p.output, ".recs.json"),
        recs.to_json().as_bytes(),
    )
    .map_err(anyhow::Error::from)
    .runtime()?;
    let r = run_guided(&p.sim, &p.trace, &recs)
        .map_err(anyhow::Error::from)
        .runtime()?;
    finish(&r, &p.output, decisions).runtime()
}

fn parse_pcts(raw: &str) -> Result<Vec<f64>> {
    let pcts = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("bad percentage '{s}'"))
        })
        .collect::<Result<Vec<_>>>()?;
    if pcts.is_empty() {
        bail!("capacity percentage list is empty");
    }
    Ok(pcts)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { spec, seed, out } => cmd_gen(spec.as_deref(), seed, &out),
        Command::Run(args) => cmd_run(&args),
        Command::Offline { run, profile } => {
            let mut p = run.prepare().usage()?;
            p.sim.policy = PolicyKind::OfflineGuided;
            offline(&p, profile.as_deref(), run.decisions)
        }
        Command::Compare { run, policies } => {
            if policies.is_empty() {
                return Err(Failure::Usage(anyhow!("policy list is empty")));
            }
            let p = run.prepare().usage()?;
            let runs = compare_policies(&p.sim, &p.trace, &policies)
                .map_err(anyhow::Error::from)
                .runtime()?;
            let files = write_compare(&runs, &p.output)
                .map_err(anyhow::Error::from)
                .runtime()?;
            for (_, s) in &runs {
                println!(
                    "{}: {} ns, relative throughput {:.4}",
                    s.policy,
                    s.total_sim_ns,
                    s.relative_throughput.unwrap_or(1.0)
                );
            }
            println!("wrote {} files", files.len());
            Ok(())
        }
        Command::Sweep {
            run,
            pcts,
            policies,
        } => {
            let pcts = parse_pcts(&pcts).usage()?;
            if policies.is_empty() {
                return Err(Failure::Usage(anyhow!("policy list is empty")));
            }
            let p = run.prepare().usage()?;
            let out = sweep(&p.sim, &p.trace, &policies, &pcts)
                .map_err(anyhow::Error::from)
                .runtime()?;
            let files = write_sweep(&out, &p.output)
                .map_err(anyhow::Error::from)
                .runtime()?;
            println!("peak RSS {} pages", out.peak_rss_pages);
            for row in &out.rows {
                println!(
                    "{} {}%: {:.4}",
                    row.policy, row.pct, row.relative_throughput
                );
            }
            println!("wrote {} files", files.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
