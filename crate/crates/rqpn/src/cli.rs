//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rqpn_core::bounds::{cz_bound, decomposition_durations, toffoli_speedups};
use rqpn_core::optimize::{self, EpochRecord, Observer, RunCheckpoint, RunRecord, RunSettings};
use rqpn_core::tasks::{self, compose_repeater, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, Overrides, TaskSource};
use crate::files::{self, CHECKPOINT_FILE, COUPLING_FILE, RECORD_FILE, SCHEDULE_FILE};
use crate::trace::{trace, write_traces};
use crate::verify::{format_table, run_all, VerifyOptions};

pub const EXIT_OK: i32 = 0;
/// Runtime failure, all restarts aborted, or a failed verification.
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
/// The run finished but the best infidelity is above the threshold.
pub const EXIT_NOT_CONVERGED: i32 = 3;

/// Run metadata kept next to the outputs so `resume` and `trace` can find
/// the task again.
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(
    name = "rqpn",
    version,
    about = "Optimize and inspect recirculating quantum photonic networks"
)]
pub struct Cli {
    /// Worker threads for independent restarts.
    #[arg(long, global = true, env = "RQPN_THREADS", default_value_t = 1)]
    pub threads: usize,
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a control schedule for a task.
    Optimize(OptimizeArgs),
    /// Continue a run from the checkpoints in its output directory.
    Resume(ResumeArgs),
    /// Run the numerical self-checks.
    Verify(VerifyArgs),
    /// Re-propagate the task states through a saved schedule.
    Trace(TraceArgs),
    /// Print the analytic CZ duration bound and the Toffoli decompositions.
    Bounds(BoundsArgs),
    /// Compose two repeater step schedules and report the joint infidelity.
    Compose(ComposeArgs),
    /// List the built-in tasks.
    Tasks,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Built-in task name.
    #[arg(long)]
    pub task: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `runs/<task>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Freeze the bin widths so the schedule lasts exactly this long.
    #[arg(long)]
    pub fixed_duration: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    /// Output directory of the interrupted run.
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub gradient_instances: usize,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    /// Output directory of a finished run.
    pub dir: PathBuf,
    /// Sampling step in units of 1/Γ_NL.
    #[arg(long, default_value_t = 0.01)]
    pub resolution: f64,
    /// Where to write the CSV files (default `<dir>/trace`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace against this built-in task instead of the run's own.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// Target infidelities.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1e-4, 1e-3, 1e-2])]
    pub infidelity: Vec<f64>,
    /// Write `bounds.csv` and `decomposition.csv` here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// Run directory of the first repeater step.
    pub step1: PathBuf,
    /// Run directory of the second repeater step.
    pub step2: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunMeta {
    task: TaskSource,
    workers: usize,
}

/// Maps an error to its exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() || err.downcast_ref::<clap::Error>().is_some() {
        EXIT_CONFIG
    } else {
        EXIT_FAILED
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Optimize(a) => optimize_cmd(a, cli),
        Command::Resume(a) => resume_cmd(a, cli),
        Command::Verify(a) => verify_cmd(a),
        Command::Trace(a) => trace_cmd(a),
        Command::Bounds(a) => bounds_cmd(a),
        Command::Compose(a) => compose_cmd(a),
        Command::Tasks => {
            println!(
                "{:<20} {:>5} {:>5} {:>6} {:>6}  window",
                "task", "modes", "pairs", "dim", "bins"
            );
            for name in tasks::TASK_NAMES {
                let t = tasks::by_name(name)?;
                let d = &t.defaults;
                let dim: usize = t.batch.sectors().iter().map(|s| s.space.dim()).sum();
                let n = d.num_bins as f64;
                println!(
                    "{name:<20} {:>5} {:>5} {dim:>6} {:>6}  [{:.4}, {:.4}]",
                    t.layout.num_modes,
                    t.batch.num_pairs(),
                    d.num_bins,
                    d.bounds.tau_min * n,
                    d.bounds.tau_max * n
                );
            }
            Ok(EXIT_OK)
        }
    }
}

struct Progress {
    worker: usize,
    checkpoint: PathBuf,
    quiet: bool,
}

impl Observer for Progress {
    fn on_epoch(&mut self, restart: usize, r: &EpochRecord) {
        if !self.quiet && r.epoch % 500 == 0 {
            eprintln!(
                "[w{} r{restart}] epoch {:>6}  I = {:.4e}  best = {:.4e}  E = {:.4}",
                self.worker, r.epoch, r.infidelity, r.best_infidelity, r.cost
            );
        }
    }

    fn on_checkpoint(&mut self, cp: &RunCheckpoint) -> rqpn_core::Result<()> {
        files::write_json(&self.checkpoint, cp)
            .map_err(|e| rqpn_core::Error::Checkpoint(format!("{e:#}")))
    }
}

fn checkpoint_path(dir: &Path, worker: usize, workers: usize) -> PathBuf {
    if workers == 1 {
        dir.join(CHECKPOINT_FILE)
    } else {
        dir.join(format!("checkpoint-{worker}.json"))
    }
}

/// Combines per-worker records: the best restart wins, summaries are pooled.
pub fn merge_records(records: Vec<RunRecord>) -> anyhow::Result<RunRecord> {
    let mut all: Vec<_> = records
        .iter()
        .flat_map(|r| r.restarts.iter().cloned())
        .collect();
    all.sort_by_key(|r| r.index);
    let mut best = records
        .into_iter()
        .min_by(|a, b| {
            a.final_infidelity
                .total_cmp(&b.final_infidelity)
                .then(a.best_restart.cmp(&b.best_restart))
        })
        .ok_or_else(|| anyhow!("no worker produced a record"))?;
    best.restarts = all;
    Ok(best)
}

/// Runs each job on its own scoped thread and merges the results.
fn run_workers<F>(jobs: usize, f: F) -> anyhow::Result<RunRecord>
where
    F: Fn(usize) -> rqpn_core::Result<RunRecord> + Sync,
{
    let results: Vec<rqpn_core::Result<RunRecord>> = if jobs == 1 {
        vec![f(0)]
    } else {
        std::thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = (0..jobs).map(|w| s.spawn(move || f(w))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };
    let mut records = Vec::new();
    let mut failed = 0;
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(rqpn_core::Error::AllRestartsFailed(n)) => failed += n,
            Err(e) => return Err(e.into()),
        }
    }
    if records.is_empty() {
        return Err(rqpn_core::Error::AllRestartsFailed(failed).into());
    }
    merge_records(records)
}

fn finish(dir: &Path, record: &RunRecord) -> anyhow::Result<i32> {
    files::write_outputs(dir, record)?;
    println!(
        "task {}  restart {} (seed {})  I = {:.4e}  T = {:.6}  converged = {}",
        record.task,
        record.best_restart,
        record.seed,
        record.final_infidelity,
        record.duration,
        record.converged
    );
    println!("outputs in {}", dir.display());
    Ok(if record.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

fn optimize_cmd(a: &OptimizeArgs, cli: &Cli) -> anyhow::Result<i32> {
    let ov = Overrides {
        task: a.task.clone(),
        seed: a.seed,
        out: a.out.clone(),
        fixed_duration: a.fixed_duration,
        max_epochs: a.max_epochs,
        restarts: a.restarts,
    };
    let (cfg, task) = config::resolve(a.config.as_deref(), &ov)?;
    let dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(&task.name));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let source = match &cfg.task {
        TaskSource::File(p) => TaskSource::File(fs::canonicalize(p)?),
        s => s.clone(),
    };
    let restarts = cfg.settings.optimizer.restarts;
    let workers = cli.threads.clamp(1, restarts.max(1));
    files::write_json(
        &dir.join(RUN_FILE),
        &RunMeta {
            task: source,
            workers,
        },
    )?;
    let settings: RunSettings = cfg.settings;
    let record = run_workers(workers, |w| {
        let indices: Vec<usize> = (w..restarts).step_by(workers).collect();
        let mut obs = Progress {
            worker: w,
            checkpoint: checkpoint_path(&dir, w, workers),
            quiet: cli.quiet,
        };
        optimize::run_restarts(&task, &settings, indices, &mut obs)
    })?;
    finish(&dir, &record)
}

fn load_meta_task(dir: &Path, name_hint: &str) -> anyhow::Result<TaskSpec> {
    let meta = dir.join(RUN_FILE);
    if meta.exists() {
        let m: RunMeta = files::read_json(&meta)?;
        m.task.load()
    } else {
        TaskSource::Builtin(name_hint.to_string()).load()
    }
}

fn checkpoint_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("checkpoint") && n.ends_with(".json"))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(ConfigError(format!("no checkpoint in {}", dir.display())).into());
    }
    Ok(found)
}

fn resume_cmd(a: &ResumeArgs, cli: &Cli) -> anyhow::Result<i32> {
    let paths = checkpoint_files(&a.dir)?;
    let checkpoints = paths
        .iter()
        .map(|p| files::read_checkpoint(p).map_err(|e| ConfigError(format!("{e:#}")).into()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let task = load_meta_task(&a.dir, &checkpoints[0].task)?;
    let record = run_workers(checkpoints.len(), |w| {
        let mut obs = Progress {
            worker: w,
            checkpoint: paths[w].clone(),
            quiet: cli.quiet,
        };
        optimize::resume(&task, checkpoints[w].clone(), &mut obs)
    })?;
    finish(&a.dir, &record)
}

fn verify_cmd(a: &VerifyArgs) -> anyhow::Result<i32> {
    let opts = VerifyOptions {
        seed: a.seed,
        gradient_instances: a.gradient_instances,
        ..VerifyOptions::default()
    };
    let results = run_all(&opts);
    print!("{}", format_table(&results));
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} checks passed",
        results.len() - failed,
        results.len()
    );
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILED })
}

fn trace_cmd(a: &TraceArgs) -> anyhow::Result<i32> {
    let record = files::read_record(&a.dir.join(RECORD_FILE))?;
    let task = match &a.task {
        Some(name) => TaskSource::Builtin(name.clone()).load()?,
        None => load_meta_task(&a.dir, &record.task)?,
    };
    let schedule = files::read_schedule(&a.dir.join(SCHEDULE_FILE), &a.dir.join(COUPLING_FILE))?;
    let traces = trace(&task, &schedule, a.resolution)?;
    let out = a.out.clone().unwrap_or_else(|| a.dir.join("trace"));
    let paths = write_traces(&out, &traces)?;
    for (t, p) in traces.iter().zip(&paths) {
        let last = t.samples.last().expect("at least one sample");
        println!(
            "{:<12} final overlap {:.6}  {}",
            t.label,
            last.target_overlap,
            p.display()
        );
    }
    Ok(EXIT_OK)
}

fn bounds_cmd(a: &BoundsArgs) -> anyhow::Result<i32> {
    let mut bounds = csv::Writer::from_writer(Vec::new());
    bounds.write_record(["infidelity", "min_duration"])?;
    for &i in &a.infidelity {
        let b = cz_bound(i).map_err(|e| ConfigError(e.to_string()))?;
        bounds.write_record([
            format!("{}", b.infidelity_target),
            format!("{}", b.min_duration),
        ])?;
    }
    let mut decomp = csv::Writer::from_writer(Vec::new());
    decomp.write_record(["pipeline", "per_gate_source", "gates", "per_gate", "total"])?;
    for r in decomposition_durations() {
        decomp.write_record([
            r.pipeline,
            r.per_gate_source,
            r.gates.to_string(),
            format!("{}", r.per_gate),
            format!("{}", r.total),
        ])?;
    }
    let (qq, qt) = toffoli_speedups();
    let bounds = bounds.into_inner().map_err(|e| anyhow!("{e}"))?;
    let decomp = decomp.into_inner().map_err(|e| anyhow!("{e}"))?;
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            files::write_atomic(&dir.join("bounds.csv"), &bounds)?;
            files::write_atomic(&dir.join("decomposition.csv"), &decomp)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&bounds)?;
            out.write_all(b"\n")?;
            out.write_all(&decomp)?;
        }
    }
    println!("direct Toffoli speedup: {qq:.3}x over qubit-qubit CZ, {qt:.3}x over qubit-qutrit CZ");
    Ok(EXIT_OK)
}

fn compose_cmd(a: &ComposeArgs) -> anyhow::Result<i32> {
    let load = |d: &Path| files::read_schedule(&d.join(SCHEDULE_FILE), &d.join(COUPLING_FILE));
    let (s1, s2) = (load(&a.step1)?, load(&a.step2)?);
    if s1.kind != s2.kind {
        bail!("steps use different nonlinearities");
    }
    let c = compose_repeater(&s1, &s2)?;
    println!(
        "composed infidelity {:.4e}  total duration {:.6}  min ancilla purity {:.9}",
        c.infidelity,
        s1.duration() + s2.duration(),
        c.min_purity
    );
    if c.impure_ancilla {
        eprintln!("warning: the ancilla is not in a pure Fock state after step 1 for some branch");
    }
    Ok(EXIT_OK)
}
