use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgpo_core::calibration::{closed_form_q, reference_from_rewards, weights_from_q, DEFAULT_LAMBDA, DEFAULT_REWARD_FLOOR};
use cgpo_core::harness::analysis::iterations_to_target;
use cgpo_core::harness::export::{export_csv, ExportKind};
use cgpo_core::harness::sweep::{run_sweep, Grid};
use cgpo_core::harness::{
    occupancy_peaks, resume_to_dir, run_to_dir, warmup_end, Checkpoint, ExperimentConfig, MetricsLog,
};
use cgpo_core::Error;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Curriculum sampling simulator: run experiments, sweeps, and inspect their
/// artifacts.
#[derive(Parser)]
#[command(name = "cgpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics, checkpoints and a summary.
    Simulate {
        #[command(flatten)]
        setup: Setup,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run one experiment per value of a config key.
    Sweep {
        #[command(flatten)]
        setup: Setup,
        /// Output directory; each point gets its own subdirectory.
        #[arg(long)]
        out: PathBuf,
        /// Grid as `key=v1,v2,...`.
        #[arg(long)]
        grid: String,
    },
    /// Print reference coefficients, fairness solution and weights for a set
    /// of per-category mean rewards.
    Calibrate {
        /// File of mean rewards, one per category (JSON array or
        /// whitespace/comma separated).
        #[arg(long)]
        rewards: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        /// Floor applied to rewards before inversion.
        #[arg(long, default_value_t = DEFAULT_REWARD_FLOOR)]
        floor: f64,
    },
    /// Show the highest and lowest list probabilities in a checkpoint.
    Inspect {
        checkpoint: PathBuf,
        /// Number of prompts shown at each end.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Convert a metrics log into CSV.
    Export {
        /// Metrics log (`metrics.jsonl`).
        log: PathBuf,
        /// reward-curve, tier-occupancy or category-weights.
        #[arg(long)]
        kind: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Setup {
    /// Experiment config (TOML). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set calibration.lambda=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Setup {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path).map_err(Failure::Usage)?,
            None => ExperimentConfig::default(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        base.with_overrides(&overrides).map_err(Failure::Usage)
    }
}

enum Failure {
    /// Bad invocation, config or input file: exit 1.
    Usage(Error),
    /// Failure while running: exit 2.
    Runtime(Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(e) if e.is_config_error() => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn runtime(e: impl Into<Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidGroup(_) => "invalid_group",
        Error::InvalidInput(_) => "invalid_input",
        Error::DuplicateId(_) => "duplicate_id",
        Error::UnknownId(_) => "unknown_id",
        Error::Domain(_) => "domain",
        Error::NotConverged { .. } => "not_converged",
        Error::Config(_) => "config",
        Error::UnknownKey(_) => "unknown_key",
        Error::Checkpoint(_) => "checkpoint",
        Error::Format { .. } => "format",
        Error::AtIteration { source, .. } => error_kind(source),
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

fn report(failure: &Failure) {
    let e = failure.error();
    let mut record = serde_json::json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": failure.code(),
    });
    if let Error::AtIteration { iter, .. } = e {
        record["iteration"] = serde_json::json!(iter);
    }
    eprintln!("{record}");
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
    let result = match cli.command {
        Command::Simulate { setup, out, resume } => simulate(&setup, &out, resume.as_deref()),
        Command::Sweep { setup, out, grid } => sweep(&setup, &out, &grid),
        Command::Calibrate { rewards, lambda, floor } => calibrate(&rewards, lambda, floor),
        Command::Inspect { checkpoint, top } => inspect(&checkpoint, top),
        Command::Export { log, kind, out } => export(&log, &kind, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            report(&failure);
            ExitCode::from(failure.code())
        }
    }
}

#[derive(Serialize)]
struct Summary {
    strategy: String,
    seed: u64,
    config_hash: String,
    iterations: u64,
    final_reward_avg: Option<f64>,
    final_eval_reward: f64,
    final_capability: f64,
    iterations_to_eval_reward: Vec<Threshold>,
    warmup_end: Option<u64>,
    /// Per tier, the iteration of peak high-probability count.
    tier_peaks: Vec<Option<u64>>,
    /// (iteration, per-tier high-probability counts), thinned to ~50 points.
    tier_occupancy: Vec<(u64, Vec<usize>)>,
    fallback_iterations: usize,
}

/// First logged iteration whose simulator reward reaches `target`.
#[derive(Serialize)]
struct Threshold {
    target: f64,
    iteration: Option<u64>,
}

const EVAL_THRESHOLDS: [f64; 6] = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn summarize(log: &MetricsLog) -> Summary {
    let rows = &log.rows;
    let last = rows.last().expect("a metrics log has at least the initialization row");
    let warmup = warmup_end(rows);
    let stride = (rows.len() / 50).max(1);
    let mut occupancy: Vec<(u64, Vec<usize>)> = rows
        .iter()
        .step_by(stride)
        .map(|r| (r.iter, r.tier_high_prob.clone()))
        .collect();
    if occupancy.last().map(|o| o.0) != Some(last.iter) {
        occupancy.push((last.iter, last.tier_high_prob.clone()));
    }
    Summary {
        strategy: log.header.strategy.clone(),
        seed: log.header.seed,
        config_hash: log.header.config_hash.clone(),
        iterations: last.iter,
        final_reward_avg: last.reward_avg,
        final_eval_reward: last.eval_reward,
        final_capability: last.capability,
        iterations_to_eval_reward: EVAL_THRESHOLDS
            .iter()
            .map(|&target| Threshold { target, iteration: iterations_to_target(rows, target) })
            .collect(),
        warmup_end: warmup,
        tier_peaks: occupancy_peaks(rows, warmup.unwrap_or(0), 25),
        tier_occupancy: occupancy,
        fallback_iterations: rows.iter().filter(|r| r.fallback).count(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(runtime)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
    writeln!(w).map_err(runtime)?;
    w.flush().map_err(runtime)
}

fn simulate(setup: &Setup, out: &Path, resume: Option<&Path>) -> Result<(), Failure> {
    let config = setup.load()?;
    if let Some(ckpt) = resume {
        if !ckpt.is_file() {
            return Err(Failure::Usage(Error::Config(format!("checkpoint {} not found", ckpt.display()))));
        }
        resume_to_dir(&config, ckpt, out).map_err(runtime)?;
    } else {
        run_to_dir(&config, out).map_err(runtime)?;
    }
    fs::write(out.join("config.toml"), config.to_toml_string()).map_err(runtime)?;
    let log = MetricsLog::load(&out.join("metrics.jsonl")).map_err(runtime)?;
    let summary = summarize(&log);
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "{} seed {}: {} iterations, eval reward {:.4}, batch reward {}, tier peaks {:?}",
        summary.strategy,
        summary.seed,
        summary.iterations,
        summary.final_eval_reward,
        summary.final_reward_avg.map_or("-".into(), |r| format!("{r:.4}")),
        summary.tier_peaks
    );
    println!("artifacts in {}", out.display());
    Ok(())
}

fn point_dir(out: &Path, index: usize, value: &str) -> PathBuf {
    let safe: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    out.join(format!("{index:02}-{safe}"))
}

fn sweep(setup: &Setup, out: &Path, grid: &str) -> Result<(), Failure> {
    let base = setup.load()?;
    let grid = Grid::parse(grid).map_err(Failure::Usage)?;
    fs::create_dir_all(out).map_err(runtime)?;
    let points = run_sweep(&base, &grid, |i, cfg| {
        let dir = point_dir(out, i, &grid.values[i]);
        run_to_dir(cfg, &dir)?;
        let log = MetricsLog::load(&dir.join("metrics.jsonl"))?;
        let summary = summarize(&log);
        let text = serde_json::to_string_pretty(&summary)?;
        fs::write(dir.join("summary.json"), text + "\n")?;
        Ok(cgpo_core::harness::RunOutput {
            header: log.header,
            metrics: log.rows,
            checkpoint: Checkpoint::load(&dir.join("checkpoint.json"))?,
        })
    })
    .map_err(Failure::Usage)?;
    write_json(&out.join("sweep.json"), &points)?;

    println!("{:<24} {:>12} {:>12}", grid.key, "eval reward", "batch reward");
    for p in &points {
        match &p.error {
            None => println!(
                "{:<24} {:>12.4} {:>12}",
                p.value,
                p.final_eval_reward.unwrap_or(f64::NAN),
                p.final_reward_avg.map_or("-".into(), |r| format!("{r:.4}"))
            ),
            Some(e) => println!("{:<24} failed: {e}", p.value),
        }
    }
    if let Some(bad) = points.iter().find(|p| p.error.is_some()) {
        return Err(Failure::Runtime(Error::InvalidInput(format!(
            "sweep point {}={} failed: {}",
            grid.key,
            bad.value,
            bad.error.as_deref().unwrap_or_default()
        ))));
    }
    Ok(())
}

fn parse_rewards(path: &Path) -> Result<Vec<f64>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    let bad = |message: String| Error::Format { path: path.to_owned(), message };
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| bad(e.to_string()));
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| bad(format!("`{t}`: {e}"))))
        .collect()
}

fn calibrate(rewards: &Path, lambda: f64, floor: f64) -> Result<(), Failure> {
    let r = parse_rewards(rewards).map_err(Failure::Usage)?;
    let v = reference_from_rewards(&r, floor).map_err(Failure::Usage)?;
    let q = closed_form_q(&v, lambda).map_err(Failure::Usage)?.q;
    let w = weights_from_q(&v, lambda).map_err(Failure::Usage)?;
    println!("{:>8} {:>12} {:>12} {:>12} {:>12}", "category", "reward", "v", "q", "w");
    for i in 0..r.len() {
        println!("{:>8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}", i, r[i], v[i], q[i], w[i]);
    }
    let c = r.len() as f64;
    println!(
        "sum q = {:.15}, sum w = {:.12} (c + lambda = {})",
        q.iter().sum::<f64>(),
        w.iter().sum::<f64>(),
        c + lambda
    );
    Ok(())
}

fn inspect(path: &Path, top: usize) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(path).map_err(Failure::Usage)?;
    let list = ckpt.probability_list().map_err(Failure::Usage)?;
    println!("checkpoint at iteration {} ({} prompts, config {})", ckpt.iter, list.len(), ckpt.config_hash);
    println!(
        "capability {:.4}, calibration weights {:?}, category mean rewards {:?}",
        ckpt.learner.capability, ckpt.categories.weights, ckpt.categories.mean_rewards
    );
    let mut order: Vec<usize> = (0..list.len()).collect();
    order.sort_by(|&a, &b| list.record(b).p_list.total_cmp(&list.record(a).p_list).then(a.cmp(&b)));
    let k = top.min(list.len());
    let show = |title: &str, idx: &[usize]| {
        println!("\n{title}");
        println!("{:<16} {:>4} {:>10} {:>12}  history", "id", "cat", "p_list", "last");
        for &i in idx {
            let r = list.record(i);
            let hist: Vec<String> = r.var_history().map(|h| format!("{h:.3}")).collect();
            println!(
                "{:<16} {:>4} {:>10.4} {:>12}  [{}]",
                r.id.to_string(),
                r.category,
                r.p_list,
                r.last_sampled_iter.map_or("never".into(), |t| t.to_string()),
                hist.join(", ")
            );
        }
    };
    show(&format!("top {k} by p_list"), &order[..k]);
    let bottom: Vec<usize> = order.iter().rev().take(k).copied().collect();
    show(&format!("bottom {k} by p_list"), &bottom);
    Ok(())
}

fn export(log: &Path, kind: &str, out: Option<&Path>) -> Result<(), Failure> {
    let kind: ExportKind = kind.parse().map_err(Failure::Usage)?;
    let log = MetricsLog::load(log).map_err(Failure::Usage)?;
    let rows = match out {
        Some(path) => {
            let file = File::create(path).map_err(runtime)?;
            export_csv(&log, kind, BufWriter::new(file)).map_err(runtime)?
        }
        None => export_csv(&log, kind, io::stdout().lock()).map_err(runtime)?,
    };
    if let Some(path) = out {
        eprintln!("wrote {rows} rows to {}", path.display());
    }
    Ok(())
}
