use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;
use spacedreplay_core::engine::Snapshot;
use spacedreplay_core::{bench, Engine, EngineConfig};
use spacedreplay_sim::compare::{seed_list, summarize, ComparisonTable};
use spacedreplay_sim::{run_strategy, ScenarioConfig, StrategyKind};

#[derive(Parser)]
#[command(name = "spacedreplay", version, about = "Memory-aware replay scheduling engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine as a coprocess speaking JSON lines on stdin/stdout.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `engine.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Snapshot written when stdin closes.
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
    },
    /// Print a summary of a snapshot file.
    InspectSnapshot { path: PathBuf },
    /// Time the epoch sweep and a single replay decision.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1024)]
        buffer: usize,
        #[arg(long, default_value_t = 256)]
        select: usize,
        #[arg(long, default_value_t = 21)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// One JSON object per measurement instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare replay strategies on a synthetic task sequence.
    Simulate {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Strategy name, or `all`.
        #[arg(long, default_value = "all")]
        strategy: String,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Serve { config, seed, metrics_out, snapshot_out } => {
            serve(config.as_deref(), seed, metrics_out.as_deref(), snapshot_out.as_deref())
        }
        Command::InspectSnapshot { path } => inspect(&path),
        Command::Bench { samples, buffer, select, runs, seed, json } => {
            run_bench(samples, buffer, select, runs, seed, json)
        }
        Command::Simulate { scenario, strategy, seeds, out } => simulate(scenario.as_deref(), &strategy, seeds, &out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn serve(
    config: Option<&Path>,
    seed: Option<u64>,
    metrics: Option<&Path>,
    snapshot: Option<&Path>,
) -> Result<ExitCode> {
    let mut cfg = match config {
        Some(p) => match EngineConfig::from_path(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error[{}]: {e}", e.code());
                return Ok(ExitCode::from(2));
            }
        },
        None => EngineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.engine.seed = s;
    }
    let mut engine = Engine::new(cfg)?;
    if let Some(p) = metrics {
        let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        engine.set_metrics_sink(Box::new(BufWriter::new(file)));
    }
    let stdin = io::stdin().lock();
    let stdout = io::stdout().lock();
    engine.serve(stdin, stdout).context("protocol stream")?;
    if let Some(p) = snapshot {
        engine.snapshot().save(p).with_context(|| format!("writing snapshot {}", p.display()))?;
    }
    if let Some(mut sink) = engine.take_metrics_sink() {
        sink.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn inspect(path: &Path) -> Result<ExitCode> {
    let snap = Snapshot::load(path).with_context(|| format!("loading {}", path.display()))?;
    let version = snap.format_version;
    let engine = Engine::from_snapshot(snap)?;
    let stats = engine.stats(None)?;
    let status = engine.query_replay();
    let summary = json!({
        "format_version": version,
        "step": stats.step,
        "epoch": stats.epoch,
        "tracked": stats.tracked,
        "datasets": stats.datasets,
        "mean_m": stats.mean_m,
        "mean_s": stats.mean_s,
        "buffer_size": stats.buffer_size,
        "cycle_index": status.cycle_index,
        "current_interval": status.current_interval,
        "next_trigger_step": status.next_trigger_step,
        "lambda": status.lambda,
        "decisions": stats.decisions,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(ExitCode::SUCCESS)
}

fn run_bench(samples: usize, buffer: usize, select: usize, runs: usize, seed: u64, as_json: bool) -> Result<ExitCode> {
    let timings = [bench::epoch_update(samples, runs, seed)?, bench::decision(buffer, select, runs.max(101), seed)?];
    for t in &timings {
        if as_json {
            println!("{}", serde_json::to_string(t)?);
        } else {
            println!(
                "{:<13} size={:<7} runs={:<4} min={:.3}ms median={:.3}ms max={:.3}ms bound={}ms {}",
                t.name,
                t.size,
                t.runs,
                t.min_ms,
                t.median_ms,
                t.max_ms,
                t.bound_ms,
                if t.within_bound() { "ok" } else { "OVER" }
            );
        }
    }
    Ok(if timings.iter().all(|t| t.within_bound()) { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn simulate(scenario: Option<&Path>, strategy: &str, seeds: usize, out: &Path) -> Result<ExitCode> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let scenario = match scenario {
        Some(p) => ScenarioConfig::from_path(p)?,
        None => ScenarioConfig::default(),
    };
    let kinds: Vec<StrategyKind> = if strategy == "all" { StrategyKind::ALL.to_vec() } else { vec![strategy.parse()?] };
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;

    let mut rows = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let mut reports = Vec::with_capacity(seeds);
        for seed in seed_list(&scenario, seeds) {
            let started = Instant::now();
            let run = run_strategy(&scenario, kind, seed)?;
            let stem = runs_dir.join(format!("{kind}_seed{seed}"));
            fs::write(stem.with_extension("metrics.jsonl"), &run.metrics)?;
            fs::write(stem.with_extension("report.json"), serde_json::to_string_pretty(&run.report)?)?;
            eprintln!(
                "{kind:<20} seed={seed:<3} forgetting={:.4} events={:<4} volume={:<6} {:.2}s",
                run.report.forgetting,
                run.report.replay_events,
                run.report.replay_volume,
                started.elapsed().as_secs_f64()
            );
            reports.push(run.report);
        }
        rows.push(summarize(kind, &reports.iter().collect::<Vec<_>>()));
    }
    let table = ComparisonTable { rows };
    let csv_path = out.join("comparison.csv");
    fs::write(&csv_path, table.to_csv())?;
    print!("{}", table.to_csv());
    eprintln!("wrote {}", csv_path.display());
    Ok(ExitCode::SUCCESS)
}
