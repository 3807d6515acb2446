use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use skattr::attribution::{AttributionFunction, GMode};
use skattr::benchmark::{benchmark_matrix, BenchmarkConfig};
use skattr::io::{
    load_attribution, load_counts, load_dataset, read_json, save_attribution, save_counts, save_dataset,
    save_report, write_json, StageMeta,
};
use skattr::pipeline::{
    attribute_cells, privatize_all, round_to_cents, score_weeks, simulate, weekly_attribution, weekly_truth,
    ErrorSummary, Level, Profiles, SimOptions, Simulation, Window,
};
use skattr::synthgen::{generate_dataset, Dataset, GenConfig};
use skattr::{Error, Result, SchemaSpec};

#[derive(Parser)]
#[command(name = "skattr", version, about = "Conversion-value attribution simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        /// Generator config (JSON or TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a schema over a dataset and write pre-privacy counts.
    Simulate {
        /// Dataset directory.
        #[arg(long)]
        users: PathBuf,
        /// Preset label (`D7 RR`) or text spec (`kind=RR;layout=TTTVVV;horizon=7`).
        #[arg(long)]
        schema: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the privacy threshold to a counts file.
    Privatize {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        p: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attribute revenue from a counts file.
    Attribute {
        #[arg(long)]
        counts: PathBuf,
        /// Dataset directory the developer-side revenue profile comes from.
        #[arg(long)]
        profile_from: PathBuf,
        #[arg(long, default_value = "null_uniform")]
        g: GMode,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 30)]
        t: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an attribution file against ground truth.
    Evaluate {
        #[arg(long)]
        attr: PathBuf,
        #[arg(long)]
        truth_from: PathBuf,
        #[arg(long, default_value_t = 30)]
        t: u32,
        /// Leave the organic column out of the error.
        #[arg(long)]
        exclude_organic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full (schema, p, g, lambda) grid.
    Benchmark {
        /// Run config (JSON or TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Benchmark run: a dataset directory or a generator config, plus the grid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    dataset: Option<PathBuf>,
    generator: Option<GenConfig>,
    seed: Option<u64>,
    #[serde(flatten)]
    benchmark: BenchmarkConfig,
}

#[derive(Debug, Serialize)]
struct LevelScore {
    level: Level,
    #[serde(flatten)]
    summary: ErrorSummary,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    schema: String,
    seed: u64,
    p: Option<u64>,
    g: Option<String>,
    lambda: Option<f64>,
    t: u32,
    include_organic: bool,
    levels: Vec<LevelScore>,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if path.extension().is_some_and(|e| e == "toml") {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        read_json(path)
    }
}

fn resimulate(dataset: &Dataset, meta: &StageMeta) -> Result<Simulation> {
    let schema: SchemaSpec = meta.schema.parse()?;
    let sim = simulate(dataset, &schema, meta.seed, SimOptions::default())?;
    if dataset.campaigns.columns() != meta.columns {
        return Err(Error::Config("dataset campaigns differ from the file's columns".into()));
    }
    Ok(sim)
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            users,
            out,
        } => {
            let mut cfg: GenConfig = match config {
                Some(p) => read_config(&p)?,
                None => GenConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = users {
                cfg.n_users = n;
            }
            let (ds, prov) = generate_dataset(&cfg)?;
            save_dataset(&ds, Some(&prov), &out)?;
            print_json(serde_json::json!({
                "out": out,
                "users": ds.users.len(),
                "config_hash": prov.config_hash,
            }));
        }
        Command::Simulate {
            users,
            schema,
            seed,
            out,
        } => {
            let ds = load_dataset(&users)?;
            let schema: SchemaSpec = schema.parse()?;
            let sim = simulate(&ds, &schema, seed, SimOptions::default())?;
            let meta = StageMeta {
                schema: schema.to_string(),
                seed,
                privacy_applied: false,
                p: None,
                columns: ds.campaigns.columns(),
                organic: ds.campaigns.organic,
                config_hash: String::new(),
                g: None,
                lambda: None,
                t: None,
            }
            .rehash()?;
            save_counts(&sim.matrices, &meta, &out)?;
            print_json(serde_json::json!({
                "out": out,
                "schema": sim.schema.label(),
                "postbacks": sim.postbacks.len(),
                "cells": sim.matrices.len(),
            }));
        }
        Command::Privatize { counts, p, out } => {
            let (meta, matrices) = load_counts(&counts)?;
            let private = privatize_all(&matrices, p)?;
            let meta = StageMeta {
                privacy_applied: true,
                p: Some(p),
                ..meta
            }
            .rehash()?;
            save_counts(&private, &meta, &out)?;
            let hidden: u64 = private.values().filter_map(|m| m.null_row()).flatten().sum();
            print_json(serde_json::json!({ "out": out, "p": p, "suppressed_users": hidden }));
        }
        Command::Attribute {
            counts,
            profile_from,
            g,
            lambda,
            t,
            out,
        } => {
            let (meta, matrices) = load_counts(&counts)?;
            let ds = load_dataset(&profile_from)?;
            let sim = resimulate(&ds, &meta)?;
            let func = AttributionFunction::new(g, lambda)?;
            // plain needs an unsuppressed view; an unprivatized file is read as p=0
            let matrices = if meta.privacy_applied || g == GMode::Plain {
                matrices
            } else {
                privatize_all(&matrices, 0)?
            };
            let profiles = Profiles::build(&ds, &sim, Window::first(t), false)?;
            let cells = round_to_cents(attribute_cells(&matrices, &sim.developer_totals, &profiles, &func)?);
            let meta = StageMeta {
                p: meta.p.or(Some(0)),
                g: Some(func.mode.to_string()),
                lambda: Some(func.lambda),
                t: Some(t),
                ..meta
            }
            .rehash()?;
            save_attribution(&cells, &meta, &out)?;
            print_json(serde_json::json!({ "out": out, "g": func.label(), "cells": cells.len() }));
        }
        Command::Evaluate {
            attr,
            truth_from,
            t,
            exclude_organic,
            out,
        } => {
            let (meta, cells) = load_attribution(&attr)?;
            let ds = load_dataset(&truth_from)?;
            let sim = resimulate(&ds, &meta)?;
            let window = Window::first(t);
            let mut levels = Vec::new();
            for level in [Level::Campaign, Level::Network] {
                let truth = weekly_truth(&ds, &sim, window, level)?;
                let attributed = weekly_attribution(&cells, &ds.campaigns, level);
                let summary = score_weeks(&attributed, &truth, &ds.campaigns, level, !exclude_organic)?;
                levels.push(LevelScore { level, summary });
            }
            let report = EvaluationReport {
                schema: sim.schema.label(),
                seed: meta.seed,
                p: meta.p,
                g: meta.g,
                lambda: meta.lambda,
                t,
                include_organic: !exclude_organic,
                levels,
            };
            write_json(&out, &report)?;
            let errors: Vec<f64> = report.levels.iter().map(|l| l.summary.aggregate).collect();
            print_json(serde_json::json!({ "out": out, "aggregate_error_cents": errors }));
        }
        Command::Benchmark { config, seed, out } => {
            let run: RunConfig = match config {
                Some(p) => read_config(&p)?,
                None => RunConfig::default(),
            };
            let seed = seed.or(run.seed).unwrap_or(1);
            let ds = match (&run.dataset, &run.generator) {
                (Some(_), Some(_)) => {
                    return Err(Error::Config("give either dataset or generator, not both".into()))
                }
                (Some(dir), None) => load_dataset(dir)?,
                (None, generator) => generate_dataset(&generator.clone().unwrap_or_default())?.0,
            };
            let report = benchmark_matrix(&ds, &run.benchmark, seed)?;
            let written = save_report(&report, &out)?;
            print_json(serde_json::json!({ "out": out, "cells": report.cells.len(), "files": written }));
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("SKATTR_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| Error::Config(format!("SKATTR_THREADS={raw:?} is not a thread count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
