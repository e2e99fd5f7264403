use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fuhst_core::detectors::DetectorSnapshot;
use fuhst_core::harness::{
    describe, grid_search, preset, run_pretraining, simulate, write_sweep_csv, MitigationScheme, RunReport,
    ScenarioConfig, SimOptions, Simulation, SweepGrid, PRESET_NAMES,
};
use fuhst_core::rng::{self, Stream};
use fuhst_core::sdn::write_coordination_log;

/// Multi-domain decentralized federated learning simulator with streaming
/// Byzantine detection.
#[derive(Parser)]
#[command(name = "fuhst", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario for one or more seeds.
    Run(RunArgs),
    /// Warm a detector on a benign run and save its state.
    Pretrain(PretrainArgs),
    /// Grid-search the detector parameters.
    Sweep(SweepArgs),
    /// List the built-in scenario presets.
    Scenarios,
}

#[derive(Args)]
struct ScenarioSource {
    /// Scenario TOML file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset (s1..s8).
    #[arg(long)]
    preset: Option<String>,
}

impl ScenarioSource {
    fn load(&self) -> Result<ScenarioConfig> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ScenarioConfig::load(path).with_context(|| format!("loading {}", path.display())),
            (None, Some(name)) => Ok(preset(name)?),
            (None, None) => bail!("give --config PATH or --preset NAME"),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: ScenarioSource,
    /// First seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// na, mit, ora or obs.
    #[arg(long)]
    mitigation: Option<MitigationScheme>,
    /// First round whose decisions become bans.
    #[arg(long)]
    mitigation_start: Option<u32>,
    /// Override the number of rounds.
    #[arg(long)]
    rounds: Option<u32>,
    /// Use a saved detector state instead of pretraining.
    #[arg(long)]
    detector_state: Option<PathBuf>,
    /// Also write coordination.ndjson.
    #[arg(long)]
    coordination_log: bool,
    /// Single-threaded execution.
    #[arg(long)]
    serial: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Scenario whose detector, learner and task are used (default s1).
    #[command(flatten)]
    source: ScenarioSource,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Grid TOML; missing ranges take the full default lattice.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Override the grid's seed list with 0..N.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    serial: bool,
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
}

fn options(serial: bool, keep_coordination: bool) -> SimOptions {
    SimOptions { parallel: !serial, keep_coordination, ..SimOptions::default() }
}

fn summary_line(seed: u64, r: &RunReport) -> String {
    let det = match &r.detection {
        Some(d) => format!("f1={:.3} avg_fbr={:.3}", d.f1, d.avg_fbr),
        None => "f1=-".into(),
    };
    format!(
        "seed={seed} {} acc={:.3}±{:.3} {det} banned={}",
        r.config.mitigation.label(),
        r.final_accuracy.mean,
        r.final_accuracy.std,
        r.rounds.last().map_or(0, |x| x.banned_total)
    )
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = args.source.load()?;
    if let Some(m) = args.mitigation {
        cfg.mitigation = m;
    }
    if let Some(s) = args.mitigation_start {
        cfg.mitigation_start = s;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if args.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let snapshot = args.detector_state.as_deref().map(DetectorSnapshot::load).transpose()?;
    let first = args.seed.unwrap_or(cfg.seed);
    let opts = options(args.serial, args.coordination_log);
    let mut finals = Vec::new();
    for seed in first..first + args.seeds {
        let cfg = ScenarioConfig { seed, ..cfg.clone() };
        let sim = match &snapshot {
            Some(s) => {
                let mut sim = Simulation::new(cfg)?.with_options(opts).with_detector(&s.detector);
                sim.run()?;
                sim
            }
            None => simulate(&cfg, opts)?,
        };
        let report = sim.report();
        let dir = if args.seeds == 1 { args.out.clone() } else { args.out.join(format!("seed-{seed}")) };
        report.write_outputs(&dir)?;
        if args.coordination_log {
            let mut w = BufWriter::new(fs::File::create(dir.join("coordination.ndjson"))?);
            write_coordination_log(&mut w, sim.coordination())?;
            w.flush()?;
        }
        println!("{}", summary_line(seed, &report));
        finals.push((seed, report));
    }
    if finals.len() > 1 {
        write_seed_summary(&args.out, &finals)?;
    }
    Ok(())
}

fn write_seed_summary(out: &Path, finals: &[(u64, RunReport)]) -> Result<()> {
    let accs: Vec<f64> = finals.iter().map(|(_, r)| r.final_accuracy.mean).collect();
    let f1s: Vec<f64> = finals.iter().filter_map(|(_, r)| r.detection.as_ref().map(|d| d.f1)).collect();
    let mean = |v: &[f64]| if v.is_empty() { None } else { Some(v.iter().sum::<f64>() / v.len() as f64) };
    let summary = serde_json::json!({
        "seeds": finals.iter().map(|(s, _)| s).collect::<Vec<_>>(),
        "final_accuracy": accs,
        "mean_final_accuracy": mean(&accs),
        "f1": f1s,
        "mean_f1": mean(&f1s),
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("mean over {} seeds: acc={:.3}", finals.len(), mean(&accs).unwrap_or(0.0));
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    let mut cfg = match (&args.source.config, &args.source.preset) {
        (None, None) => preset("s1")?,
        _ => args.source.load()?,
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let det = cfg.detector.build(rng::derive(cfg.seed, Stream::Detector, 0, 0))?;
    let det = run_pretraining(det, &cfg, SimOptions::default())?;
    DetectorSnapshot::new(det).save(&args.out)?;
    println!("wrote {} ({} detector, seed {})", args.out.display(), cfg.detector.name(), cfg.seed);
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut grid = match &args.grid {
        Some(p) => SweepGrid::load(p)?,
        None => SweepGrid::default(),
    };
    if let Some(n) = args.seeds {
        grid.seeds = (0..n).collect();
    }
    let result = grid_search(&grid, options(args.serial, false))?;
    fs::create_dir_all(&args.out)?;
    let mut w = BufWriter::new(fs::File::create(args.out.join("sweep.csv"))?);
    write_sweep_csv(&mut w, &result)?;
    w.flush()?;
    let best = serde_json::json!({ "best": result.best, "best_mean_f1": result.best_mean_f1 });
    fs::write(args.out.join("best.json"), serde_json::to_string_pretty(&best)?)?;
    let b = &result.best;
    println!(
        "best: trees={} depth={} tau={:.2} window={} mean_f1={:.3} ({} rows)",
        b.trees,
        b.depth,
        b.tau,
        b.window,
        result.best_mean_f1,
        result.rows.len()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Sweep(a) => sweep(a),
        Command::Scenarios => {
            for name in PRESET_NAMES {
                println!("{}", describe(&preset(name)?));
            }
            Ok(())
        }
    }
}
