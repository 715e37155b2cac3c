//! Command-line front end for the flowgate probe: run one scenario, sweep
//! the benchmark matrix, generate or replay packet traces, and compare
//! offload on against off. Artifacts are plain JSON/JSONL/CSV.
//!
//! Exit codes: 0 on success, 1 for anything wrong with the invocation or
//! scenario (the diagnostic names the offending field), 2 when a run
//! violates an internal invariant. 2 is reserved for that case alone; a
//! clean binary exiting 2 means the probe's own accounting caught a bug.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use flowgate::bench::{
    compare_offload, run_sweep, write_comparison_csv, write_sweep_csv, BenchError, SweepMatrix,
    SWEEP_SCALE,
};
use flowgate::probe::export::Exporter;
use flowgate::probe::runner::RunError;
use flowgate::scenario::ScenarioConfig;
use flowgate::traffic::{write_trace, FlowSchedule, TraceReader};
use flowgate::{run_scenario, run_with_packets, Metrics};

#[derive(Parser)]
#[command(name = "flowgate", version, about = "Software network probe with an emulated hardware flow-offload engine")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario; write metrics.json and flows.jsonl to --out.
    Run(RunArgs),
    /// Run the benchmark matrix; write sweep.csv to --out.
    Sweep(SweepArgs),
    /// Write a scenario's packet schedule as a replayable trace.
    Gen(GenArgs),
    /// Run a scenario with offload off then on; write compare.csv to --out.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl OnOff {
    fn as_bool(self) -> bool {
        matches!(self, OnOff::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Desk-scale defaults that run anywhere.
    Desk,
    /// NT200A02-class hardware; pair with --scale (default 1/1000).
    Nt200a02,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML). When absent, --preset supplies the base.
    #[arg(long, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Built-in base used when no scenario file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,

    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Scale traffic volume (active flows, birth rate, bit rate).
    #[arg(long)]
    scale: Option<f64>,

    /// Override whether flows are offloaded to the hardware table.
    #[arg(long, value_enum)]
    offload: Option<OnOff>,

    /// Override whether flows are classified before the policy decision.
    #[arg(long, value_enum)]
    dpi: Option<OnOff>,
}

impl ScenarioArgs {
    fn build(&self) -> Result<ScenarioConfig, AppError> {
        let mut cfg = match &self.scenario {
            Some(path) => ScenarioConfig::load(path).map_err(|e| AppError::Config(e.to_string()))?,
            None => match self.preset {
                Preset::Desk => ScenarioConfig::desk(),
                Preset::Nt200a02 => ScenarioConfig::nt200a02(self.scale.unwrap_or(SWEEP_SCALE)),
            },
        };
        // The nt200a02 preset consumes --scale itself (its hardware half
        // scales with the traffic); everything else scales traffic only.
        if !(self.scenario.is_none() && matches!(self.preset, Preset::Nt200a02)) {
            if let Some(s) = self.scale {
                cfg.scale_factor = s;
            }
            cfg = cfg.scaled();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(offload) = self.offload {
            cfg.offload_enabled = offload.as_bool();
        }
        if let Some(dpi) = self.dpi {
            cfg.dpi_enabled = dpi.as_bool();
        }
        cfg.validate().map_err(AppError::Config)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Replay packets from a trace file instead of generating them.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,

    /// Output directory for metrics.json and flows.jsonl.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Scale for the benchmark matrix.
    #[arg(long, default_value_t = SWEEP_SCALE)]
    scale: f64,

    /// Output directory for sweep.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Output directory for trace.jsonl.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,

    /// Output directory for compare.csv.
    #[arg(long, value_name = "DIR", default_value = ".")]
    out: PathBuf,
}

enum AppError {
    /// Bad invocation, unreadable file, or a scenario that fails validation.
    Config(String),
    /// The run finished but its own accounting does not close.
    Invariant(Vec<String>),
}

impl From<RunError> for AppError {
    fn from(e: RunError) -> AppError {
        AppError::Config(e.to_string())
    }
}

impl From<BenchError> for AppError {
    fn from(e: BenchError) -> AppError {
        match e {
            BenchError::Invariant { cell, faults } => AppError::Invariant(
                faults.into_iter().map(|f| format!("{cell}: {f}")).collect(),
            ),
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> AppError {
        AppError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FLOWGATE_LOG")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(&args),
        Cmd::Sweep(args) => cmd_sweep(&args),
        Cmd::Gen(args) => cmd_gen(&args),
        Cmd::Compare(args) => cmd_compare(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Invariant(faults)) => {
            eprintln!("invariant violation: the run's accounting does not close");
            for f in &faults {
                eprintln!("  {f}");
            }
            ExitCode::from(2)
        }
    }
}

fn out_file(dir: &Path, name: &str) -> Result<BufWriter<File>, AppError> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn cmd_run(args: &RunArgs) -> Result<(), AppError> {
    let cfg = args.scenario.build()?;
    fs::create_dir_all(&args.out)?;
    let flows = File::create(args.out.join("flows.jsonl"))?;
    let mut exporter = Exporter::new(flows);

    let metrics: Metrics = match &args.trace {
        None => run_scenario(&cfg, &mut exporter)?,
        Some(path) => {
            let reader = TraceReader::new(BufReader::new(File::open(path)?));
            let packets = reader
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| AppError::Config(format!("trace {}: {e}", path.display())))?;
            run_with_packets(&cfg, cfg.traffic().duration(), packets, &mut exporter)?
        }
    };
    exporter.finish()?;

    let mut w = out_file(&args.out, "metrics.json")?;
    metrics.write_json(&mut w)?;
    w.flush()?;

    log::info!(
        "run {}: {} packets, {} flows exported",
        metrics.run.scenario,
        metrics.generated,
        metrics.flows_exported
    );
    println!(
        "{}: generated {}, host {}, hw {}, dropped {}, drop fraction {:.4}",
        metrics.run.scenario,
        metrics.generated,
        metrics.host_processed,
        metrics.hw_handled,
        metrics.total_drops(),
        metrics.drop_fraction()
    );

    let faults = metrics.invariant_violations();
    if !faults.is_empty() {
        return Err(AppError::Invariant(faults));
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), AppError> {
    let matrix = SweepMatrix::standard(args.scale);
    let rows = run_sweep(&matrix)?;
    let mut w = out_file(&args.out, "sweep.csv")?;
    write_sweep_csv(&rows, &mut w)?;
    w.flush()?;
    println!("sweep: {} cells -> {}", rows.len(), args.out.join("sweep.csv").display());
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<(), AppError> {
    let cfg = args.scenario.build()?;
    let schedule =
        FlowSchedule::build(&cfg.traffic(), cfg.seed).map_err(AppError::Config)?;
    let mut w = out_file(&args.out, "trace.jsonl")?;
    let count = write_trace(&mut w, schedule.stream())?;
    w.flush()?;
    println!(
        "gen {}: {count} packets, {} flows -> {}",
        cfg.name,
        schedule.flows.len(),
        args.out.join("trace.jsonl").display()
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), AppError> {
    let cfg = args.scenario.build()?;
    let report = compare_offload(&cfg)?;
    let mut w = out_file(&args.out, "compare.csv")?;
    write_comparison_csv(&report, &mut w)?;
    w.flush()?;
    println!(
        "compare {}: drop {:.4} -> {:.4}, cpu {:.4} -> {:.4}",
        report.scenario,
        report.off.drop_pct,
        report.on.drop_pct,
        report.off.cpu_load,
        report.on.cpu_load
    );
    Ok(())
}
