//! `femtosim`: scenario runs, parameter sweeps, Monte Carlo outage
//! comparisons, and human-readable handover traces, all driven by INI
//! scenario files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use femtosim_core::engine::EngineError;
use femtosim_core::scenario::ScenarioError;
use femtosim_core::{
    merge_outputs, outage_csv, outage_sweep, run_replicates, write_outputs, RunOutput, ScenarioConfig,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "femtosim", version, about = "Two-tier femtocell/macrocell network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and write the CSV outputs.
    Run(CommonArgs),
    /// Re-run a scenario for each value of one scenario key.
    Sweep(SweepArgs),
    /// Run only the Monte Carlo outage sweep (strategy x fap_count).
    Outage(CommonArgs),
    /// Print the step-by-step log of the first terminated handover.
    Trace(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario INI file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (falls back to $FEMTOSIM_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent replicates to run and merge.
    #[arg(long)]
    replicates: Option<u32>,
    /// Suppress the summary table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scenario key to sweep, e.g. threshold_velocity_mps or scheduler.
    #[arg(long)]
    key: String,
    /// Comma-separated values for the swept key.
    #[arg(long)]
    values: String,
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(inner) => CliError::Config(inner.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Outage(args) => cmd_outage(&args),
        Command::Trace(args) => cmd_trace(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn out_dir(args: &CommonArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os("FEMTOSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(args: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = femtosim_core::load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cfg: &ScenarioConfig, replicates: u32) -> Result<RunOutput, CliError> {
    let outputs = run_replicates(cfg, replicates, replicates > 1)?;
    Ok(merge_outputs(outputs))
}

fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let replicates = args.replicates.unwrap_or(1);
    let output = execute(&cfg, replicates)?;
    let dir = out_dir(args);
    write_outputs(&output, &dir)?;
    if !args.quiet {
        print_summary(&output, &dir);
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let base = load(&args.common)?;
    let values: Vec<&str> = args
        .values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("{}: no sweep values given", args.key)));
    }
    let replicates = args.common.replicates.unwrap_or(1);
    let mut rows = String::from(
        "key,value,attempts,macro_to_femto,femto_to_macro,femto_to_femto,rejected,voice_delay_mean_ms,packets_delivered\n",
    );
    for value in &values {
        let mut cfg = base.clone();
        cfg.apply_key(&args.key, value).map_err(CliError::Config)?;
        cfg.validate()?;
        let output = execute(&cfg, replicates)?;
        let r = &output.report;
        let rejected: u64 = r.rejected_by_reason.values().sum();
        rows.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{}\n",
            args.key,
            value,
            r.attempts,
            r.completed_macro_to_femto,
            r.completed_femto_to_macro,
            r.completed_femto_to_femto,
            rejected,
            r.voice_delay_mean_ms,
            r.packets_delivered
        ));
        if !args.common.quiet {
            println!(
                "{} = {}: attempts {}, femto handovers {}, rejected {}, voice mean {:.3} ms",
                args.key,
                value,
                r.attempts,
                r.completed_macro_to_femto + r.completed_femto_to_femto,
                rejected,
                r.voice_delay_mean_ms
            );
        }
    }
    let dir = out_dir(&args.common);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("sweep.csv"), rows)?;
    Ok(())
}

fn cmd_outage(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let rows = outage_sweep(&cfg)?;
    let dir = out_dir(args);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("outage.csv"), outage_csv(&rows))?;
    if !args.quiet {
        println!("strategy    fap_count      p_out       ci95    n_drops");
        for row in &rows {
            println!(
                "{:<11} {:>9} {:>10.4} {:>10.4} {:>10}",
                row.strategy.to_string(),
                row.fap_count,
                row.p_out,
                row.ci95,
                row.n_drops
            );
        }
    }
    Ok(())
}

fn cmd_trace(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = load(args)?;
    let output = execute(&cfg, 1)?;
    match &output.trace {
        Some(trace) => {
            println!("{trace}");
            let dir = out_dir(args);
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("trace.txt"), format!("{trace}\n"))?;
            Ok(())
        }
        None => Err(CliError::Runtime(
            "no handover attempt terminated during the simulation; \
             lengthen sim_duration_s or move UEs nearer the femtocells"
                .into(),
        )),
    }
}

fn print_summary(output: &RunOutput, dir: &Path) {
    let r = &output.report;
    println!("simulation summary");
    println!("  attempts                {}", r.attempts);
    println!("  macro -> femto          {}", r.completed_macro_to_femto);
    println!("  femto -> macro          {}", r.completed_femto_to_macro);
    println!("  femto -> femto          {}", r.completed_femto_to_femto);
    println!("  macro -> macro          {}", r.completed_macro_to_macro);
    let rejected: u64 = r.rejected_by_reason.values().sum();
    println!("  rejected                {rejected}");
    for (reason, count) in r.rejected_by_reason.iter().filter(|(_, c)| **c > 0) {
        println!("    {reason:<21} {count}");
    }
    println!("  mean scans (auth list)  {:.2}", r.mean_scans_with_auth);
    println!("  mean scans (all)        {:.2}", r.mean_scans_without_auth);
    println!(
        "  voice delay ms          mean {:.3} / p50 {:.3} / p99 {:.3}",
        r.voice_delay_mean_ms, r.voice_delay_p50_ms, r.voice_delay_p99_ms
    );
    println!(
        "  packets                 {} delivered, {} dropped",
        r.packets_delivered, r.packets_dropped
    );
    println!(
        "  broker                  {} grants, {} releases, {} reservations",
        r.broker_grants, r.broker_releases, r.broker_reservations
    );
    for (strategy, p_out) in &r.outage_by_strategy {
        println!("  outage ({strategy:<9})      {p_out:.4}");
    }
    println!("  outputs in              {}", dir.display());
}
