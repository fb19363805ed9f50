use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use juice_core::experiment::{
    emit_results, run_detection_sweep, run_nase_sweep, write_results, ExperimentSpec, OutputFormat, RunOptions, Sweep,
};
use juice_core::validate;

#[derive(Parser)]
#[command(name = "juice", version, about = "Activity detection and channel estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulated vs predicted miss-detection and false-alarm rates.
    DetectSweep(SweepArgs),
    /// AMP vs oracle MMSE channel-estimation error.
    NaseSweep(SweepArgs),
    /// Run the quick oracle checks.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct SweepArgs {
    /// Flat TOML file with experiment keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coherence blocks per sweep point.
    #[arg(long)]
    trials: Option<usize>,
    /// e.g. `tau_p=15,25,35,45` or `M=4,8,16,32`.
    #[arg(long)]
    sweep: Option<String>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    workers: Option<usize>,
    /// Start from N = 1000, M = 32 instead of the desk defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Fill the wall_s column.
    #[arg(long)]
    timing: bool,
}

impl SweepArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = if self.paper_scale {
            ExperimentSpec::paper_scale()
        } else {
            ExperimentSpec::desk()
        };
        if let Some(path) = &self.config {
            spec.apply_file(path)?;
        }
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(trials) = self.trials {
            spec.trials = trials;
        }
        if let Some(sweep) = &self.sweep {
            spec.set_sweep(sweep.parse::<Sweep>()?);
        }
        if let Some(out) = &self.out {
            spec.output = Some(out.clone());
        }
        spec.validate()?;
        Ok(spec)
    }

    fn options(&self) -> RunOptions {
        let mut opts = RunOptions { timing: self.timing, ..RunOptions::default() };
        if let Some(w) = self.workers {
            opts.workers = w;
        }
        opts
    }
}

fn sweep(args: &SweepArgs, nase: bool) -> Result<()> {
    let spec = args.spec()?;
    let format: OutputFormat = args.format.parse()?;
    let rows = if nase {
        run_nase_sweep(&spec, args.options())?
    } else {
        run_detection_sweep(&spec, args.options())?
    };
    match &spec.output {
        Some(path) => emit_results(&rows, &spec, path, format).with_context(|| format!("writing {}", path.display()))?,
        None => write_results(&rows, &spec, format, io::stdout().lock())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::DetectSweep(args) => sweep(args, false).map(|_| true),
        Command::NaseSweep(args) => sweep(args, true).map(|_| true),
        Command::Validate { seed } => {
            let checks = validate::run_all(*seed)?;
            for c in &checks {
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {:.3e} (limit {:.1e})", c.name, c.value, c.limit);
            }
            Ok(checks.iter().all(|c| c.passed()))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
