use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use proxaccel::harness::{
    certificate_summary, emit_outputs, load_config, rate_table, resolve_out_dir, run_experiment, Experiment, ExperimentConfig, HarnessError,
    Manifest, OutputKind, ScheduleSpec,
};

#[derive(Parser)]
#[command(name = "proxaccel", version, about = "Accelerated first-order methods as approximate proximal point steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and write its outputs
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare ppm, gd, cgd and agm on f(x, y) = 0.1x² + y² from (10, 10)
    Figure1 {
        #[arg(long, default_value = "constant:0.3333")]
        schedule: ScheduleSpec,
        #[arg(long = "T", default_value_t = 30)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate every applicable certificate; exits nonzero on any violation
    Certify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the rate table for a config
    Rates { config: PathBuf },
}

fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(load_config(&text)?)
}

fn report(manifest: &Manifest) {
    for file in &manifest.files {
        println!("wrote {}", file.display());
    }
    for note in &manifest.notes {
        println!("note: {note}");
    }
}

fn write_all(exp: &Experiment, cli_out: Option<&Path>) -> Result<(), HarnessError> {
    let dir = resolve_out_dir(cli_out, exp.config.out_dir.as_deref());
    report(&emit_outputs(exp, &dir)?);
    Ok(())
}

fn verdict(exp: &Experiment) -> ExitCode {
    if exp.clean() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} certificate violation(s)", exp.violations());
        ExitCode::FAILURE
    }
}

fn execute(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = read_config(&config)?;
            let exp = run_experiment(&cfg, cfg.wants(OutputKind::Certificates))?;
            write_all(&exp, out.as_deref())?;
            Ok(verdict(&exp))
        }
        Command::Figure1 { schedule, steps, out } => {
            if steps < 1 {
                eprintln!("--T must be at least 1");
                return Ok(ExitCode::from(2));
            }
            let exp = run_experiment(&ExperimentConfig::figure1_comparison(schedule, steps), false)?;
            write_all(&exp, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Certify { config, out } => {
            let mut cfg = read_config(&config)?;
            if !cfg.wants(OutputKind::Certificates) {
                cfg.outputs.push(OutputKind::Certificates);
            }
            let exp = run_experiment(&cfg, true)?;
            print!("{}", certificate_summary(&exp));
            write_all(&exp, out.as_deref())?;
            Ok(verdict(&exp))
        }
        Command::Rates { config } => {
            let cfg = read_config(&config)?;
            let exp = run_experiment(&cfg, false)?;
            print!("{}", rate_table(&exp));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
