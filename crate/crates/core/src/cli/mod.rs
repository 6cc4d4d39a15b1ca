//! Command-line surface: `run`, `generate` and `report`.

mod config;
mod report;
mod run;

pub use config::{
    parse_config, parse_duration, render_config, render_constraint, render_duration, ConfigError, RunConfig,
    TraceSource, DEFAULT_BUILTIN_DURATION_NS, DEFAULT_STEP_NS, DEFAULT_TARGET,
};
pub use report::{read_results, write_report, REPORT_HEADER};
pub use run::{
    build, load_trace, read_sidecar, run, DensityEntry, Manifest, RunSummary, StepRecord, DENSITY_DIR, MANIFEST_FILE,
    RESULTS_FILE,
};

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::dataplane::write_trace;
use crate::traffic::{builtin_trace_spec, generate_trace, TraceSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "densmon", version, about = "Adaptive density monitoring of traffic features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the monitoring loop described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Output directory (default: the config's `output`, else `densmon-out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize a packet trace CSV from a TOML trace spec, or `builtin`.
    Generate {
        spec: String,
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Trace length in seconds, overriding the spec.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Per-task accuracy and rate series of a result stream as CSV.
    Report {
        /// A results file or the run's output directory.
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn execute(command: Command) -> Result<String, CliError> {
    match command {
        Command::Run { config, seed, steps, out } => {
            let text = fs::read_to_string(&config).map_err(|e| io(&config, e))?;
            let mut parsed = parse_config(&text).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            if steps.is_some() {
                parsed.steps = steps;
            }
            let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
            let out = out
                .or_else(|| parsed.output.as_ref().map(|o| base.join(o)))
                .unwrap_or_else(|| PathBuf::from("densmon-out"));
            let summary = run(&parsed, &base, &out)?;
            Ok(format!(
                "{} steps, {} records written to {}",
                summary.steps,
                summary.records,
                out.display()
            ))
        }
        Command::Generate {
            spec,
            out,
            seed,
            duration,
        } => {
            let mut trace_spec = if spec == "builtin" {
                builtin_trace_spec(0, DEFAULT_BUILTIN_DURATION_NS as f64 * 1e-9)
            } else {
                let path = Path::new(&spec);
                let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
                TraceSpec::from_toml(&text).map_err(|e| CliError::Config(format!("{spec}: {e}")))?
            };
            if let Some(seed) = seed {
                trace_spec.seed = seed;
            }
            if let Some(d) = duration {
                trace_spec.duration_s = d;
            }
            let packets = generate_trace(&trace_spec).map_err(|e| CliError::Config(e.to_string()))?;
            let file = File::create(&out).map_err(|e| io(&out, e))?;
            write_trace(BufWriter::new(file), &packets).map_err(|e| io(&out, e))?;
            Ok(format!("{} packets written to {}", packets.len(), out.display()))
        }
        Command::Report { results, out } => {
            let path = if results.is_dir() { results.join(RESULTS_FILE) } else { results };
            let file = File::open(&path).map_err(|e| io(&path, e))?;
            let records = read_results(BufReader::new(file))?;
            match out {
                Some(o) => {
                    let file = File::create(&o).map_err(|e| io(&o, e))?;
                    write_report(BufWriter::new(file), &records)?;
                    Ok(format!("{} records reported to {}", records.len(), o.display()))
                }
                None => {
                    write_report(std::io::stdout().lock(), &records)?;
                    Ok(String::new())
                }
            }
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(message) => {
            if !message.is_empty() {
                eprintln!("{message}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
