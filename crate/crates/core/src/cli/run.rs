use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, TraceSource};
use super::CliError;
use crate::controller::{drive, Controller, TaskOutput};
use crate::dataplane::{compile_rules, read_trace, Constraint, FeatureKind, Packet, Pipeline, PipelineConfig};
use crate::traffic::{builtin_trace_spec, generate_trace, TraceSpec};
use crate::TaskId;

pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DENSITY_DIR: &str = "densities";

/// One line of the result stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub task_id: TaskId,
    pub location: String,
    pub feature: FeatureKind,
    pub sample_count: usize,
    pub scored_count: u64,
    pub accuracy: Option<f64>,
    pub stale: bool,
    pub qs_opt: Option<f64>,
    pub c: Option<f64>,
    pub rate: u64,
    pub next_rate: u64,
    /// Sidecar path relative to the output directory.
    pub density: Option<String>,
    pub message: Option<String>,
}

/// Grid and provenance of one density sidecar: `points` little-endian f64
/// values sampled at `lo + i * (hi - lo) / (points - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub file: String,
    pub step: u64,
    pub task_id: TaskId,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub bandwidth: f64,
    pub train_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub records: usize,
    pub steps: u64,
    pub densities: Vec<DensityEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub steps: u64,
    pub records: usize,
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads or synthesizes the packet trace. Relative paths are taken from `base`.
/// The run seed replaces the seed of a trace spec.
pub fn load_trace(config: &RunConfig, base: &Path) -> Result<Vec<Packet>, CliError> {
    match &config.trace {
        TraceSource::Builtin { duration_ns } => {
            let spec = builtin_trace_spec(config.seed, *duration_ns as f64 * 1e-9);
            generate_trace(&spec).map_err(|e| CliError::Runtime(e.to_string()))
        }
        TraceSource::Csv(p) => {
            let path = resolve(base, p);
            let file = File::open(&path).map_err(|e| io(&path, e))?;
            read_trace(std::io::BufReader::new(file)).map_err(|e| io(&path, e))
        }
        TraceSource::Spec(p) => {
            let path = resolve(base, p);
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let mut spec = TraceSpec::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            spec.seed = config.seed;
            generate_trace(&spec).map_err(|e| CliError::Runtime(e.to_string()))
        }
    }
}

/// Builds the pipeline and controller for `config`. Tasks with equal
/// constraints share one classification rule.
pub fn build(config: &RunConfig) -> Result<(Pipeline, Controller), CliError> {
    let mut groups: Vec<(Constraint, BTreeSet<TaskId>)> = Vec::new();
    for t in &config.tasks {
        match groups.iter_mut().find(|(c, _)| *c == t.constraint) {
            Some((_, ids)) => {
                ids.insert(t.id);
            }
            None => groups.push((t.constraint.clone(), [t.id].into_iter().collect())),
        }
    }
    let controller =
        Controller::new(config.controller_config(), config.tasks.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let pipeline = Pipeline::new(
        PipelineConfig {
            flowlet_timeout_ns: config.flowlet_timeout_ns,
            ..PipelineConfig::default()
        },
        compile_rules(&groups),
        &controller.initial_pipeline_tasks(),
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((pipeline, controller))
}

fn record(output: &TaskOutput, location: &str, density: Option<String>) -> StepRecord {
    StepRecord {
        step: output.step,
        task_id: output.task_id,
        location: location.to_string(),
        feature: output.feature,
        sample_count: output.sample_count,
        scored_count: output.scored_count,
        accuracy: output.accuracy,
        stale: output.stale,
        qs_opt: output.fit.map(|f| f.qs_opt),
        c: output.fit.map(|f| f.c),
        rate: output.rate,
        next_rate: output.next_rate,
        density,
        message: output.message.clone(),
    }
}

/// Runs the monitoring loop over the trace and writes the result stream,
/// density sidecars and manifest into `out`.
pub fn run(config: &RunConfig, base: &Path, out: &Path) -> Result<RunSummary, CliError> {
    let packets = load_trace(config, base)?;
    let (mut pipeline, mut controller) = build(config)?;
    fs::create_dir_all(out.join(DENSITY_DIR)).map_err(|e| io(out, e))?;
    let results_path = out.join(RESULTS_FILE);
    let mut results = BufWriter::new(File::create(&results_path).map_err(|e| io(&results_path, e))?);
    let locations: std::collections::BTreeMap<TaskId, String> =
        config.tasks.iter().map(|t| (t.id, t.location.clone())).collect();

    let mut densities = Vec::new();
    let mut records = 0usize;
    let mut failure: Option<CliError> = None;
    let steps = drive(&packets, config.step_ns, config.steps, &mut pipeline, &mut controller, |_, outputs| {
        if failure.is_some() {
            return Ok(());
        }
        let mut write_step = || -> Result<(), CliError> {
            for o in outputs {
                let sidecar = match &o.density {
                    Some(d) => {
                        let file = format!("{DENSITY_DIR}/step{:06}_task{}.f64", o.step, o.task_id);
                        let path = out.join(&file);
                        let bytes: Vec<u8> = d.values().iter().flat_map(|v| v.to_le_bytes()).collect();
                        fs::write(&path, bytes).map_err(|e| io(&path, e))?;
                        densities.push(DensityEntry {
                            file: file.clone(),
                            step: o.step,
                            task_id: o.task_id,
                            lo: d.grid().lo(),
                            hi: d.grid().hi(),
                            points: d.grid().points(),
                            bandwidth: d.bandwidth(),
                            train_size: d.train_size(),
                        });
                        Some(file)
                    }
                    None => None,
                };
                let line = serde_json::to_string(&record(o, &locations[&o.task_id], sidecar))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                writeln!(results, "{line}").map_err(|e| io(&results_path, e))?;
                records += 1;
            }
            Ok(())
        };
        if let Err(e) = write_step() {
            failure = Some(e);
        }
        Ok(())
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    if let Some(e) = failure {
        return Err(e);
    }
    results.flush().map_err(|e| io(&results_path, e))?;

    let manifest = Manifest {
        format: "f64-le".into(),
        records,
        steps,
        densities,
    };
    let manifest_path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&manifest_path, text + "\n").map_err(|e| io(&manifest_path, e))?;
    Ok(RunSummary { steps, records })
}

/// Reads one density sidecar back.
pub fn read_sidecar(out: &Path, entry: &DensityEntry) -> Result<Vec<f64>, CliError> {
    let path = out.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| io(&path, e))?;
    if bytes.len() != entry.points * 8 {
        return Err(io(&path, format!("expected {} values, found {} bytes", entry.points, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect())
}
