//! The control loop: per-step estimation, normalization and rate adaptation.

mod adaptation;
mod estimation;

pub use adaptation::{adapt_maxmin, adapt_minimize, smooth_rate};
pub use estimation::{
    dequantize, estimation_phase, subsample_split, Estimation, EstimationParams, SizeLevel, MIN_SUBSAMPLE,
};

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataplane::{Constraint, DataplaneError, FeatureKind, Packet, Pipeline, StepReport, TaskReport};
use crate::kde::{Bandwidth, Density, KdeError, DEFAULT_GRID_POINTS};
use crate::normalizer::{fit_linear, normalize, FitModel, FitPoints, NormalizerError, SizeBounds};
use crate::scoring::{empirical_mean_score, Quantizer, ScoringError, DEFAULT_MAX_BINS};
use crate::TaskId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("budget {budget} is below the minimum total rate {required}")]
    InfeasibleBudget { budget: u64, required: u64 },
    #[error(transparent)]
    Kde(#[from] KdeError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Normalizer(#[from] NormalizerError),
    #[error(transparent)]
    Dataplane(#[from] DataplaneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Smallest rates meeting every task's target accuracy.
    MinimizeResources,
    /// Highest common accuracy within a total per-step sample budget.
    MaximizeAccuracy { budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringTask {
    pub id: TaskId,
    /// Switch the task is attached to.
    pub location: String,
    pub feature: FeatureKind,
    pub constraint: Constraint,
    /// Required under [`Objective::MinimizeResources`] only.
    pub target_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub objective: Objective,
    /// Largest subsample count `k`; levels `j = 1..=k` are scored.
    pub subsamples: usize,
    pub min_rate: u64,
    pub max_rate: u64,
    /// Per-step rate changes are limited to this factor.
    pub max_change: f64,
    /// Steps over which the largest observed mean score is remembered.
    pub qs_window: usize,
    /// Share of a task's events kept back as test traffic.
    pub test_fraction: f64,
    pub grid_points: usize,
    pub max_bins: usize,
    pub quantizer: Quantizer,
    /// Spread quantized samples over their cells before estimation.
    pub dequantize: bool,
    pub seed: u64,
    /// Worker threads for estimation; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            objective: Objective::MinimizeResources,
            subsamples: 6,
            min_rate: 64,
            max_rate: 1 << 16,
            max_change: 4.0,
            qs_window: 1,
            test_fraction: 0.5,
            grid_points: DEFAULT_GRID_POINTS,
            max_bins: DEFAULT_MAX_BINS,
            quantizer: Quantizer::IDENTITY,
            dequantize: true,
            seed: 0,
            threads: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, tasks: usize) -> Result<(), ControllerError> {
        let bad = |m: &str| Err(ControllerError::InvalidConfig(m.to_string()));
        if self.subsamples < 2 {
            return bad("at least two subsample levels are needed to fit a learning curve");
        }
        if self.min_rate == 0 || self.min_rate > self.max_rate {
            return bad("rates must satisfy 0 < min_rate <= max_rate");
        }
        if !(self.max_change > 1.0) {
            return bad("max_change must exceed 1");
        }
        if self.qs_window == 0 {
            return bad("qs_window must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        if let Objective::MaximizeAccuracy { budget } = self.objective {
            let required = tasks as u64 * self.min_rate;
            if budget < required {
                return Err(ControllerError::InfeasibleBudget { budget, required });
            }
        }
        Ok(())
    }

    fn warmup_rate(&self, tasks: usize) -> u64 {
        let rate = match self.objective {
            Objective::MinimizeResources => self.max_rate / 4,
            Objective::MaximizeAccuracy { budget } => budget / tasks.max(1) as u64,
        };
        rate.clamp(self.min_rate, self.max_rate)
    }

    fn bounds(&self) -> SizeBounds {
        SizeBounds {
            min: self.min_rate,
            max: self.max_rate,
        }
    }
}

/// One task's result for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutput {
    pub step: u64,
    pub task_id: TaskId,
    pub feature: FeatureKind,
    /// Training samples exported during this step.
    pub sample_count: usize,
    pub scored_count: u64,
    /// Estimated accuracy of the density fitted in the previous step.
    pub accuracy: Option<f64>,
    /// The accuracy was carried forward because it could not be computed.
    pub stale: bool,
    pub fit: Option<FitModel>,
    pub sizes: Vec<u64>,
    pub mean_scores: Vec<f64>,
    /// Rate used during this step.
    pub rate: u64,
    /// Rate configured for the next step.
    pub next_rate: u64,
    /// Density fitted on this step's samples.
    pub density: Option<Density>,
    pub bandwidth: Option<Bandwidth>,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
struct TaskState {
    task: MonitoringTask,
    rate: u64,
    pending: Option<(u64, Estimation)>,
    /// The pending estimation is older than the last step.
    carried: bool,
    fit: Option<FitModel>,
    qs_history: VecDeque<f64>,
    last_accuracy: Option<f64>,
}

struct Normalized {
    accuracy: f64,
    fit: FitModel,
    sizes: Vec<u64>,
    scores: Vec<f64>,
}

impl TaskState {
    fn normalize(&mut self, report: &TaskReport, window: usize) -> Result<Normalized, String> {
        let (version, est) = self.pending.as_ref().ok_or("no score tables installed yet")?;
        if report.table_version != Some(*version) {
            return Err(format!(
                "counters belong to tables {:?}, expected {version}",
                report.table_version
            ));
        }
        let counters = &report.counters;
        let scores = est
            .regularizations()
            .iter()
            .enumerate()
            .map(|(j, &reg)| empirical_mean_score(counters, j, reg))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| e.to_string())?;
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.qs_history.push_back(best);
        while self.qs_history.len() > window {
            self.qs_history.pop_front();
        }
        let qs_max = self.qs_history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sizes = est.sizes();
        let (accuracy, fit) = normalization_phase(&sizes, &scores, qs_max).map_err(|e| e.to_string())?;
        Ok(Normalized {
            accuracy,
            fit,
            sizes,
            scores,
        })
    }
}

/// Fits the learning curve to one step's `(size, mean score)` points and
/// normalizes the full-sample score `scores[0]`.
pub fn normalization_phase(sizes: &[u64], scores: &[f64], qs_max: f64) -> Result<(f64, FitModel), NormalizerError> {
    let points = FitPoints::new(sizes.to_vec(), scores.to_vec(), qs_max)?;
    let fit = fit_linear(&points)?;
    let accuracy = normalize(scores[0], &fit)?;
    Ok((accuracy, fit))
}

fn task_rng(seed: u64, step: u64, task: TaskId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(u64::from(task.0));
    rng
}

/// Controller state across steps.
pub struct Controller {
    config: ControllerConfig,
    tasks: Vec<TaskState>,
    pool: Option<rayon::ThreadPool>,
    next_version: u64,
}

impl Controller {
    pub fn new(config: ControllerConfig, tasks: Vec<MonitoringTask>) -> Result<Self, ControllerError> {
        config.validate(tasks.len())?;
        let mut ids: Vec<TaskId> = tasks.iter().map(|t| t.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != tasks.len() {
            return Err(ControllerError::InvalidConfig("duplicate task ids".into()));
        }
        let minimize = config.objective == Objective::MinimizeResources;
        for t in &tasks {
            match t.target_accuracy {
                Some(a) if minimize && !(a > 0.0 && a < 1.0) => {
                    return Err(ControllerError::InvalidConfig(format!(
                        "task {} target accuracy {a} must lie in (0, 1)",
                        t.id
                    )))
                }
                Some(_) if !minimize => {
                    return Err(ControllerError::InvalidConfig(format!(
                        "task {} has a target accuracy but the objective maximizes accuracy",
                        t.id
                    )))
                }
                None if minimize => {
                    return Err(ControllerError::InvalidConfig(format!(
                        "task {} needs a target accuracy to minimize resources",
                        t.id
                    )))
                }
                _ => {}
            }
        }
        let pool = match config.threads {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| ControllerError::InvalidConfig(e.to_string()))?,
            ),
            None => None,
        };
        let warmup = config.warmup_rate(tasks.len());
        let mut states: Vec<TaskState> = tasks
            .into_iter()
            .map(|task| TaskState {
                task,
                rate: warmup,
                pending: None,
                carried: false,
                fit: None,
                qs_history: VecDeque::new(),
                last_accuracy: None,
            })
            .collect();
        states.sort_by_key(|s| s.task.id);
        Ok(Controller {
            config,
            tasks: states,
            pool,
            next_version: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn tasks(&self) -> impl Iterator<Item = &MonitoringTask> {
        self.tasks.iter().map(|s| &s.task)
    }

    pub fn rate(&self, task: TaskId) -> Option<u64> {
        self.tasks.iter().find(|s| s.task.id == task).map(|s| s.rate)
    }

    /// `(id, feature, rate)` for building the pipeline.
    pub fn initial_pipeline_tasks(&self) -> Vec<(TaskId, FeatureKind, u64)> {
        self.tasks.iter().map(|s| (s.task.id, s.task.feature, s.rate)).collect()
    }

    fn estimate_all(&mut self, report: &StepReport) -> Vec<(TaskOutput, Option<Estimation>)> {
        let config = &self.config;
        let params = EstimationParams {
            subsamples: config.subsamples,
            grid_points: config.grid_points,
            max_bins: config.max_bins,
            quantizer: config.quantizer,
            dequantize: config.dequantize,
        };
        let work = |state: &mut TaskState| {
            let id = state.task.id;
            let task_report = report.tasks.get(&id);
            let samples = report.samples(id);
            let mut messages = Vec::new();

            let normalized = match task_report {
                Some(r) => state.normalize(r, config.qs_window),
                None => Err("task missing from step report".to_string()),
            };
            let (accuracy, stale, sizes, scores) = match normalized {
                Ok(n) => {
                    state.fit = Some(n.fit);
                    state.last_accuracy = Some(n.accuracy);
                    (Some(n.accuracy), state.carried, n.sizes, n.scores)
                }
                Err(m) => {
                    messages.push(m);
                    (state.last_accuracy, true, Vec::new(), Vec::new())
                }
            };

            let mut rng = task_rng(config.seed, report.step, id);
            let estimation = if samples.is_empty() {
                messages.push("no samples exported".into());
                None
            } else {
                match estimation_phase(id, &samples, &params, &mut rng) {
                    Ok(e) => Some(e),
                    Err(e) => {
                        messages.push(format!("estimation failed: {e}"));
                        None
                    }
                }
            };

            let output = TaskOutput {
                step: report.step,
                task_id: id,
                feature: state.task.feature,
                sample_count: samples.len(),
                scored_count: task_report.map_or(0, |r| r.counters.test_count),
                accuracy,
                stale,
                fit: state.fit,
                sizes,
                mean_scores: scores,
                rate: task_report.map_or(state.rate, |r| r.rate),
                next_rate: state.rate,
                density: estimation.as_ref().map(|e| e.full.clone()),
                bandwidth: estimation.as_ref().map(|e| e.bandwidth),
                message: (!messages.is_empty()).then(|| messages.join("; ")),
            };
            (output, estimation)
        };
        match &self.pool {
            Some(pool) => pool.install(|| self.tasks.par_iter_mut().map(work).collect()),
            None => self.tasks.par_iter_mut().map(work).collect(),
        }
    }

    fn test_cap(&self, report: &StepReport, id: TaskId) -> u64 {
        match report.tasks.get(&id) {
            Some(r) if r.stats.extracted > 0 => {
                let cap = (r.stats.extracted as f64 * (1.0 - self.config.test_fraction)).floor() as u64;
                cap.clamp(self.config.min_rate, self.config.max_rate)
            }
            _ => self.config.max_rate,
        }
    }

    fn adapt(&mut self, report: &StepReport) -> Vec<u64> {
        let cfg = &self.config;
        let bounds = cfg.bounds();
        let current: Vec<u64> = self.tasks.iter().map(|s| s.rate).collect();
        let caps: Vec<u64> = self.tasks.iter().map(|s| self.test_cap(report, s.task.id)).collect();
        let proposed: Vec<u64> = match cfg.objective {
            Objective::MinimizeResources => self
                .tasks
                .iter()
                .map(|s| match (&s.fit, s.task.target_accuracy) {
                    (Some(fit), Some(target)) => adapt_minimize(&[(*fit, target)], bounds)
                        .map(|v| v[0])
                        .unwrap_or(s.rate),
                    _ => s.rate,
                })
                .collect(),
            Objective::MaximizeAccuracy { budget } => {
                let fixed: u64 = self.tasks.iter().filter(|s| s.fit.is_none()).map(|s| s.rate).sum();
                let models: Vec<(FitModel, SizeBounds)> = self
                    .tasks
                    .iter()
                    .zip(&caps)
                    .filter_map(|(s, &cap)| s.fit.map(|f| (f, SizeBounds { min: cfg.min_rate, max: cap })))
                    .collect();
                match adapt_maxmin(&models, budget.saturating_sub(fixed)) {
                    Ok((sizes, _)) => {
                        let mut it = sizes.into_iter();
                        self.tasks
                            .iter()
                            .map(|s| if s.fit.is_some() { it.next().expect("one per model") } else { s.rate })
                            .collect()
                    }
                    Err(_) => current.clone(),
                }
            }
        };

        let finish = |rates: &[u64]| -> Vec<u64> {
            rates
                .iter()
                .zip(&caps)
                .map(|(&r, &cap)| r.clamp(cfg.min_rate, cfg.max_rate).min(cap))
                .collect()
        };
        let smoothed: Vec<u64> = current
            .iter()
            .zip(&proposed)
            .map(|(&c, &p)| smooth_rate(c, p, cfg.max_change))
            .collect();
        let smoothed = finish(&smoothed);
        match cfg.objective {
            Objective::MaximizeAccuracy { budget } if smoothed.iter().sum::<u64>() > budget => finish(&proposed),
            _ => smoothed,
        }
    }

    /// Consumes the report of the step that just ended, fits new densities,
    /// installs their score tables and the next rates into `pipeline`.
    pub fn run_step(&mut self, pipeline: &mut Pipeline, report: &StepReport) -> Result<Vec<TaskOutput>, ControllerError> {
        let results = self.estimate_all(report);
        let rates = self.adapt(report);
        let mut outputs = Vec::with_capacity(results.len());
        for ((state, (mut output, estimation)), rate) in self.tasks.iter_mut().zip(results).zip(rates) {
            let id = state.task.id;
            if let Some(est) = estimation {
                let version = self.next_version;
                self.next_version += 1;
                pipeline.install_tables(id, version, est.tables.clone())?;
                state.pending = Some((version, est));
                state.carried = false;
            } else {
                state.carried = state.pending.is_some();
            }
            state.rate = rate;
            pipeline.set_rate(id, rate)?;
            output.next_rate = rate;
            outputs.push(output);
        }
        Ok(outputs)
    }
}

/// Replays `packets` through `pipeline` in steps of `step_ns`, calling the
/// controller after each step. Live flowlets are flushed into the last step.
/// Stops after `max_steps` steps if given.
pub fn drive<F>(
    packets: &[Packet],
    step_ns: u64,
    max_steps: Option<u64>,
    pipeline: &mut Pipeline,
    controller: &mut Controller,
    mut on_step: F,
) -> Result<u64, ControllerError>
where
    F: FnMut(&StepReport, &[TaskOutput]) -> Result<(), ControllerError>,
{
    if step_ns == 0 {
        return Err(ControllerError::InvalidConfig("step length must be positive".into()));
    }
    let Some(first) = packets.first() else {
        return Ok(0);
    };
    let start = first.ts_ns;
    let mut steps = 0u64;
    let mut close = |pipeline: &mut Pipeline, controller: &mut Controller| -> Result<(), ControllerError> {
        let report = pipeline.end_of_step();
        let outputs = controller.run_step(pipeline, &report)?;
        on_step(&report, &outputs)
    };
    let mut last_ts = start;
    for p in packets {
        while p.ts_ns >= start + (steps + 1) * step_ns {
            close(pipeline, controller)?;
            steps += 1;
            if max_steps.is_some_and(|m| steps >= m) {
                return Ok(steps);
            }
        }
        pipeline.process_packet(p);
        last_ts = p.ts_ns;
    }
    pipeline.flush_flowlets(last_ts);
    close(pipeline, controller)?;
    Ok(steps + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{compile_rules, FieldMatch, PipelineConfig, PROTO_TCP};
    use crate::normalizer::predict_score;
    use crate::traffic::{builtin_trace_spec, generate_trace};

    fn tcp_task(id: u32, feature: FeatureKind) -> MonitoringTask {
        MonitoringTask {
            id: TaskId(id),
            location: "s1".into(),
            feature,
            constraint: Constraint::new(vec![FieldMatch::Proto(PROTO_TCP)]),
            target_accuracy: Some(0.95),
        }
    }

    fn setup(config: ControllerConfig, tasks: Vec<MonitoringTask>) -> (Pipeline, Controller) {
        let rules = compile_rules(
            &tasks
                .iter()
                .map(|t| (t.constraint.clone(), [t.id].into_iter().collect()))
                .collect::<Vec<_>>(),
        );
        let controller = Controller::new(config, tasks).unwrap();
        let pipeline = Pipeline::new(PipelineConfig::default(), rules, &controller.initial_pipeline_tasks()).unwrap();
        (pipeline, controller)
    }

    #[test]
    fn first_step_is_stale_then_accuracy_appears() {
        let config = ControllerConfig {
            max_rate: 4_000,
            grid_points: 1 << 12,
            ..ControllerConfig::default()
        };
        let (mut pipeline, mut controller) = setup(config, vec![tcp_task(1, FeatureKind::PacketSize)]);
        let trace = generate_trace(&builtin_trace_spec(5, 4.0)).unwrap();
        let mut all = Vec::new();
        drive(&trace, 1_000_000_000, None, &mut pipeline, &mut controller, |_, out| {
            all.extend_from_slice(out);
            Ok(())
        })
        .unwrap();
        assert!(all.len() >= 4);
        assert!(all[0].stale && all[0].accuracy.is_none());
        assert!(all[0].density.is_some());
        let acc = all[1].accuracy.unwrap();
        assert!(!all[1].stale && acc > 0.5 && acc < 1.5, "{acc}");
        assert_eq!(all[1].sizes.len(), 6);
    }

    #[test]
    fn normalization_on_exact_model() {
        let (qs_opt, c, r) = (0.004, 0.05, 0.8);
        let sizes = [3000u64, 1500, 1000, 750, 600, 500];
        let scores: Vec<f64> = sizes.iter().map(|&n| qs_opt - c * (n as f64).powf(-r)).collect();
        let qs_max = scores.iter().copied().fold(f64::MIN, f64::max);
        let (acc, fit) = normalization_phase(&sizes, &scores, qs_max).unwrap();
        let want = predict_score(&fit, 3000);
        assert!((acc - want).abs() < 1e-6, "{acc} {want}");
        assert!(acc <= 1.0 + 1e-12);
        assert!(matches!(
            normalization_phase(&sizes[..1], &scores[..1], qs_max),
            Err(NormalizerError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn validation() {
        let tasks = vec![tcp_task(1, FeatureKind::PacketSize), tcp_task(2, FeatureKind::PacketSize)];
        let config = ControllerConfig {
            objective: Objective::MaximizeAccuracy { budget: 100 },
            ..ControllerConfig::default()
        };
        assert!(matches!(
            Controller::new(config, tasks.clone()),
            Err(ControllerError::InfeasibleBudget { .. })
        ));
        let config = ControllerConfig {
            subsamples: 1,
            ..ControllerConfig::default()
        };
        assert!(Controller::new(config, tasks.clone()).is_err());
        let dup = vec![tcp_task(1, FeatureKind::PacketSize), tcp_task(1, FeatureKind::PacketSize)];
        assert!(Controller::new(ControllerConfig::default(), dup).is_err());
    }
}
