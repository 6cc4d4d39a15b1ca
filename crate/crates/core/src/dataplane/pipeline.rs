//! The emulated switch: classification, feature extraction, sampling and
//! in-pipeline scoring, with per-step reports to the controller.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::features::{extract_features, summary_events, FeatureEvent, FeatureKind};
use super::flowlet::{FlowletStatus, FlowletSummary, FlowletTable, DEFAULT_FLOWLET_SLOTS, DEFAULT_FLOWLET_TIMEOUT_NS};
use super::meter::{Decision, Meter};
use super::packet::Packet;
use super::ternary::{match_tasks, TernaryRule};
use super::DataplaneError;
use crate::scoring::{score_update, ScoreCounters, ScoreTable};
use crate::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub flowlet_slots: usize,
    pub flowlet_timeout_ns: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            flowlet_slots: DEFAULT_FLOWLET_SLOTS,
            flowlet_timeout_ns: DEFAULT_FLOWLET_TIMEOUT_NS,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStepStats {
    pub extracted: u64,
    pub sampled: u64,
    pub scored: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub feature: FeatureKind,
    pub rate: u64,
    pub stats: TaskStepStats,
    pub counters: ScoreCounters,
    /// Version of the tables the counters were accumulated against.
    pub table_version: Option<u64>,
}

/// Everything the switch hands to the controller at the end of a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub export: Vec<FeatureEvent>,
    pub tasks: BTreeMap<TaskId, TaskReport>,
    pub collisions: u64,
}

impl StepReport {
    pub fn samples(&self, task: TaskId) -> Vec<f64> {
        self.export
            .iter()
            .filter(|e| e.task_id == task)
            .map(|e| e.value as f64)
            .collect()
    }

    /// Writes the export as CSV rows `step,task_id,value`.
    pub fn write_export<W: Write>(&self, writer: W, header: bool) -> Result<(), DataplaneError> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        let io = |e: csv::Error| DataplaneError::Io(e.to_string());
        if header {
            wtr.write_record(["step", "task_id", "value"]).map_err(io)?;
        }
        for e in &self.export {
            wtr.serialize((self.step, e.task_id.0, e.value)).map_err(io)?;
        }
        wtr.flush().map_err(|e| DataplaneError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone)]
struct InstalledTables {
    version: u64,
    tables: Vec<ScoreTable>,
}

#[derive(Debug, Clone)]
struct TaskSlot {
    feature: FeatureKind,
    meter: Meter,
    tables: Option<InstalledTables>,
    counters: ScoreCounters,
    stats: TaskStepStats,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    rules: Vec<TernaryRule>,
    tasks: BTreeMap<TaskId, TaskSlot>,
    flowlets: FlowletTable,
    last_seen: BTreeMap<TaskId, u64>,
    export: Vec<FeatureEvent>,
    step: u64,
    collisions_at_step_start: u64,
}

impl Pipeline {
    /// `tasks` lists each task with its feature and initial sampling rate.
    pub fn new(
        config: PipelineConfig,
        rules: Vec<TernaryRule>,
        tasks: &[(TaskId, FeatureKind, u64)],
    ) -> Result<Self, DataplaneError> {
        let mut slots = BTreeMap::new();
        for &(id, feature, rate) in tasks {
            let slot = TaskSlot {
                feature,
                meter: Meter::new(rate),
                tables: None,
                counters: ScoreCounters::new(0),
                stats: TaskStepStats::default(),
            };
            if slots.insert(id, slot).is_some() {
                return Err(DataplaneError::DuplicateTask(id));
            }
        }
        for rule in &rules {
            if let Some(&id) = rule.tasks.iter().find(|id| !slots.contains_key(id)) {
                return Err(DataplaneError::UnknownTask(id));
            }
        }
        Ok(Pipeline {
            rules,
            tasks: slots,
            flowlets: FlowletTable::new(config.flowlet_slots, config.flowlet_timeout_ns),
            last_seen: BTreeMap::new(),
            export: Vec::new(),
            step: 0,
            collisions_at_step_start: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.keys().copied()
    }

    pub fn rate(&self, task: TaskId) -> Option<u64> {
        self.tasks.get(&task).map(|s| s.meter.rate())
    }

    /// Takes effect immediately; call it between steps.
    pub fn set_rate(&mut self, task: TaskId, rate: u64) -> Result<(), DataplaneError> {
        let slot = self.tasks.get_mut(&task).ok_or(DataplaneError::UnknownTask(task))?;
        slot.meter.set_rate(rate);
        Ok(())
    }

    /// Replaces the task's score tables and resets its counters to `tables.len()`
    /// reward sums. Call it between steps.
    pub fn install_tables(&mut self, task: TaskId, version: u64, tables: Vec<ScoreTable>) -> Result<(), DataplaneError> {
        let slot = self.tasks.get_mut(&task).ok_or(DataplaneError::UnknownTask(task))?;
        slot.counters = ScoreCounters::new(tables.len());
        slot.tables = Some(InstalledTables { version, tables });
        Ok(())
    }

    fn tasks_with_features(&self, ids: &BTreeSet<TaskId>) -> Vec<(TaskId, FeatureKind)> {
        ids.iter()
            .filter_map(|id| self.tasks.get(id).map(|s| (*id, s.feature)))
            .collect()
    }

    fn dispatch(&mut self, event: FeatureEvent) {
        let Some(slot) = self.tasks.get_mut(&event.task_id) else {
            return;
        };
        slot.stats.extracted += 1;
        match slot.meter.decide() {
            Decision::Sample => {
                slot.stats.sampled += 1;
                self.export.push(event);
            }
            Decision::Score => {
                slot.stats.scored += 1;
                if let Some(installed) = &slot.tables {
                    score_update(&installed.tables, &mut slot.counters, event.value as i64);
                }
            }
        }
    }

    fn foreign_summary_events(&self, summary: &FlowletSummary, ts_ns: u64) -> Vec<FeatureEvent> {
        let tasks = self.tasks_with_features(&match_tasks(&summary.flow, &self.rules));
        summary_events(summary, &tasks, ts_ns)
    }

    pub fn process_packet(&mut self, packet: &Packet) {
        let key = packet.flow_key();
        let active = match_tasks(&key, &self.rules);
        if active.is_empty() {
            return;
        }
        let tasks = self.tasks_with_features(&active);
        let status = if tasks.iter().any(|(_, f)| f.needs_flowlet()) {
            Some(self.flowlets.update(packet))
        } else {
            None
        };

        let mut events = extract_features(packet, status.as_ref(), &tasks, &mut self.last_seen);
        let displaced = match &status {
            Some(FlowletStatus::NewFlowlet { prev: Some(s) }) => Some(s),
            Some(FlowletStatus::Ended { evicted: Some(s), .. }) => Some(s),
            _ => None,
        };
        if let Some(s) = displaced.filter(|s| s.flow != key) {
            events.extend(self.foreign_summary_events(s, packet.ts_ns));
        }
        for e in events {
            self.dispatch(e);
        }
    }

    /// Emits features of every live flowlet, as at the end of a trace.
    pub fn flush_flowlets(&mut self, ts_ns: u64) {
        for summary in self.flowlets.flush() {
            for e in self.foreign_summary_events(&summary, ts_ns) {
                self.dispatch(e);
            }
        }
    }

    /// Closes the step: snapshots exports and counters, then resets counters
    /// and refills meters.
    pub fn end_of_step(&mut self) -> StepReport {
        let mut tasks = BTreeMap::new();
        for (&id, slot) in self.tasks.iter_mut() {
            tasks.insert(
                id,
                TaskReport {
                    feature: slot.feature,
                    rate: slot.meter.rate(),
                    stats: std::mem::take(&mut slot.stats),
                    counters: slot.counters.clone(),
                    table_version: slot.tables.as_ref().map(|t| t.version),
                },
            );
            slot.counters.reset();
            slot.meter.refill();
        }
        let collisions = self.flowlets.collisions() - self.collisions_at_step_start;
        self.collisions_at_step_start = self.flowlets.collisions();
        let report = StepReport {
            step: self.step,
            export: std::mem::take(&mut self.export),
            tasks,
            collisions,
        };
        self.step += 1;
        report
    }
}
