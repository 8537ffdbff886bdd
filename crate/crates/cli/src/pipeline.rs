// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


//! Runs a configured pipeline on a fresh pilot and builds the run report.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use drc_core::fabric::Backend;
use drc_core::runtime::{
    overhead_report, submit_pilot, InferOutput, InferParams, JoinParams, PilotMode, ResultHandle, SleepParams,
    SortParams, TaskDescription, TaskKind, TaskPayload, TaskResult, TaskStatus, TrainParams,
};
use drc_core::table::{decode_ipc, parse_csv, Schema, Table};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{InputRef, PipelineConfig, ResolvedTask};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub backend: Option<Backend>,
    pub mode: Option<PilotMode>,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReportRow {
    pub uid: String,
    pub kind: TaskKind,
    pub ranks: usize,
    /// `done` or `failed`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub t_deserialize: f64,
    pub t_comm_build: f64,
    pub t_deliver: f64,
    pub overhead_total: f64,
    pub t_execute: f64,
    pub started_at: f64,
    pub finished_at: f64,
    /// Row count of each table input.
    pub input_rows: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: PilotMode,
    pub slots: usize,
    pub seed: u64,
    pub makespan_s: f64,
    pub tasks: Vec<TaskReportRow>,
}

impl RunReport {
    pub fn all_done(&self) -> bool {
        self.tasks.iter().all(|t| t.status == "done")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskOutput {
    Table(Table),
    Model(Vec<u8>),
    Infer(InferOutput),
    Nothing,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: RunReport,
    /// Per configured task; `None` when the task failed or never ran.
    pub outputs: Vec<Option<TaskOutput>>,
    pub overhead_csv: String,
    pub report_path: Option<PathBuf>,
}

impl PipelineRun {
    /// Process exit code: 0 when every task is done, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.all_done() {
            0
        } else {
            3
        }
    }
}

fn check_params(t: &ResolvedTask) -> Result<(), String> {
    let p = t.params.clone();
    let r = match t.kind {
        TaskKind::Join => serde_json::from_value::<JoinParams>(p).map(drop),
        TaskKind::Sort => serde_json::from_value::<SortParams>(p).map(drop),
        TaskKind::Train => serde_json::from_value::<TrainParams>(p).map(drop),
        TaskKind::Infer => serde_json::from_value::<InferParams>(p).map(drop),
        TaskKind::Sleep => serde_json::from_value::<SleepParams>(p).map(drop),
    };
    r.map_err(|e| format!("task `{}`: params: {e}", t.uid))
}

/// Fills the train seeds from the session seed when the task leaves them out.
fn with_session_seed(mut params: Value, seed: u64) -> Value {
    if let Value::Object(m) = &mut params {
        m.entry("seed").or_insert(Value::from(seed));
        let train = m.entry("train").or_insert_with(|| Value::Object(Default::default()));
        if let Value::Object(t) = train {
            t.entry("init_seed").or_insert(Value::from(seed));
        }
    }
    params
}

fn load_dataset(d: &crate::config::DatasetConfig) -> Result<Table, String> {
    let schema = Schema::new(d.schema.clone()).map_err(|e| format!("dataset `{}`: {e}", d.name))?;
    let file = File::open(&d.csv_path).map_err(|e| format!("dataset `{}`: {}: {e}", d.name, d.csv_path.display()))?;
    parse_csv(file, &schema, d.has_header).map_err(|e| format!("dataset `{}`: {e}", d.name))
}

fn decode_output(kind: TaskKind, bytes: &[u8]) -> Result<TaskOutput, String> {
    Ok(match kind {
        TaskKind::Join | TaskKind::Sort => TaskOutput::Table(decode_ipc(bytes).map_err(|e| e.to_string())?),
        TaskKind::Train => TaskOutput::Model(bytes.to_vec()),
        TaskKind::Infer => TaskOutput::Infer(serde_json::from_slice(bytes).map_err(|e| e.to_string())?),
        TaskKind::Sleep => TaskOutput::Nothing,
    })
}

pub fn run_pipeline(config_path: &Path, opts: &RunOptions) -> Result<PipelineRun, PipelineError> {
    let cfg = PipelineConfig::load(config_path).map_err(PipelineError::Config)?;
    run_config(&cfg, opts)
}

enum Slot {
    Submitted(ResultHandle),
    Skipped(TaskResult),
}

pub fn run_config(cfg: &PipelineConfig, opts: &RunOptions) -> Result<PipelineRun, PipelineError> {
    let mut cfg = cfg.clone();
    if let Some(b) = opts.backend {
        cfg.pilot.backend = b;
    }
    if let Some(m) = opts.mode {
        cfg.pilot.mode = m;
    }
    let seed = opts.seed.unwrap_or(cfg.seed);
    let tasks = cfg.resolve().map_err(PipelineError::Config)?;
    for t in &tasks {
        check_params(t).map_err(PipelineError::Config)?;
    }
    let datasets: Vec<Table> = cfg
        .datasets
        .iter()
        .map(load_dataset)
        .collect::<Result<_, _>>()
        .map_err(PipelineError::Config)?;

    let pilot = submit_pilot(cfg.pilot.slots, cfg.pilot.backend, cfg.pilot.mode)
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    let mut slots: Vec<Slot> = Vec::with_capacity(tasks.len());
    let mut outputs: Vec<Option<TaskOutput>> = vec![None; tasks.len()];
    let mut input_rows: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); tasks.len()];

    for (i, t) in tasks.iter().enumerate() {
        let mut tables: BTreeMap<String, Table> = BTreeMap::new();
        let mut blobs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut upstream_failure = None;
        for (slot, r) in &t.inputs {
            match r {
                InputRef::Dataset(d) => {
                    tables.insert(slot.clone(), datasets[*d].clone());
                }
                InputRef::Task(j) => {
                    if let Slot::Submitted(h) = &slots[*j] {
                        let res = h.wait();
                        if outputs[*j].is_none() && res.status.is_done() {
                            match decode_output(tasks[*j].kind, &res.output) {
                                Ok(o) => outputs[*j] = Some(o),
                                Err(e) => log::warn!("task `{}`: bad output: {e}", tasks[*j].uid),
                            }
                        }
                    }
                    match &outputs[*j] {
                        Some(TaskOutput::Table(tb)) => {
                            tables.insert(slot.clone(), tb.clone());
                        }
                        Some(TaskOutput::Model(m)) => {
                            blobs.insert(slot.clone(), m.clone());
                        }
                        _ => upstream_failure = Some(tasks[*j].uid.clone()),
                    }
                }
            }
        }
        for (slot, tb) in &tables {
            input_rows[i].insert(slot.clone(), tb.num_rows());
        }
        if let Some(up) = upstream_failure {
            let now = pilot.now();
            slots.push(Slot::Skipped(TaskResult {
                uid: t.uid.clone(),
                kind: t.kind,
                ranks: t.ranks,
                status: TaskStatus::Failed(format!("upstream task `{up}` did not produce an output")),
                output: Vec::new(),
                timings: Default::default(),
                started_at: now,
                finished_at: now,
                slots: Vec::new(),
            }));
            continue;
        }

        let mut params = t.params.clone();
        if t.kind == TaskKind::Train {
            params = with_session_seed(params, seed);
        }
        if t.kind == TaskKind::Infer {
            inherit_transform(&mut params, &tasks, t);
        }
        let mut payload = TaskPayload::new(params);
        for (slot, tb) in &tables {
            payload = payload.with_table(slot, tb, t.ranks);
        }
        for (slot, b) in blobs {
            payload = payload.with_blob(&slot, b);
        }
        let desc = TaskDescription::new(t.uid.clone(), t.kind, t.ranks, payload.encode());
        let h = pilot
            .submit_tasks(vec![desc])
            .map_err(|e| PipelineError::Io(e.to_string()))?
            .remove(0);
        slots.push(Slot::Submitted(h));
    }

    let results: Vec<TaskResult> = slots
        .iter()
        .map(|s| match s {
            Slot::Submitted(h) => h.wait(),
            Slot::Skipped(r) => r.clone(),
        })
        .collect();
    drop(pilot);

    for (i, r) in results.iter().enumerate() {
        if outputs[i].is_none() && r.status.is_done() {
            outputs[i] = decode_output(r.kind, &r.output).ok();
        }
    }
    let submitted: Vec<TaskResult> = results
        .iter()
        .zip(&slots)
        .filter(|(_, s)| matches!(s, Slot::Submitted(_)))
        .map(|(r, _)| r.clone())
        .collect();
    let makespan_s = overhead_report(&submitted).makespan;
    let overhead = overhead_report(&results);

    let rows = results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (status, reason) = match &r.status {
                TaskStatus::Done => ("done".to_string(), None),
                TaskStatus::Failed(reason) => ("failed".to_string(), Some(reason.clone())),
            };
            let (output_rows, metrics) = match &outputs[i] {
                Some(TaskOutput::Table(t)) => (Some(t.num_rows()), None),
                Some(TaskOutput::Infer(o)) => (
                    Some(o.rows),
                    Some(serde_json::json!({
                        "mae": o.metrics.mae,
                        "mse": o.metrics.mse,
                        "mape_percent": o.metrics.mape_percent,
                        "nnse": o.metrics.nnse,
                        "mape_excluded": o.metrics.mape_excluded,
                        "mean_predictor_mse": o.mean_predictor_mse,
                    })),
                ),
                _ => (None, None),
            };
            TaskReportRow {
                uid: r.uid.clone(),
                kind: r.kind,
                ranks: r.ranks,
                status,
                reason,
                t_deserialize: r.timings.t_deserialize,
                t_comm_build: r.timings.t_comm_build,
                t_deliver: r.timings.t_deliver,
                overhead_total: r.timings.overhead_total(),
                t_execute: r.timings.t_execute,
                started_at: r.started_at,
                finished_at: r.finished_at,
                input_rows: input_rows[i].clone(),
                output_rows,
                metrics,
            }
        })
        .collect();
    let report = RunReport {
        mode: cfg.pilot.mode,
        slots: cfg.pilot.slots,
        seed,
        makespan_s,
        tasks: rows,
    };
    let run = PipelineRun {
        report,
        outputs,
        overhead_csv: overhead.to_csv(),
        report_path: opts.report_path.clone().or(cfg.report_path.clone()),
    };
    if let Some(path) = &run.report_path {
        write_report(&run, path)?;
    }
    Ok(run)
}

/// An infer task reading a model from a train task applies the same feature
/// transform unless it sets its own.
fn inherit_transform(params: &mut Value, tasks: &[ResolvedTask], t: &ResolvedTask) {
    let Some(InputRef::Task(j)) = t.inputs.get("model") else { return };
    let Value::Object(m) = params else { return };
    if m.contains_key("transform") {
        return;
    }
    if let Some(tr) = tasks[*j].params.pointer("/loader/transform") {
        if !tr.is_null() {
            m.insert("transform".into(), tr.clone());
        }
    }
}

/// Writes the JSON report to `path` and the overhead table next to it.
pub fn write_report(run: &PipelineRun, path: &Path) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let json = serde_json::to_string_pretty(&run.report).expect("report serializes");
    std::fs::write(path, json).map_err(io)?;
    std::fs::write(path.with_extension("csv"), &run.overhead_csv).map_err(io)?;
    Ok(())
}
