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


//! Scaling and execution-mode benchmarks.

use std::collections::HashMap;

use drc_core::fabric::Backend;
use drc_core::rng::SplitMix64;
use drc_core::runtime::{
    submit_pilot, PilotMode, SortParams, TaskDescription, TaskKind, TaskPayload, TaskResult, TaskStatus,
};
use drc_core::table::{decode_ipc, Column, DataType, Schema, Table};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::pipeline::{run_config, PipelineError, RunOptions, RunReport};

pub const SCALING_CSV_HEADER: &str = "op,mode,parallelism,rows_total,rows_per_rank,rep,total_s,overhead_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchOp {
    Sort,
    Join,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    /// Fixed total rows.
    Strong,
    /// Fixed rows per rank.
    Weak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingConfig {
    pub op: BenchOp,
    pub mode: ScalingMode,
    pub base_rows: usize,
    pub parallelisms: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub backend: Backend,
    /// Pilot size; `None` sizes the pilot to the largest parallelism.
    pub slots: Option<usize>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            op: BenchOp::Sort,
            mode: ScalingMode::Strong,
            base_rows: 100_000,
            parallelisms: vec![1, 2, 4, 8],
            reps: 3,
            seed: 42,
            backend: Backend::InProcess,
            slots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub op: BenchOp,
    pub mode: ScalingMode,
    pub parallelism: usize,
    pub rows_total: usize,
    pub rows_per_rank: usize,
    pub rep: usize,
    pub total_s: f64,
    pub overhead_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("task `{uid}` failed: {reason}")]
    TaskFailed { uid: String, reason: String },
    #[error("oracle mismatch in `{uid}`: {detail}")]
    Oracle { uid: String, detail: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Uniform Int64 keys in `[0, rows)` with one Float64 payload column.
pub fn bench_table(rows: usize, value_name: &str, seed: u64) -> Table {
    let mut rng = SplitMix64::new(seed);
    let bound = rows.max(1) as u64;
    let keys: Vec<i64> = (0..rows).map(|_| rng.below(bound) as i64).collect();
    let vals: Vec<f64> = (0..rows).map(|_| rng.next_f64()).collect();
    let schema = Schema::of(&[("k", DataType::Int64), (value_name, DataType::Float64)]).expect("valid schema");
    Table::try_new(schema, vec![Column::Int64(keys), Column::Float64(vals)]).expect("columns match schema")
}

fn key_counts(t: &Table) -> HashMap<i64, usize> {
    let mut m = HashMap::new();
    for &k in t.column_by_name("k").ok().and_then(Column::as_i64).unwrap_or(&[]) {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn check_sort(input: &Table, out: &Table) -> Result<(), String> {
    let keys = out.column_by_name("k").ok().and_then(Column::as_i64).ok_or("missing key column")?;
    if keys.windows(2).any(|w| w[0] > w[1]) {
        return Err("output not sorted".into());
    }
    let pairs = |t: &Table| -> Option<Vec<(i64, u64)>> {
        let k = t.column_by_name("k").ok()?.as_i64()?;
        let v = t.column_by_name("v").ok()?.as_f64()?;
        let mut p: Vec<(i64, u64)> = k.iter().zip(v).map(|(&k, v)| (k, v.to_bits())).collect();
        p.sort_unstable();
        Some(p)
    };
    if pairs(input) != pairs(out) {
        return Err("output is not a permutation of the input".into());
    }
    Ok(())
}

fn check_join(left: &Table, right: &Table, out: &Table) -> Result<(), String> {
    let (l, r) = (key_counts(left), key_counts(right));
    let mut expected: HashMap<i64, usize> = HashMap::new();
    for (k, cl) in &l {
        if let Some(cr) = r.get(k) {
            expected.insert(*k, cl * cr);
        }
    }
    let got = key_counts(out);
    if got != expected {
        let total: usize = expected.values().sum();
        return Err(format!("per-key counts differ: expected {total} rows, got {}", out.num_rows()));
    }
    Ok(())
}

fn failed(r: &TaskResult) -> Option<BenchError> {
    match &r.status {
        TaskStatus::Done => None,
        TaskStatus::Failed(reason) => Some(BenchError::TaskFailed {
            uid: r.uid.clone(),
            reason: reason.clone(),
        }),
    }
}

/// Runs every (parallelism, rep) pair on one pilot. A timing is kept only
/// after the output passes its oracle.
pub fn bench_scaling(cfg: &ScalingConfig) -> Result<Vec<ScalingRow>, BenchError> {
    if cfg.parallelisms.is_empty() || cfg.parallelisms.contains(&0) {
        return Err(BenchError::Config("parallelisms must be non-empty and positive".into()));
    }
    if cfg.reps == 0 || cfg.base_rows == 0 {
        return Err(BenchError::Config("reps and rows must be positive".into()));
    }
    let max_p = *cfg.parallelisms.iter().max().expect("non-empty");
    let slots = cfg.slots.unwrap_or(max_p);
    if max_p > slots {
        return Err(BenchError::Config(format!("parallelism {max_p} exceeds {slots} slots")));
    }
    let pilot = submit_pilot(slots, cfg.backend, PilotMode::Pipelined).map_err(|e| BenchError::Runtime(e.to_string()))?;
    let warm = pilot.probe().map_err(|e| BenchError::Runtime(e.to_string()))?;
    if let Some(e) = failed(&warm) {
        return Err(e);
    }
    let mut rows = Vec::new();
    for &p in &cfg.parallelisms {
        let rows_total = match cfg.mode {
            ScalingMode::Strong => cfg.base_rows,
            ScalingMode::Weak => cfg.base_rows * p,
        };
        for rep in 0..cfg.reps {
            let seed = cfg.seed ^ ((p as u64) << 32) ^ rep as u64;
            let uid = format!("{:?}-{p}-{rep}", cfg.op).to_lowercase();
            let (desc, check): (TaskDescription, Box<dyn Fn(&Table) -> Result<(), String>>) = match cfg.op {
                BenchOp::Sort => {
                    let input = bench_table(rows_total, "v", seed);
                    let params = serde_json::to_value(SortParams {
                        keys: vec!["k".into()],
                        ascending: true,
                    })
                    .expect("params serialize");
                    let payload = TaskPayload::new(params).with_table("input", &input, p).encode();
                    (
                        TaskDescription::new(uid.clone(), TaskKind::Sort, p, payload),
                        Box::new(move |out| check_sort(&input, out)),
                    )
                }
                BenchOp::Join => {
                    let left = bench_table(rows_total, "a", seed);
                    let right = bench_table(rows_total, "b", seed.wrapping_add(1));
                    let payload = TaskPayload::new(serde_json::json!({ "on": ["k"] }))
                        .with_table("left", &left, p)
                        .with_table("right", &right, p)
                        .encode();
                    (
                        TaskDescription::new(uid.clone(), TaskKind::Join, p, payload),
                        Box::new(move |out| check_join(&left, &right, out)),
                    )
                }
            };
            let handle = pilot
                .submit_tasks(vec![desc])
                .map_err(|e| BenchError::Runtime(e.to_string()))?
                .remove(0);
            let res = handle.wait();
            if let Some(e) = failed(&res) {
                return Err(e);
            }
            let out = decode_ipc(&res.output).map_err(|e| BenchError::Oracle {
                uid: uid.clone(),
                detail: e.to_string(),
            })?;
            check(&out).map_err(|detail| BenchError::Oracle { uid: uid.clone(), detail })?;
            log::info!("{uid}: {:.4}s", res.finished_at - res.started_at);
            rows.push(ScalingRow {
                op: cfg.op,
                mode: cfg.mode,
                parallelism: p,
                rows_total,
                rows_per_rank: rows_total.div_ceil(p),
                rep,
                total_s: res.finished_at - res.started_at,
                overhead_s: res.timings.overhead_total(),
            });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(SCALING_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let op = serde_json::to_value(r.op).expect("op serializes");
        let mode = serde_json::to_value(r.mode).expect("mode serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            op.as_str().unwrap_or_default(),
            mode.as_str().unwrap_or_default(),
            r.parallelism,
            r.rows_total,
            r.rows_per_rank,
            r.rep,
            r.total_s,
            r.overhead_s
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModesReport {
    pub batch_makespan_s: f64,
    pub pipelined_makespan_s: f64,
    /// `(batch - pipelined) / batch * 100`.
    pub improvement_percent: f64,
    pub batch: RunReport,
    pub pipelined: RunReport,
}

/// Runs one pipeline under both execution modes on fresh pilots.
pub fn bench_modes(cfg: &PipelineConfig, opts: &RunOptions) -> Result<ModesReport, BenchError> {
    let run_mode = |mode| -> Result<RunReport, BenchError> {
        let o = RunOptions {
            mode: Some(mode),
            report_path: None,
            ..opts.clone()
        };
        let mut c = cfg.clone();
        c.report_path = None;
        let run = run_config(&c, &o)?;
        if let Some(t) = run.report.tasks.iter().find(|t| t.status != "done") {
            return Err(BenchError::TaskFailed {
                uid: t.uid.clone(),
                reason: t.reason.clone().unwrap_or_default(),
            });
        }
        Ok(run.report)
    };
    let batch = run_mode(PilotMode::Batch)?;
    let pipelined = run_mode(PilotMode::Pipelined)?;
    let (b, p) = (batch.makespan_s, pipelined.makespan_s);
    Ok(ModesReport {
        batch_makespan_s: b,
        pipelined_makespan_s: p,
        improvement_percent: if b > 0.0 { (b - p) / b * 100.0 } else { 0.0 },
        batch,
        pipelined,
    })
}
