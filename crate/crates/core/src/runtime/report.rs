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


use super::{ResultHandle, Result, RuntimeError, TaskResult};

pub const OVERHEAD_CSV_HEADER: &str = "uid,kind,ranks,t_deserialize,t_comm_build,t_deliver,overhead_total,t_execute";

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OverheadRow {
    pub uid: String,
    pub kind: String,
    pub ranks: usize,
    pub t_deserialize: f64,
    pub t_comm_build: f64,
    pub t_deliver: f64,
    pub overhead_total: f64,
    pub t_execute: f64,
    /// `finished_at - started_at`.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub rows: Vec<OverheadRow>,
    pub makespan: f64,
}

/// Results of all handles, or the first one still pending.
pub fn collect_results(handles: &[ResultHandle]) -> Result<Vec<TaskResult>> {
    handles
        .iter()
        .map(|h| h.try_result().ok_or_else(|| RuntimeError::Unresolved(h.uid().to_string())))
        .collect()
}

/// `max finished_at - min started_at`; zero for no results.
pub fn makespan(results: &[TaskResult]) -> f64 {
    let start = results.iter().map(|r| r.started_at).fold(f64::INFINITY, f64::min);
    let end = results.iter().map(|r| r.finished_at).fold(f64::NEG_INFINITY, f64::max);
    if results.is_empty() {
        0.0
    } else {
        end - start
    }
}

pub fn overhead_report(results: &[TaskResult]) -> OverheadReport {
    let rows = results
        .iter()
        .map(|r| OverheadRow {
            uid: r.uid.clone(),
            kind: r.kind.to_string(),
            ranks: r.ranks,
            t_deserialize: r.timings.t_deserialize,
            t_comm_build: r.timings.t_comm_build,
            t_deliver: r.timings.t_deliver,
            overhead_total: r.timings.overhead_total(),
            t_execute: r.timings.t_execute,
            wall_time: r.finished_at - r.started_at,
        })
        .collect();
    OverheadReport {
        rows,
        makespan: makespan(results),
    }
}

impl OverheadReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(OVERHEAD_CSV_HEADER.split(',')).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.uid.clone(),
                r.kind.clone(),
                r.ranks.to_string(),
                r.t_deserialize.to_string(),
                r.t_comm_build.to_string(),
                r.t_deliver.to_string(),
                r.overhead_total.to_string(),
                r.t_execute.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }
}
