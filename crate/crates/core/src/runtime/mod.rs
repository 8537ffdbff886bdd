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


//! Pilot runtime: a master schedules task descriptions onto a pool of
//! executor slots, each task gets its own communicator split from the pilot's
//! world, and results come back with overhead timings.
//!
//! World layout: slot `s` is world rank `s`, the master is world rank
//! `slots`. Control messages travel on the control plane under tags
//! `0x0200..=0x02FF`.

mod executor;
mod payload;
mod pilot;
mod report;
mod scheduler;
mod tasks;
mod wire;

use crate::fabric::FabricError;

pub use self::payload::{split_table, InputKind, PayloadInput, PayloadView, TaskPayload, PAYLOAD_MAGIC};
pub use self::pilot::{submit_pilot, Pilot, PilotState, ResultHandle};
pub use self::report::{collect_results, makespan, overhead_report, OverheadReport, OverheadRow, OVERHEAD_CSV_HEADER};
pub use self::scheduler::AgentState;
pub use self::tasks::{InferOutput, InferParams, JoinParams, SleepParams, SortParams, TrainParams};

pub const TAG_DISPATCH: u64 = 0x0200;
pub const TAG_RESULT: u64 = 0x0201;
pub const TAG_READY: u64 = 0x0202;
pub const TAG_TRAIN_TABLE: u64 = 0x0210;
pub const TAG_INFER_GATHER: u64 = 0x0211;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("a pilot needs at least one slot")]
    NoSlots,
    #[error("pilot is not active")]
    NotActive,
    #[error("duplicate task uid `{0}`")]
    DuplicateUid(String),
    #[error("task `{0}` requires zero ranks")]
    ZeroRanks(String),
    #[error("task `{0}` has not resolved")]
    Unresolved(String),
    #[error("pilot startup failed: {0}")]
    Startup(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Join,
    Sort,
    Train,
    Infer,
    Sleep,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [Self::Join, Self::Sort, Self::Train, Self::Infer, Self::Sleep];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Join => "join",
            Self::Sort => "sort",
            Self::Train => "train",
            Self::Infer => "infer",
            Self::Sleep => "sleep",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(t: u8) -> Option<Self> {
        Self::ALL.get(t as usize).copied()
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown kind `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PilotMode {
    Batch,
    Pipelined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescription {
    pub uid: String,
    pub kind: TaskKind,
    pub ranks_required: usize,
    /// Encoded [`TaskPayload`].
    pub payload: Vec<u8>,
    /// Seconds since the pilot started; set on submission.
    pub submitted_at: f64,
}

impl TaskDescription {
    pub fn new(uid: impl Into<String>, kind: TaskKind, ranks_required: usize, payload: Vec<u8>) -> Self {
        Self {
            uid: uid.into(),
            kind,
            ranks_required,
            payload,
            submitted_at: 0.0,
        }
    }
}

/// Per-task timings in seconds, taken on task rank 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct OverheadBreakdown {
    pub t_deserialize: f64,
    pub t_comm_build: f64,
    pub t_deliver: f64,
    pub t_execute: f64,
}

impl OverheadBreakdown {
    pub fn overhead_total(&self) -> f64 {
        self.t_deserialize + self.t_comm_build + self.t_deliver
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskStatus {
    Done,
    Failed(String),
}

impl TaskStatus {
    pub fn is_done(&self) -> bool {
        *self == TaskStatus::Done
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub uid: String,
    pub kind: TaskKind,
    pub ranks: usize,
    pub status: TaskStatus,
    pub output: Vec<u8>,
    pub timings: OverheadBreakdown,
    /// Seconds since pilot start: dispatch time and last member report.
    pub started_at: f64,
    pub finished_at: f64,
    pub slots: Vec<usize>,
}
