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


//! Pipeline configuration file.
//!
//! ```json
//! {
//!   "pilot": { "slots": 2, "backend": "inproc", "mode": "pipelined" },
//!   "datasets": [
//!     { "name": "events", "csv_path": "events.csv",
//!       "schema": [{ "name": "id", "dtype": "int64" }, { "name": "x", "dtype": "float64" }] }
//!   ],
//!   "tasks": [
//!     { "uid": "j", "kind": "join", "ranks": 2, "params": { "on": ["id"] },
//!       "inputs": { "left": "events", "right": "labels" } }
//!   ],
//!   "seed": 42,
//!   "report_path": "report.json"
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory. Task inputs
//! name a dataset or an earlier task.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use drc_core::fabric::Backend;
use drc_core::runtime::{PilotMode, TaskKind};
use drc_core::table::Field;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    pub slots: usize,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_mode")]
    pub mode: PilotMode,
}

fn default_backend() -> Backend {
    Backend::InProcess
}

fn default_mode() -> PilotMode {
    PilotMode::Pipelined
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub csv_path: PathBuf,
    pub schema: Vec<Field>,
    #[serde(default = "yes")]
    pub has_header: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub uid: String,
    pub kind: String,
    pub ranks: usize,
    #[serde(default)]
    pub params: serde_json::Value,
    /// Input slot name -> dataset name or earlier task uid.
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub pilot: PilotConfig,
    #[serde(default)]
    pub datasets: Vec<DatasetConfig>,
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub report_path: Option<PathBuf>,
}

/// A task input after reference resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputRef {
    Dataset(usize),
    Task(usize),
}

/// Validated task: kind parsed and inputs resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedTask {
    pub uid: String,
    pub kind: TaskKind,
    pub ranks: usize,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, InputRef>,
}

/// Input slots each kind takes, and whether each expects a table.
fn slots_for(kind: TaskKind) -> &'static [(&'static str, bool)] {
    match kind {
        TaskKind::Join => &[("left", true), ("right", true)],
        TaskKind::Sort | TaskKind::Train => &[("input", true)],
        TaskKind::Infer => &[("input", true), ("model", false)],
        TaskKind::Sleep => &[],
    }
}

/// Whether a task of `kind` produces a table (as opposed to a model or
/// nothing).
pub fn produces_table(kind: TaskKind) -> bool {
    matches!(kind, TaskKind::Join | TaskKind::Sort)
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config parse error: {e}"))
    }

    /// Reads `path` and makes dataset and report paths absolute.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if d.csv_path.is_relative() {
                d.csv_path = base.join(&d.csv_path);
            }
        }
        if let Some(r) = &mut cfg.report_path {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
        Ok(cfg)
    }

    /// Checks the invariants and resolves task inputs.
    pub fn resolve(&self) -> Result<Vec<ResolvedTask>, String> {
        if self.pilot.slots == 0 {
            return Err("pilot.slots must be at least 1".into());
        }
        if !matches!(self.pilot.backend, Backend::InProcess | Backend::Tcp) {
            return Err(format!("backend {:?} is not available; use inproc or tcp", self.pilot.backend));
        }
        let mut datasets = HashMap::new();
        for (i, d) in self.datasets.iter().enumerate() {
            if datasets.insert(d.name.as_str(), i).is_some() {
                return Err(format!("duplicate dataset `{}`", d.name));
            }
        }
        let mut earlier: HashMap<&str, (usize, TaskKind)> = HashMap::new();
        let mut out = Vec::with_capacity(self.tasks.len());
        let mut seen = HashSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !seen.insert(t.uid.as_str()) {
                return Err(format!("duplicate task uid `{}`", t.uid));
            }
            let kind: TaskKind = t.kind.parse().map_err(|e| format!("task `{}`: {e}", t.uid))?;
            if t.ranks == 0 {
                return Err(format!("task `{}`: ranks must be at least 1", t.uid));
            }
            let expected = slots_for(kind);
            for name in t.inputs.keys() {
                if !expected.iter().any(|(n, _)| n == name) {
                    return Err(format!("task `{}`: unexpected input `{name}` for kind {kind}", t.uid));
                }
            }
            let mut inputs = BTreeMap::new();
            for &(slot, wants_table) in expected {
                let Some(reference) = t.inputs.get(slot) else {
                    return Err(format!("task `{}`: missing input `{slot}`", t.uid));
                };
                let resolved = if let Some(&(j, up)) = earlier.get(reference.as_str()) {
                    let ok = if wants_table { produces_table(up) } else { up == TaskKind::Train };
                    if !ok {
                        return Err(format!(
                            "task `{}`: input `{slot}` cannot come from {up} task `{reference}`",
                            t.uid
                        ));
                    }
                    InputRef::Task(j)
                } else if let Some(&d) = datasets.get(reference.as_str()) {
                    if !wants_table {
                        return Err(format!("task `{}`: input `{slot}` must be a train task", t.uid));
                    }
                    InputRef::Dataset(d)
                } else {
                    return Err(format!(
                        "task `{}`: input `{slot}` refers to unknown dataset or earlier task `{reference}`",
                        t.uid
                    ));
                };
                inputs.insert(slot.to_string(), resolved);
            }
            earlier.insert(t.uid.as_str(), (i, kind));
            out.push(ResolvedTask {
                uid: t.uid.clone(),
                kind,
                ranks: t.ranks,
                params: t.params.clone(),
                inputs,
            });
        }
        Ok(out)
    }
}
