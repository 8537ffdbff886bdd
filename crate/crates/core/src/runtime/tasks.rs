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


//! Kind-specific parameters, input decoding and task bodies.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::payload::PayloadView;
use super::{TaskKind, TAG_INFER_GATHER, TAG_TRAIN_TABLE};
use crate::bridge::{make_loader, Affine, Batch, DatasetView, LoaderConfig, SamplerSpec};
use crate::dist::{dist_gather_table, dist_join, dist_sort, GlobalTable};
use crate::fabric::Communicator;
use crate::learn::{
    data_parallel_train, decode_model, encode_model, evaluate, mean_predictor_mse, predict, LinearModel,
    MetricsReport, TrainConfig,
};
use crate::table::{decode_ipc, encode_ipc, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinParams {
    pub on: Vec<String>,
}

fn ascending_default() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortParams {
    pub keys: Vec<String>,
    #[serde(default = "ascending_default")]
    pub ascending: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub features: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub loader: LoaderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferParams {
    pub features: Vec<String>,
    pub label: String,
    #[serde(default)]
    pub transform: Option<Affine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleepParams {
    pub duration_ms: u64,
}

/// JSON output of an infer task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub rows: usize,
    pub metrics: MetricsReport,
    pub mean_predictor_mse: f64,
}

pub(crate) enum TaskInput {
    Join(JoinParams, Table, Table),
    Sort(SortParams, Table),
    Train(TrainParams, Table),
    Infer(InferParams, Table, LinearModel),
    Sleep(SleepParams),
}

fn params<T: serde::de::DeserializeOwned>(view: &PayloadView<'_>) -> Result<T, String> {
    serde_json::from_value(view.params.clone()).map_err(|e| format!("params: {e}"))
}

/// Decodes this rank's share of the payload.
pub(crate) fn decode_input(kind: TaskKind, payload: &[u8], rank: usize, size: usize) -> Result<TaskInput, String> {
    let view = PayloadView::parse(payload)?;
    Ok(match kind {
        TaskKind::Join => TaskInput::Join(
            params(&view)?,
            view.local_table("left", rank, size)?,
            view.local_table("right", rank, size)?,
        ),
        TaskKind::Sort => TaskInput::Sort(params(&view)?, view.local_table("input", rank, size)?),
        TaskKind::Train => TaskInput::Train(params(&view)?, view.local_table("input", rank, size)?),
        TaskKind::Infer => {
            let model = decode_model(view.blob("model")?).map_err(|e| e.to_string())?;
            TaskInput::Infer(params(&view)?, view.local_table("input", rank, size)?, model)
        }
        TaskKind::Sleep => TaskInput::Sleep(params(&view)?),
    })
}

fn gathered_ipc(gt: &GlobalTable<'_>) -> Result<Vec<u8>, String> {
    let t = dist_gather_table(gt, 0).map_err(|e| e.to_string())?;
    Ok(t.map(|t| encode_ipc(&t)).unwrap_or_default())
}

/// Runs the task body on the task communicator. Rank 0 returns the task
/// output; other ranks return an empty buffer.
pub(crate) fn run_body(comm: &Communicator, input: TaskInput) -> Result<Vec<u8>, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    match input {
        TaskInput::Join(p, left, right) => {
            let left = GlobalTable::new(comm, left).map_err(|e| err(&e))?;
            let right = GlobalTable::new(comm, right).map_err(|e| err(&e))?;
            let joined = dist_join(&left, &right, &p.on).map_err(|e| err(&e))?;
            gathered_ipc(&joined)
        }
        TaskInput::Sort(p, table) => {
            let gt = GlobalTable::new(comm, table).map_err(|e| err(&e))?;
            let sorted = dist_sort(&gt, &p.keys, p.ascending).map_err(|e| err(&e))?;
            gathered_ipc(&sorted)
        }
        TaskInput::Train(p, table) => train(comm, p, table),
        TaskInput::Infer(p, table, model) => infer(comm, p, table, model),
        TaskInput::Sleep(p) => {
            std::thread::sleep(Duration::from_millis(p.duration_ms));
            Ok(Vec::new())
        }
    }
}

/// Every rank reads the whole table through its sampler slice, so the
/// partitions are first replicated with gather + broadcast.
fn train(comm: &Communicator, p: TrainParams, local: Table) -> Result<Vec<u8>, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let gt = GlobalTable::new(comm, local).map_err(|e| err(&e))?;
    let gathered = dist_gather_table(&gt, 0).map_err(|e| err(&e))?;
    let bytes = comm
        .broadcast_with_tag(TAG_TRAIN_TABLE, 0, gathered.as_ref().map(encode_ipc))
        .map_err(|e| err(&e))?;
    let full = match gathered {
        Some(t) => t,
        None => decode_ipc(&bytes).map_err(|e| err(&e))?,
    };
    let n_rows = full.num_rows();
    let view = DatasetView::new(full, &p.features, &p.label).map_err(|e| err(&e))?;
    let spec = SamplerSpec {
        n_rows,
        world_size: comm.size(),
        rank: comm.rank(),
        shuffle: p.shuffle,
        seed: p.seed,
    };
    let mut loader = make_loader(view, spec, p.loader).map_err(|e| err(&e))?;
    let model = data_parallel_train(comm, &mut loader, &p.train).map_err(|e| err(&e))?;
    Ok(if comm.rank() == 0 { encode_model(&model) } else { Vec::new() })
}

fn infer(comm: &Communicator, p: InferParams, local: Table, model: LinearModel) -> Result<Vec<u8>, String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let gt = GlobalTable::new(comm, local).map_err(|e| err(&e))?;
    let view = Arc::new(DatasetView::new(gt.into_local(), &p.features, &p.label).map_err(|e| err(&e))?);
    let batch = Batch::from_indices(view.clone(), (0..view.num_rows()).collect(), p.transform);
    let y_hat = predict(&model, &batch).map_err(|e| err(&e))?;
    let mut pairs = Vec::with_capacity(16 * y_hat.len());
    for (i, yh) in y_hat.iter().enumerate() {
        pairs.extend_from_slice(&view.label(i).to_le_bytes());
        pairs.extend_from_slice(&yh.to_le_bytes());
    }
    let Some(all) = comm.gather_with_tag(TAG_INFER_GATHER, pairs, 0).map_err(|e| err(&e))? else {
        return Ok(Vec::new());
    };
    let mut y = Vec::new();
    let mut y_hat = Vec::new();
    for chunk in all.iter().flat_map(|b| b.chunks_exact(16)) {
        y.push(f64::from_le_bytes(chunk[..8].try_into().unwrap()));
        y_hat.push(f64::from_le_bytes(chunk[8..].try_into().unwrap()));
    }
    let out = InferOutput {
        rows: y.len(),
        metrics: evaluate(&y, &y_hat).map_err(|e| err(&e))?,
        mean_predictor_mse: mean_predictor_mse(&y).map_err(|e| err(&e))?,
    };
    Ok(serde_json::to_vec(&out).expect("infer output serializes"))
}
