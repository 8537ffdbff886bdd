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


//! Synthetic regression datasets and ready-to-run configs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use drc_core::rng::{permutation, SplitMix64};
use serde_json::{json, Value};

/// Ground-truth coefficients of the generated target.
pub const TRUE_WEIGHTS: [f64; 3] = [1.5, -2.0, 0.5];
pub const TRUE_BIAS: f64 = 0.3;
pub const NOISE: f64 = 0.05;

/// Writes `features.csv` (id, x1, x2, x3) and `labels.csv` (id, y) to `dir`.
/// The two files list ids in different orders so a join is needed to pair them.
pub fn write_regression_csvs(dir: &Path, rows: usize, seed: u64) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let mut rng = SplitMix64::new(seed);
    let xs: Vec<[f64; 3]> = (0..rows)
        .map(|_| [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)])
        .collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| {
            let lin: f64 = x.iter().zip(TRUE_WEIGHTS).map(|(a, w)| a * w).sum();
            lin + TRUE_BIAS + rng.uniform(-NOISE, NOISE)
        })
        .collect();

    let mut features = String::from("id,x1,x2,x3\n");
    for i in permutation(rows, seed ^ 0xfeed) {
        let x = xs[i];
        writeln!(features, "{i},{},{},{}", x[0], x[1], x[2]).expect("string write");
    }
    let mut labels = String::from("id,y\n");
    for i in permutation(rows, seed ^ 0xbeef) {
        writeln!(labels, "{i},{}", ys[i]).expect("string write");
    }
    let f = dir.join("features.csv");
    let l = dir.join("labels.csv");
    std::fs::write(&f, features)?;
    std::fs::write(&l, labels)?;
    Ok((f, l))
}

/// join -> train -> infer over the files from [`write_regression_csvs`].
/// Paths in the config are relative to `dir`.
pub fn regression_config(slots: usize, ranks: usize, seed: u64) -> Value {
    json!({
        "pilot": { "slots": slots, "backend": "inproc", "mode": "pipelined" },
        "datasets": [
            { "name": "features", "csv_path": "features.csv", "schema": [
                { "name": "id", "dtype": "int64" },
                { "name": "x1", "dtype": "float64" },
                { "name": "x2", "dtype": "float64" },
                { "name": "x3", "dtype": "float64" }
            ] },
            { "name": "labels", "csv_path": "labels.csv", "schema": [
                { "name": "id", "dtype": "int64" },
                { "name": "y", "dtype": "float64" }
            ] }
        ],
        "tasks": [
            { "uid": "join", "kind": "join", "ranks": ranks,
              "params": { "on": ["id"] },
              "inputs": { "left": "features", "right": "labels" } },
            { "uid": "train", "kind": "train", "ranks": ranks,
              "params": {
                  "features": ["x1", "x2", "x3"], "label": "y", "shuffle": true,
                  "loader": { "batch_size": 64, "prefetch_depth": 2, "loader_workers": 1 },
                  "train": { "learning_rate": 0.1, "epochs": 4 }
              },
              "inputs": { "input": "join" } },
            { "uid": "infer", "kind": "infer", "ranks": ranks,
              "params": { "features": ["x1", "x2", "x3"], "label": "y" },
              "inputs": { "input": "join", "model": "train" } }
        ],
        "seed": seed,
        "report_path": "report.json"
    })
}

/// Independent sleep tasks with no datasets.
pub fn sleep_config(slots: usize, tasks: &[(usize, u64)]) -> Value {
    let tasks: Vec<Value> = tasks
        .iter()
        .enumerate()
        .map(|(i, (ranks, ms))| {
            json!({ "uid": format!("sleep{i}"), "kind": "sleep", "ranks": ranks,
                    "params": { "duration_ms": ms }, "inputs": {} })
        })
        .collect();
    json!({ "pilot": { "slots": slots }, "datasets": [], "tasks": tasks, "seed": 0 })
}

/// CSVs plus `pipeline.json` in `dir`; returns the config path.
pub fn write_regression_example(dir: &Path, rows: usize, slots: usize, seed: u64) -> std::io::Result<PathBuf> {
    write_regression_csvs(dir, rows, seed)?;
    let path = dir.join("pipeline.json");
    let text = serde_json::to_string_pretty(&regression_config(slots, slots, seed)).expect("config serializes");
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}
