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


use drc_core::fabric::Backend;
use drc_core::learn::{decode_model, encode_model, LinearModel};
use drc_core::rng::SplitMix64;
use drc_core::runtime::{
    collect_results, overhead_report, submit_pilot, InferOutput, PilotMode, PilotState, RuntimeError, TaskDescription,
    TaskKind, TaskPayload, TaskResult, TaskStatus,
};
use drc_core::table::{decode_ipc, local_hash_join, Column, DataType, Schema, Table};
use serde_json::json;

fn sleep_task(uid: &str, ranks: usize, ms: u64) -> TaskDescription {
    let payload = TaskPayload::new(json!({ "duration_ms": ms })).encode();
    TaskDescription::new(uid, TaskKind::Sleep, ranks, payload)
}

fn ints(v: Vec<i64>) -> Table {
    Table::try_new(Schema::of(&[("k", DataType::Int64)]).unwrap(), vec![Column::Int64(v)]).unwrap()
}

fn overlaps(a: &TaskResult, b: &TaskResult) -> bool {
    a.started_at < b.finished_at && b.started_at < a.finished_at
}

#[test]
fn pilot_lifecycle_and_probe() {
    assert_eq!(
        submit_pilot(0, Backend::InProcess, PilotMode::Batch).unwrap_err(),
        RuntimeError::NoSlots
    );
    let mut p = submit_pilot(1, Backend::InProcess, PilotMode::Batch).unwrap();
    assert_eq!(p.state(), PilotState::Active);
    assert!(p.probe().unwrap().status.is_done());
    p.shutdown();
    assert_eq!(p.state(), PilotState::Done);
    assert_eq!(p.submit_tasks(vec![sleep_task("x", 1, 0)]).unwrap_err(), RuntimeError::NotActive);

    let p = submit_pilot(4, Backend::Tcp, PilotMode::Pipelined).unwrap();
    let r = p.probe().unwrap();
    assert!(r.status.is_done(), "{:?}", r.status);
    assert_eq!(r.slots, vec![0, 1, 2, 3]);
}

#[test]
fn sleep_task_and_submit_validation() {
    let p = submit_pilot(2, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let h = p.submit_tasks(vec![sleep_task("s", 1, 50)]).unwrap();
    let r = h[0].wait();
    assert_eq!(r.status, TaskStatus::Done);
    assert!(r.timings.t_execute >= 0.05 && r.timings.t_execute < 0.5, "{:?}", r.timings);
    assert!(overhead_report(&[r]).makespan >= 0.05);

    assert_eq!(
        p.submit_tasks(vec![sleep_task("s", 1, 0)]).unwrap_err(),
        RuntimeError::DuplicateUid("s".into())
    );
    assert_eq!(
        p.submit_tasks(vec![sleep_task("d", 1, 0), sleep_task("d", 1, 0)]).unwrap_err(),
        RuntimeError::DuplicateUid("d".into())
    );
    assert!(matches!(p.submit_tasks(vec![sleep_task("z", 0, 0)]), Err(RuntimeError::ZeroRanks(_))));
    let big = p.submit_tasks(vec![sleep_task("big", 3, 0)]).unwrap();
    assert_eq!(big[0].wait().status, TaskStatus::Failed("insufficient slots".into()));
}

#[test]
fn sort_task_on_two_ranks() {
    let p = submit_pilot(2, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let payload = TaskPayload::new(json!({ "keys": ["k"] }))
        .with_table_parts("input", &[ints(vec![3, 1]), ints(vec![4, 2])])
        .encode();
    let h = p.submit_tasks(vec![TaskDescription::new("sort", TaskKind::Sort, 2, payload)]).unwrap();
    let r = h[0].wait();
    assert_eq!(r.status, TaskStatus::Done);
    assert_eq!(decode_ipc(&r.output).unwrap(), ints(vec![1, 2, 3, 4]));
}

#[test]
fn join_task_on_one_rank_equals_local_join() {
    let mut rng = SplitMix64::new(4);
    let l = ints((0..50).map(|_| rng.below(10) as i64).collect());
    let r = ints((0..40).map(|_| rng.below(10) as i64).collect());
    let expected = local_hash_join(&l, &r, &["k".to_string()]).unwrap();
    let payload = TaskPayload::new(json!({ "on": ["k"] }))
        .with_table("left", &l, 1)
        .with_table("right", &r, 1)
        .encode();
    let p = submit_pilot(1, Backend::InProcess, PilotMode::Batch).unwrap();
    let h = p.submit_tasks(vec![TaskDescription::new("j", TaskKind::Join, 1, payload)]).unwrap();
    let res = h[0].wait();
    assert!(res.status.is_done(), "{:?}", res.status);
    assert_eq!(decode_ipc(&res.output).unwrap(), expected);
}

#[test]
fn corrupt_payload_fails_without_leaking_slots() {
    let p = submit_pilot(2, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let mut payload = TaskPayload::new(json!({ "keys": ["k"] }))
        .with_table("input", &ints(vec![1, 2, 3]), 2)
        .encode();
    payload.truncate(payload.len() - 3);
    let bad_params = TaskPayload::new(json!({ "unknown": 1 })).encode();
    let hs = p
        .submit_tasks(vec![
            TaskDescription::new("bad", TaskKind::Sort, 2, payload),
            TaskDescription::new("bad-params", TaskKind::Sleep, 2, bad_params),
            TaskDescription::new("garbage", TaskKind::Join, 1, b"junk".to_vec()),
            sleep_task("after", 2, 10),
        ])
        .unwrap();
    for h in &hs[..3] {
        match h.wait().status {
            TaskStatus::Failed(reason) => assert!(reason.starts_with("decode"), "{reason}"),
            s => panic!("expected failure, got {s:?}"),
        }
    }
    let after = hs[3].wait();
    assert!(after.status.is_done());
    assert_eq!(after.slots, vec![0, 1]);
}

#[test]
fn body_failure_is_contained() {
    let p = submit_pilot(4, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let bad = TaskPayload::new(json!({ "keys": ["missing"] }))
        .with_table("input", &ints(vec![1, 2]), 2)
        .encode();
    let hs = p
        .submit_tasks(vec![
            sleep_task("a", 2, 30),
            TaskDescription::new("bad", TaskKind::Sort, 2, bad),
            sleep_task("c", 2, 30),
        ])
        .unwrap();
    let rs: Vec<TaskResult> = hs.iter().map(|h| h.wait()).collect();
    assert!(rs[0].status.is_done() && rs[2].status.is_done());
    assert!(matches!(&rs[1].status, TaskStatus::Failed(r) if r.contains("missing")));
}

#[test]
fn batch_intervals_disjoint_pipelined_overlap() {
    let tasks = || vec![sleep_task("a", 2, 60), sleep_task("b", 2, 60), sleep_task("c", 1, 20)];
    let batch = submit_pilot(4, Backend::InProcess, PilotMode::Batch).unwrap();
    let hs = batch.submit_tasks(tasks()).unwrap();
    let rb: Vec<TaskResult> = hs.iter().map(|h| h.wait()).collect();
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(!overlaps(&rb[i], &rb[j]), "batch tasks {i} and {j} overlap");
        }
        if i > 0 {
            assert!(rb[i].started_at >= rb[i - 1].finished_at);
        }
    }
    let piped = submit_pilot(4, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let hs = piped.submit_tasks(tasks()).unwrap();
    let rp: Vec<TaskResult> = hs.iter().map(|h| h.wait()).collect();
    assert!(overlaps(&rp[0], &rp[1]));
    assert!(rp[2].started_at >= rp[0].started_at);
    let mb = overhead_report(&rb).makespan;
    let mp = overhead_report(&rp).makespan;
    assert!(mp <= mb + 0.05, "pipelined {mp} vs batch {mb}");
}

#[test]
fn timings_are_populated_and_summed() {
    let p = submit_pilot(4, Backend::Tcp, PilotMode::Pipelined).unwrap();
    let hs = p.submit_tasks(vec![sleep_task("a", 4, 5), sleep_task("b", 1, 5)]).unwrap();
    for h in &hs {
        h.wait();
    }
    let results = collect_results(&hs).unwrap();
    let rep = overhead_report(&results);
    for (row, r) in rep.rows.iter().zip(&results) {
        let t = r.timings;
        assert!(t.t_deserialize > 0.0 && t.t_comm_build > 0.0 && t.t_deliver > 0.0 && t.t_execute > 0.0);
        assert_eq!(row.overhead_total, t.t_deserialize + t.t_comm_build + t.t_deliver);
        assert!(r.finished_at >= r.started_at);
    }
}

#[test]
fn unresolved_handles_are_reported() {
    let p = submit_pilot(1, Backend::InProcess, PilotMode::Batch).unwrap();
    let hs = p.submit_tasks(vec![sleep_task("slow", 1, 300)]).unwrap();
    assert_eq!(collect_results(&hs).unwrap_err(), RuntimeError::Unresolved("slow".into()));
    hs[0].wait();
    assert!(collect_results(&hs).is_ok());
}

fn regression_table(n: usize, seed: u64) -> Table {
    let mut rng = SplitMix64::new(seed);
    let x1: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x2: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 3.0 * a - 2.0 * b + 0.5 + 0.01 * rng.uniform(-1.0, 1.0)).collect();
    let schema = Schema::of(&[("x1", DataType::Float64), ("x2", DataType::Float64), ("y", DataType::Float64)]).unwrap();
    Table::try_new(schema, vec![Column::Float64(x1), Column::Float64(x2), Column::Float64(y)]).unwrap()
}

#[test]
fn train_then_infer_tasks() {
    let table = regression_table(400, 8);
    let p = submit_pilot(2, Backend::InProcess, PilotMode::Pipelined).unwrap();
    let train = TaskPayload::new(json!({
        "features": ["x1", "x2"], "label": "y",
        "loader": { "batch_size": 16, "loader_workers": 2 },
        "train": { "learning_rate": 0.1, "epochs": 5, "init_seed": 3 },
        "shuffle": true, "seed": 1
    }))
    .with_table("input", &table, 2)
    .encode();
    let h = p.submit_tasks(vec![TaskDescription::new("train", TaskKind::Train, 2, train)]).unwrap();
    let r = h[0].wait();
    assert!(r.status.is_done(), "{:?}", r.status);
    let model: LinearModel = decode_model(&r.output).unwrap();
    assert!((model.weights[0] - 3.0).abs() < 0.1, "{model:?}");

    let infer = TaskPayload::new(json!({ "features": ["x1", "x2"], "label": "y" }))
        .with_table("input", &table, 2)
        .with_blob("model", encode_model(&model))
        .encode();
    let h = p.submit_tasks(vec![TaskDescription::new("infer", TaskKind::Infer, 2, infer)]).unwrap();
    let r = h[0].wait();
    assert!(r.status.is_done(), "{:?}", r.status);
    let out: InferOutput = serde_json::from_slice(&r.output).unwrap();
    assert_eq!(out.rows, 400);
    assert!(out.metrics.mse < 0.1 * out.mean_predictor_mse, "{out:?}");
}
