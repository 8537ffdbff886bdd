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

mod common;

use std::collections::HashSet;
use std::sync::Arc;

use common::run_world;
use drc_core::bridge::{
    make_loader, sampler_indices, Batch, DatasetView, FeatureMatrix, LabeledBatch, LoaderConfig, SamplerSpec,
};
use drc_core::fabric::Backend;
use drc_core::learn::{
    data_parallel_train, data_parallel_train_with, evaluate, predict, sgd_step, DenseBatch, LinearModel, TrainConfig,
};
use drc_core::rng::SplitMix64;
use drc_core::table::{Column, DataType, Schema, Table};

fn dataset(n: usize, f: usize, seed: u64) -> DatasetView {
    let mut rng = SplitMix64::new(seed);
    let mut fields: Vec<(String, DataType)> = (0..f).map(|k| (format!("x{k}"), DataType::Float64)).collect();
    fields.push(("y".into(), DataType::Float64));
    let cols: Vec<Vec<f64>> = (0..f).map(|_| (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| cols.iter().enumerate().map(|(k, c)| (k as f64 + 1.0) * c[i]).sum::<f64>() + rng.uniform(-0.05, 0.05))
        .collect();
    let names: Vec<(&str, DataType)> = fields.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    let mut columns: Vec<Column> = cols.into_iter().map(Column::Float64).collect();
    columns.push(Column::Float64(y));
    let t = Table::try_new(Schema::of(&names).unwrap(), columns).unwrap();
    let feats: Vec<String> = (0..f).map(|k| format!("x{k}")).collect();
    DatasetView::new(t, &feats, "y").unwrap()
}

#[test]
fn sampler_shuffled_blocks_partition_the_rows() {
    let blocks: Vec<Vec<usize>> = (0..4)
        .map(|rank| {
            sampler_indices(&SamplerSpec {
                n_rows: 1000,
                world_size: 4,
                rank,
                shuffle: true,
                seed: 7,
            })
            .unwrap()
        })
        .collect();
    let mut all = HashSet::new();
    for b in &blocks {
        assert_eq!(b.len(), 250);
        for &i in b {
            assert!(all.insert(i), "index {i} appears twice");
        }
    }
    assert_eq!(all.len(), 1000);
}

#[test]
fn loader_matches_table_cells_for_any_worker_count() {
    let view = Arc::new(dataset(97, 3, 1));
    let spec = SamplerSpec {
        n_rows: 97,
        world_size: 2,
        rank: 1,
        shuffle: true,
        seed: 5,
    };
    let run = |workers, depth| {
        let cfg = LoaderConfig {
            batch_size: 8,
            loader_workers: workers,
            prefetch_depth: depth,
            ..LoaderConfig::default()
        };
        let loader = make_loader(view.clone(), spec, cfg).unwrap();
        loader.map(|b| b.global_indices().to_vec()).collect::<Vec<_>>()
    };
    let reference = run(1, 0);
    assert_eq!(reference.concat(), sampler_indices(&spec).unwrap());
    assert_eq!(run(4, 2), reference);
    assert_eq!(run(3, 5), reference);

    let mut loader = make_loader(view.clone(), spec, LoaderConfig::default()).unwrap();
    let b = loader.next_batch().unwrap();
    let t = view.table();
    for (j, &g) in b.global_indices().iter().enumerate() {
        for k in 0..3 {
            let col = t.column_by_name(&format!("x{k}")).unwrap().as_f64().unwrap();
            assert_eq!(b.feature(j, k), col[g]);
        }
        assert_eq!(b.label(j), t.column_by_name("y").unwrap().as_f64().unwrap()[g]);
    }
}

#[test]
fn predict_matches_dot_product() {
    let mut rng = SplitMix64::new(2);
    let m = LinearModel::init(4, 0, 9);
    let x: Vec<f64> = (0..40).map(|_| rng.uniform(-5.0, 5.0)).collect();
    let batch = DenseBatch::new(4, x.clone(), vec![0.0; 10]);
    let got = predict(&m, &batch).unwrap();
    for i in 0..10 {
        let dot: f64 = (0..4).map(|k| m.weights[k] * x[i * 4 + k]).sum::<f64>() + m.bias;
        assert!((got[i] - dot).abs() <= 1e-12);
    }
    assert!(predict(&LinearModel::zeros(3), &batch).is_err());
}

#[test]
fn metrics_fixture() {
    let m = evaluate(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
    assert_eq!((m.mae, m.mse, m.mape_percent), (1.5, 2.5, 100.0));
}

#[test]
fn single_rank_training_equals_sequential_steps() {
    let view = Arc::new(dataset(64, 2, 3));
    let spec = SamplerSpec {
        n_rows: 64,
        world_size: 1,
        rank: 0,
        shuffle: false,
        seed: 0,
    };
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 2,
        init_seed: 4,
        hidden_units: 3,
    };
    let lc = LoaderConfig {
        batch_size: 10,
        ..LoaderConfig::default()
    };
    let mut expected = LinearModel::init(2, 3, 4);
    for _ in 0..2 {
        for b in make_loader(view.clone(), spec, lc).unwrap() {
            expected = sgd_step(&expected, &b, 0.05).unwrap();
        }
    }
    let v = view.clone();
    let got = run_world(Backend::InProcess, 1, move |c| {
        let mut loader = make_loader(v.clone(), spec, lc).unwrap();
        data_parallel_train(&c, &mut loader, &cfg).unwrap()
    });
    assert_eq!(got[0], expected);
}

#[test]
fn zero_learning_rate_keeps_init_and_replicas_agree() {
    let view = Arc::new(dataset(50, 2, 6));
    let models = run_world(Backend::Tcp, 3, move |c| {
        let spec = SamplerSpec {
            n_rows: 50,
            world_size: 3,
            rank: c.rank(),
            shuffle: true,
            seed: 1,
        };
        let mut loader = make_loader(view.clone(), spec, LoaderConfig::default()).unwrap();
        let zero = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            init_seed: 8,
            hidden_units: 2,
        };
        let frozen = data_parallel_train(&c, &mut loader, &zero).unwrap();
        let mut loader = make_loader(view.clone(), spec, LoaderConfig::default()).unwrap();
        let mut steps = 0;
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..zero
        };
        let trained = data_parallel_train_with(&c, &mut loader, &cfg, |_, _| steps += 1).unwrap();
        (frozen, trained, steps)
    });
    for (frozen, trained, steps) in &models {
        assert_eq!(*frozen, LinearModel::init(2, 2, 8));
        assert_eq!(trained.params(), models[0].1.params());
        assert_eq!(*steps, 1);
    }
}

#[test]
fn batch_views_support_merged_oracle_batches() {
    let view = Arc::new(dataset(10, 1, 0));
    let merged = Batch::from_indices(view.clone(), vec![0, 1, 5, 6], None);
    assert_eq!(merged.num_rows(), 4);
    assert_eq!(merged.feature(2, 0), view.feature(5, 0));
}
