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


//! Bridge from table partitions to training batches.
//!
//! A [`BatchLoader`] walks this rank's [`sampler_indices`] in order and hands
//! out [`Batch`] views. A batch holds only row indices and a shared handle on
//! the [`DatasetView`]; feature and label values are read from column storage
//! on access.

mod loader;
mod sampler;

use std::sync::Arc;

use crate::table::{DataType, Table, TableError};

pub use self::loader::{make_loader, BatchLoader, LoaderConfig, LoaderStats};
pub use self::sampler::{sampler_indices, sampler_indices_for_epoch, SamplerSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BridgeError {
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error("world size must be at least 1")]
    ZeroWorld,
    #[error("rank {rank} out of range for world size {world_size}")]
    InvalidRank { rank: usize, world_size: usize },
    #[error("column `{name}` is {dtype}, expected float64")]
    NotFloat64 { name: String, dtype: DataType },
    #[error("column `{0}` is both a feature and the label")]
    LabelIsFeature(String),
    #[error("no feature columns")]
    NoFeatures,
    #[error("sampler expects {spec} rows but the table has {table}")]
    RowCountMismatch { spec: usize, table: usize },
    #[error("invalid loader config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

pub type Result<T, E = BridgeError> = std::result::Result<T, E>;

/// Read-only access to a row-major grid of feature values.
pub trait FeatureMatrix {
    fn num_rows(&self) -> usize;
    fn num_features(&self) -> usize;
    fn feature(&self, row: usize, col: usize) -> f64;
}

/// A feature matrix with one target per row.
pub trait LabeledBatch: FeatureMatrix {
    fn label(&self, row: usize) -> f64;
}

/// Per-feature transform `scale * x + offset`, applied when a value is read.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

/// A table together with the Float64 columns used as features and label.
#[derive(Debug)]
pub struct DatasetView {
    table: Table,
    feature_names: Vec<String>,
    label_name: String,
    feature_idx: Vec<usize>,
    label_idx: usize,
}

fn float_column(table: &Table, name: &str) -> Result<usize> {
    let field = table.schema().field(name)?;
    if field.dtype != DataType::Float64 {
        return Err(BridgeError::NotFloat64 {
            name: name.to_string(),
            dtype: field.dtype,
        });
    }
    Ok(table.schema().index_of(name).expect("field exists"))
}

impl DatasetView {
    pub fn new(table: Table, feature_columns: &[String], label_column: &str) -> Result<Self> {
        if feature_columns.is_empty() {
            return Err(BridgeError::NoFeatures);
        }
        if feature_columns.iter().any(|f| f == label_column) {
            return Err(BridgeError::LabelIsFeature(label_column.to_string()));
        }
        let feature_idx = feature_columns
            .iter()
            .map(|n| float_column(&table, n))
            .collect::<Result<Vec<_>>>()?;
        let label_idx = float_column(&table, label_column)?;
        Ok(Self {
            table,
            feature_names: feature_columns.to_vec(),
            label_name: label_column.to_string(),
            feature_idx,
            label_idx,
        })
    }

    pub fn table(&self) -> &Table {
        &self.table
    }

    pub fn feature_columns(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_column(&self) -> &str {
        &self.label_name
    }

    pub fn num_rows(&self) -> usize {
        self.table.num_rows()
    }

    pub fn num_features(&self) -> usize {
        self.feature_idx.len()
    }

    fn f64_at(&self, col: usize, row: usize) -> f64 {
        self.table.column(col).as_f64().expect("validated float64 column")[row]
    }

    /// Raw (untransformed) feature cell.
    pub fn feature(&self, row: usize, k: usize) -> f64 {
        self.f64_at(self.feature_idx[k], row)
    }

    pub fn label(&self, row: usize) -> f64 {
        self.f64_at(self.label_idx, row)
    }
}

impl FeatureMatrix for DatasetView {
    fn num_rows(&self) -> usize {
        self.table.num_rows()
    }

    fn num_features(&self) -> usize {
        self.feature_idx.len()
    }

    fn feature(&self, row: usize, col: usize) -> f64 {
        DatasetView::feature(self, row, col)
    }
}

impl LabeledBatch for DatasetView {
    fn label(&self, row: usize) -> f64 {
        DatasetView::label(self, row)
    }
}

/// A batch view: row `i` of the batch is table row `global_indices()[i]`.
#[derive(Debug, Clone)]
pub struct Batch {
    view: Arc<DatasetView>,
    indices: Arc<[usize]>,
    transform: Option<Affine>,
    stats: Option<Arc<loader::Counters>>,
}

impl Batch {
    /// Builds a view over arbitrary rows of `view`. Panics if an index is out
    /// of range.
    pub fn from_indices(view: Arc<DatasetView>, indices: Vec<usize>, transform: Option<Affine>) -> Self {
        let n = view.num_rows();
        assert!(indices.iter().all(|&i| i < n), "batch index out of range");
        Self {
            view,
            indices: indices.into(),
            transform,
            stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn global_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn view(&self) -> &Arc<DatasetView> {
        &self.view
    }

    /// Copies the batch's features into `out` (row-major). This is the only
    /// path that copies column data; loaders count the bytes it moves.
    pub fn copy_features_into(&self, out: &mut Vec<f64>) {
        let before = out.len();
        for i in 0..self.len() {
            for k in 0..self.view.num_features() {
                out.push(FeatureMatrix::feature(self, i, k));
            }
        }
        if let Some(stats) = &self.stats {
            stats.add_copied(((out.len() - before) * std::mem::size_of::<f64>()) as u64);
        }
    }
}

impl FeatureMatrix for Batch {
    fn num_rows(&self) -> usize {
        self.indices.len()
    }

    fn num_features(&self) -> usize {
        self.view.num_features()
    }

    fn feature(&self, row: usize, col: usize) -> f64 {
        let x = self.view.feature(self.indices[row], col);
        match self.transform {
            Some(a) => a.scale * x + a.offset,
            None => x,
        }
    }
}

impl LabeledBatch for Batch {
    fn label(&self, row: usize) -> f64 {
        self.view.label(self.indices[row])
    }
}
