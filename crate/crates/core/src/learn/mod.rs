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


//! Linear regressor with an optional tanh hidden layer, trained by SGD on
//! mean squared error.
//!
//! The model computes `y = w.x + b + sum_h v_h * tanh(W_h.x + c_h)`; without a
//! hidden layer it is plain linear regression.

mod metrics;
mod model_codec;
mod train;

use crate::bridge::{FeatureMatrix, LabeledBatch};
use crate::fabric::FabricError;
use crate::rng::SplitMix64;

pub use self::metrics::{evaluate, mean_predictor_mse, MetricsReport};
pub use self::model_codec::{decode_model, encode_model, MODEL_MAGIC};
pub use self::train::{data_parallel_train, data_parallel_train_with, TrainConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("model has {model} features, input has {input}")]
    WidthMismatch { model: usize, input: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameters became non-finite")]
    NonFinite,
    #[error("{0}")]
    Metrics(String),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("model decode: {0}")]
    Decode(String),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Bridge(#[from] crate::bridge::BridgeError),
}

pub type Result<T, E = LearnError> = std::result::Result<T, E>;

/// Hidden layer: `w` is H x F row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Hidden {
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
}

impl Hidden {
    pub fn units(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hidden: Option<Hidden>,
}

impl LinearModel {
    pub fn zeros(num_features: usize) -> Self {
        Self {
            weights: vec![0.0; num_features],
            bias: 0.0,
            hidden: None,
        }
    }

    /// Uniform[-0.1, 0.1] init from `SplitMix64(seed)`, drawn in order
    /// weights, bias, W, c, v. `hidden_units == 0` gives the linear model.
    pub fn init(num_features: usize, hidden_units: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.uniform(-0.1, 0.1)).collect::<Vec<_>>();
        let weights = draw(num_features);
        let bias = draw(1)[0];
        let hidden = (hidden_units > 0).then(|| Hidden {
            w: draw(hidden_units * num_features),
            c: draw(hidden_units),
            v: draw(hidden_units),
        });
        Self { weights, bias, hidden }
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        let f = self.num_features();
        f + 1 + self.hidden.as_ref().map_or(0, |h| h.units() * (f + 2))
    }

    /// Flattened parameters: weights, bias, then W, c, v.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        if let Some(h) = &self.hidden {
            p.extend_from_slice(&h.w);
            p.extend_from_slice(&h.c);
            p.extend_from_slice(&h.v);
        }
        p
    }

    /// Inverse of [`params`](Self::params). Panics on a length mismatch.
    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let f = self.num_features();
        self.weights.copy_from_slice(&p[..f]);
        self.bias = p[f];
        if let Some(h) = &mut self.hidden {
            let hf = h.w.len();
            let u = h.c.len();
            let rest = &p[f + 1..];
            h.w.copy_from_slice(&rest[..hf]);
            h.c.copy_from_slice(&rest[hf..hf + u]);
            h.v.copy_from_slice(&rest[hf + u..]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|x| x.is_finite())
    }

    fn check_width(&self, x: &dyn FeatureMatrix) -> Result<()> {
        if x.num_features() != self.num_features() {
            return Err(LearnError::WidthMismatch {
                model: self.num_features(),
                input: x.num_features(),
            });
        }
        Ok(())
    }

    fn forward_row(&self, x: &dyn FeatureMatrix, i: usize, acts: &mut [f64]) -> f64 {
        let f = self.num_features();
        let mut y = self.bias;
        for k in 0..f {
            y += self.weights[k] * x.feature(i, k);
        }
        if let Some(h) = &self.hidden {
            for (u, a) in acts.iter_mut().enumerate() {
                let row = &h.w[u * f..(u + 1) * f];
                let mut z = h.c[u];
                for k in 0..f {
                    z += row[k] * x.feature(i, k);
                }
                *a = z.tanh();
                y += h.v[u] * *a;
            }
        }
        y
    }

    /// Mean squared error over the batch.
    pub fn loss(&self, batch: &dyn LabeledBatch) -> Result<f64> {
        self.check_width(batch)?;
        let n = batch.num_rows();
        if n == 0 {
            return Err(LearnError::EmptyBatch);
        }
        let mut acts = vec![0.0; self.hidden.as_ref().map_or(0, Hidden::units)];
        let mut sum = 0.0;
        for i in 0..n {
            let r = self.forward_row(batch, i, &mut acts) - batch.label(i);
            sum += r * r;
        }
        Ok(sum / n as f64)
    }

    /// Gradient of the batch MSE, flattened like [`params`](Self::params).
    pub fn gradient(&self, batch: &dyn LabeledBatch) -> Result<Vec<f64>> {
        self.check_width(batch)?;
        let n = batch.num_rows();
        if n == 0 {
            return Err(LearnError::EmptyBatch);
        }
        let f = self.num_features();
        let units = self.hidden.as_ref().map_or(0, Hidden::units);
        let mut g = vec![0.0; self.num_params()];
        let mut acts = vec![0.0; units];
        let scale = 2.0 / n as f64;
        for i in 0..n {
            let dy = scale * (self.forward_row(batch, i, &mut acts) - batch.label(i));
            for k in 0..f {
                g[k] += dy * batch.feature(i, k);
            }
            g[f] += dy;
            if let Some(h) = &self.hidden {
                let (gw, rest) = g[f + 1..].split_at_mut(units * f);
                let (gc, gv) = rest.split_at_mut(units);
                for u in 0..units {
                    gv[u] += dy * acts[u];
                    let dz = dy * h.v[u] * (1.0 - acts[u] * acts[u]);
                    gc[u] += dz;
                    for k in 0..f {
                        gw[u * f + k] += dz * batch.feature(i, k);
                    }
                }
            }
        }
        Ok(g)
    }

    /// `params -= lr * grad`, rejecting non-finite results.
    pub fn apply_gradient(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        let mut p = self.params();
        for (x, g) in p.iter_mut().zip(grad) {
            *x -= lr * g;
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(LearnError::NonFinite);
        }
        self.set_params(&p);
        Ok(())
    }
}

pub fn sgd_step(model: &LinearModel, batch: &dyn LabeledBatch, lr: f64) -> Result<LinearModel> {
    let grad = model.gradient(batch)?;
    let mut next = model.clone();
    next.apply_gradient(&grad, lr)?;
    Ok(next)
}

pub fn predict(model: &LinearModel, features: &dyn FeatureMatrix) -> Result<Vec<f64>> {
    model.check_width(features)?;
    let mut acts = vec![0.0; model.hidden.as_ref().map_or(0, Hidden::units)];
    Ok((0..features.num_rows())
        .map(|i| model.forward_row(features, i, &mut acts))
        .collect())
}

/// Owned row-major batch, for inputs that do not come from a table.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBatch {
    pub num_features: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

impl DenseBatch {
    pub fn new(num_features: usize, features: Vec<f64>, labels: Vec<f64>) -> Self {
        assert_eq!(features.len(), num_features * labels.len(), "feature buffer size");
        Self {
            num_features,
            features,
            labels,
        }
    }
}

impl FeatureMatrix for DenseBatch {
    fn num_rows(&self) -> usize {
        self.labels.len()
    }

    fn num_features(&self) -> usize {
        self.num_features
    }

    fn feature(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.num_features + col]
    }
}

impl LabeledBatch for DenseBatch {
    fn label(&self, row: usize) -> f64 {
        self.labels[row]
    }
}
