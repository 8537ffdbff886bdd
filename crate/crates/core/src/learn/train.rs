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


use super::{LearnError, LinearModel, Result};
use crate::bridge::BatchLoader;
use crate::fabric::{Communicator, ReduceOp};

/// Tag for gradient allreduce; disjoint from the table operators' tags.
pub const TAG_GRADIENT: u64 = 0x0300;
const TAG_STEPS: u64 = 0x0301;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_seed: u64,
    /// Width of the tanh hidden layer; 0 trains a linear model.
    pub hidden_units: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 1,
            init_seed: 0,
            hidden_units: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(LearnError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(LearnError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn data_parallel_train(comm: &Communicator, loader: &mut BatchLoader, cfg: &TrainConfig) -> Result<LinearModel> {
    data_parallel_train_with(comm, loader, cfg, |_, _| {})
}

/// Collective SGD: every step allreduces the local batch gradient, divides by
/// the world size and applies the same update on every rank. `on_step` sees
/// the model after each update.
pub fn data_parallel_train_with(
    comm: &Communicator,
    loader: &mut BatchLoader,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &LinearModel),
) -> Result<LinearModel> {
    cfg.validate()?;
    let mut model = LinearModel::init(loader.view().num_features(), cfg.hidden_units, cfg.init_seed);
    let world = comm.size() as f64;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            loader.reset()?;
        }
        let nb = loader.num_batches() as f64;
        let agreed = comm.allreduce_f64_with_tag(TAG_STEPS, &[nb, -nb], ReduceOp::Max)?;
        if agreed[0] != -agreed[1] {
            return Err(LearnError::InvalidConfig(format!(
                "ranks disagree on batches per epoch (max {}, min {})",
                agreed[0], -agreed[1]
            )));
        }
        while let Some(batch) = loader.next_batch() {
            let local = model.gradient(&batch)?;
            let mut grad = comm.allreduce_f64_with_tag(TAG_GRADIENT, &local, ReduceOp::Sum)?;
            for g in &mut grad {
                *g /= world;
            }
            model.apply_gradient(&grad, cfg.learning_rate)?;
            step += 1;
            on_step(step, &model);
        }
        log::debug!("rank {} finished epoch {epoch} after {step} steps", comm.rank());
    }
    Ok(model)
}
