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


use super::{BridgeError, Result};
use crate::rng::permutation;

/// Which slice of a dataset one rank reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerSpec {
    pub n_rows: usize,
    pub world_size: usize,
    pub rank: usize,
    pub shuffle: bool,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.world_size == 0 {
            return Err(BridgeError::ZeroWorld);
        }
        if self.rank >= self.world_size {
            return Err(BridgeError::InvalidRank {
                rank: self.rank,
                world_size: self.world_size,
            });
        }
        if self.n_rows == 0 {
            return Err(BridgeError::EmptyDataset);
        }
        Ok(())
    }

    /// Per-rank block length, `ceil(n_rows / world_size)`.
    pub fn block_len(&self) -> usize {
        self.n_rows.div_ceil(self.world_size)
    }
}

pub fn sampler_indices(spec: &SamplerSpec) -> Result<Vec<usize>> {
    sampler_indices_for_epoch(spec, 0)
}

/// Indices for `epoch`. With shuffling, the permutation is seeded by
/// `seed ^ epoch`; the order is padded to `L * P` with wrap-around and rank
/// `r` takes block `[r*L, (r+1)*L)`.
pub fn sampler_indices_for_epoch(spec: &SamplerSpec, epoch: u64) -> Result<Vec<usize>> {
    spec.validate()?;
    let n = spec.n_rows;
    let len = spec.block_len();
    let order = if spec.shuffle {
        permutation(n, spec.seed ^ epoch)
    } else {
        (0..n).collect()
    };
    let start = spec.rank * len;
    Ok((start..start + len).map(|p| order[p % n]).collect())
}
