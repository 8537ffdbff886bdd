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

//! Pilot-style task runtime with distributed table operators.
//!
//! * [`table`]: immutable columnar tables, CSV ingestion, binary encoding and
//!   local operators.
//! * [`fabric`]: ranked communicators over in-process or TCP transports.
//! * [`dist`]: shuffle, distributed hash join, sample sort and gather.
//! * [`bridge`]: distributed sampler and zero-copy batch loader.
//! * [`learn`]: linear/MLP model, SGD with gradient allreduce, metrics.
//! * [`runtime`]: pilot, task manager, scheduler and executor daemons.

pub mod bridge;
pub mod dist;
pub mod fabric;
pub mod learn;
pub mod rng;
pub mod runtime;
pub mod table;
