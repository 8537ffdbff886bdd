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


use std::collections::BTreeMap;
use std::mem::size_of;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use super::{sampler_indices_for_epoch, Affine, Batch, BridgeError, DatasetView, Result, SamplerSpec};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoaderConfig {
    pub batch_size: usize,
    pub drop_last: bool,
    pub prefetch_depth: usize,
    pub loader_workers: usize,
    pub transform: Option<Affine>,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            drop_last: false,
            prefetch_depth: 2,
            loader_workers: 1,
            transform: None,
        }
    }
}

impl LoaderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(BridgeError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.loader_workers == 0 {
            return Err(BridgeError::InvalidConfig("loader_workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Instrumentation shared by a loader, its workers and the batches it hands out.
#[derive(Debug, Default)]
pub(crate) struct Counters {
    bookkeeping_bytes: AtomicU64,
    copied_column_bytes: AtomicU64,
    batches: AtomicU64,
    peak_in_flight: AtomicUsize,
}

impl Counters {
    pub(crate) fn add_copied(&self, bytes: u64) {
        self.copied_column_bytes.fetch_add(bytes, Ordering::Relaxed);
    }
}

/// Snapshot of a loader's allocation counters since the last reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoaderStats {
    /// Bytes allocated for per-batch index slices and view headers.
    pub bookkeeping_bytes: u64,
    /// Bytes of feature or label values copied out of column storage.
    pub copied_column_bytes: u64,
    pub batches_staged: u64,
    /// Largest number of batches staged but not yet returned.
    pub peak_in_flight: usize,
}

struct EpochPlan {
    indices: Vec<usize>,
    batches: Vec<Range<usize>>,
}

impl EpochPlan {
    fn new(indices: Vec<usize>, cfg: &LoaderConfig) -> Self {
        let n = indices.len();
        let mut batches = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            if end - start < cfg.batch_size && cfg.drop_last {
                break;
            }
            batches.push(start..end);
            start = end;
        }
        Self { indices, batches }
    }
}

#[derive(Default)]
struct State {
    next_ticket: usize,
    delivered: usize,
    consumer_waiting: bool,
    ready: BTreeMap<usize, Batch>,
    shutdown: bool,
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
}

/// Prefetching batch iterator over one rank's sampler slice.
///
/// Workers take batch tickets in order and stage at most
/// `prefetch_depth` batches ahead of the consumer (plus the one it is
/// waiting on). Batches come out in ticket order.
pub struct BatchLoader {
    view: Arc<DatasetView>,
    spec: SamplerSpec,
    cfg: LoaderConfig,
    epoch: u64,
    plan: Arc<EpochPlan>,
    shared: Arc<Shared>,
    counters: Arc<Counters>,
    workers: Vec<JoinHandle<()>>,
}

pub fn make_loader(view: impl Into<Arc<DatasetView>>, spec: SamplerSpec, cfg: LoaderConfig) -> Result<BatchLoader> {
    let view = view.into();
    cfg.validate()?;
    spec.validate()?;
    if spec.n_rows != view.num_rows() {
        return Err(BridgeError::RowCountMismatch {
            spec: spec.n_rows,
            table: view.num_rows(),
        });
    }
    let mut loader = BatchLoader {
        view,
        spec,
        cfg,
        epoch: 0,
        plan: Arc::new(EpochPlan {
            indices: Vec::new(),
            batches: Vec::new(),
        }),
        shared: Arc::new(Shared {
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        }),
        counters: Arc::new(Counters::default()),
        workers: Vec::new(),
    };
    loader.start_epoch()?;
    Ok(loader)
}

impl BatchLoader {
    fn start_epoch(&mut self) -> Result<()> {
        let indices = sampler_indices_for_epoch(&self.spec, self.epoch)?;
        self.plan = Arc::new(EpochPlan::new(indices, &self.cfg));
        self.counters = Arc::new(Counters::default());
        self.shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        });
        self.counters.bookkeeping_bytes.fetch_add(
            (self.plan.indices.len() * size_of::<usize>() + self.plan.batches.len() * size_of::<Range<usize>>())
                as u64,
            Ordering::Relaxed,
        );
        for _ in 0..self.cfg.loader_workers {
            let worker = Worker {
                view: self.view.clone(),
                plan: self.plan.clone(),
                shared: self.shared.clone(),
                counters: self.counters.clone(),
                window: self.cfg.prefetch_depth,
                transform: self.cfg.transform,
            };
            self.workers.push(thread::spawn(move || worker.run()));
        }
        Ok(())
    }

    fn stop_workers(&mut self) {
        self.shared.state.lock().unwrap().shutdown = true;
        self.shared.cv.notify_all();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    /// Next batch of the current epoch, or `None` once it is exhausted.
    pub fn next_batch(&mut self) -> Option<Batch> {
        let mut st = self.shared.state.lock().unwrap();
        let want = st.delivered;
        if want >= self.plan.batches.len() {
            return None;
        }
        st.consumer_waiting = true;
        self.shared.cv.notify_all();
        let batch = loop {
            if let Some(b) = st.ready.remove(&want) {
                break b;
            }
            st = self.shared.cv.wait(st).unwrap();
        };
        st.delivered += 1;
        st.consumer_waiting = false;
        drop(st);
        self.shared.cv.notify_all();
        Some(batch)
    }

    /// Restarts iteration at the next epoch.
    pub fn reset(&mut self) -> Result<()> {
        self.stop_workers();
        self.epoch += 1;
        self.start_epoch()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn num_batches(&self) -> usize {
        self.plan.batches.len()
    }

    /// This epoch's sampler indices.
    pub fn local_indices(&self) -> &[usize] {
        &self.plan.indices
    }

    pub fn view(&self) -> &Arc<DatasetView> {
        &self.view
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    pub fn config(&self) -> &LoaderConfig {
        &self.cfg
    }

    pub fn stats(&self) -> LoaderStats {
        LoaderStats {
            bookkeeping_bytes: self.counters.bookkeeping_bytes.load(Ordering::Relaxed),
            copied_column_bytes: self.counters.copied_column_bytes.load(Ordering::Relaxed),
            batches_staged: self.counters.batches.load(Ordering::Relaxed),
            peak_in_flight: self.counters.peak_in_flight.load(Ordering::Relaxed),
        }
    }
}

impl Iterator for BatchLoader {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.next_batch()
    }
}

impl Drop for BatchLoader {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

struct Worker {
    view: Arc<DatasetView>,
    plan: Arc<EpochPlan>,
    shared: Arc<Shared>,
    counters: Arc<Counters>,
    window: usize,
    transform: Option<Affine>,
}

impl Worker {
    fn take_ticket(&self) -> Option<usize> {
        let mut st = self.shared.state.lock().unwrap();
        loop {
            if st.shutdown || st.next_ticket >= self.plan.batches.len() {
                return None;
            }
            let limit = st.delivered + self.window + usize::from(st.consumer_waiting);
            if st.next_ticket < limit {
                let t = st.next_ticket;
                st.next_ticket += 1;
                self.counters
                    .peak_in_flight
                    .fetch_max(st.next_ticket - st.delivered, Ordering::Relaxed);
                return Some(t);
            }
            st = self.shared.cv.wait(st).unwrap();
        }
    }

    fn run(self) {
        while let Some(ticket) = self.take_ticket() {
            let range = self.plan.batches[ticket].clone();
            let indices: Arc<[usize]> = self.plan.indices[range].into();
            self.counters.bookkeeping_bytes.fetch_add(
                (indices.len() * size_of::<usize>() + size_of::<Batch>()) as u64,
                Ordering::Relaxed,
            );
            self.counters.batches.fetch_add(1, Ordering::Relaxed);
            let batch = Batch {
                view: self.view.clone(),
                indices,
                transform: self.transform,
                stats: Some(self.counters.clone()),
            };
            self.shared.state.lock().unwrap().ready.insert(ticket, batch);
            self.shared.cv.notify_all();
        }
    }
}
