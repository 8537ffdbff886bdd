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


use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{PilotMode, TaskDescription};

/// Scheduler bookkeeping: FIFO queue plus the slot pool.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub mode: PilotMode,
    total_slots: usize,
    queue: VecDeque<TaskDescription>,
    free_slots: BTreeSet<usize>,
    running: BTreeMap<String, Vec<usize>>,
}

impl AgentState {
    pub fn new(total_slots: usize, mode: PilotMode) -> Self {
        Self {
            mode,
            total_slots,
            queue: VecDeque::new(),
            free_slots: (0..total_slots).collect(),
            running: BTreeMap::new(),
        }
    }

    pub fn total_slots(&self) -> usize {
        self.total_slots
    }

    pub fn enqueue(&mut self, task: TaskDescription) {
        self.queue.push_back(task);
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn free_slots(&self) -> &BTreeSet<usize> {
        &self.free_slots
    }

    pub fn running(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.running
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.running.is_empty()
    }

    /// Dispatches from the head of the queue: strict FIFO, no skipping,
    /// lowest-numbered free slots first. Batch mode runs one task at a time.
    pub fn schedule_step(&mut self) -> Vec<(TaskDescription, Vec<usize>)> {
        let mut out = Vec::new();
        while let Some(head) = self.queue.front() {
            if self.mode == PilotMode::Batch && !self.running.is_empty() {
                break;
            }
            let need = head.ranks_required;
            if need > self.free_slots.len() {
                break;
            }
            let slots: Vec<usize> = self.free_slots.iter().take(need).copied().collect();
            for s in &slots {
                self.free_slots.remove(s);
            }
            let task = self.queue.pop_front().expect("head exists");
            self.running.insert(task.uid.clone(), slots.clone());
            out.push((task, slots));
        }
        out
    }

    /// Returns the slots held by `uid` to the pool.
    pub fn complete(&mut self, uid: &str) -> Option<Vec<usize>> {
        let slots = self.running.remove(uid)?;
        self.free_slots.extend(slots.iter().copied());
        Some(slots)
    }

    /// Free and allocated slots partition `[0, total_slots)`.
    pub fn slots_partition_pool(&self) -> bool {
        let mut seen = self.free_slots.clone();
        for slots in self.running.values() {
            for &s in slots {
                if !seen.insert(s) {
                    return false;
                }
            }
        }
        seen.len() == self.total_slots && seen.iter().all(|&s| s < self.total_slots)
    }
}
