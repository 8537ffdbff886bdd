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

//! Per-endpoint receive queues keyed by `(comm_id, src_rank, tag)`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use super::FabricError;

pub(crate) type Key = (u64, u32, u64);

#[derive(Default)]
struct Inner {
    queues: HashMap<Key, VecDeque<Vec<u8>>>,
    /// World ranks whose endpoints are gone.
    disconnected: HashSet<usize>,
    closed: bool,
}

#[derive(Default)]
pub(crate) struct Mailbox {
    inner: Mutex<Inner>,
    cv: Condvar,
}

impl Mailbox {
    pub(crate) fn push(&self, key: Key, payload: Vec<u8>) -> Result<(), FabricError> {
        let mut inner = self.inner.lock().unwrap();
        if inner.closed {
            return Err(FabricError::Closed);
        }
        inner.queues.entry(key).or_default().push_back(payload);
        drop(inner);
        self.cv.notify_all();
        Ok(())
    }

    pub(crate) fn mark_disconnected(&self, world_rank: usize) {
        self.inner.lock().unwrap().disconnected.insert(world_rank);
        self.cv.notify_all();
    }

    pub(crate) fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.cv.notify_all();
    }

    fn pop(inner: &mut Inner, key: &Key) -> Option<Vec<u8>> {
        let q = inner.queues.get_mut(key)?;
        let item = q.pop_front();
        if q.is_empty() {
            inner.queues.remove(key);
        }
        item
    }

    /// Blocks until a message for `key` arrives, the sending endpoint
    /// disconnects, or `deadline` passes.
    pub(crate) fn recv(
        &self,
        key: Key,
        src_world: usize,
        deadline: Instant,
    ) -> Result<Vec<u8>, FabricError> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(m) = Self::pop(&mut inner, &key) {
                return Ok(m);
            }
            if inner.disconnected.contains(&src_world) {
                return Err(FabricError::PeerDisconnected(key.1 as usize));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(FabricError::Timeout {
                    peer: Some(key.1 as usize),
                    tag: key.2,
                });
            }
            inner = self.cv.wait_timeout(inner, deadline - now).unwrap().0;
        }
    }

    /// Receives from whichever source has a message queued for
    /// `(comm_id, tag)`, lowest source rank first.
    pub(crate) fn recv_any(
        &self,
        comm_id: u64,
        tag: u64,
        deadline: Instant,
    ) -> Result<(u32, Vec<u8>), FabricError> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            let src = inner
                .queues
                .keys()
                .filter(|k| k.0 == comm_id && k.2 == tag)
                .map(|k| k.1)
                .min();
            if let Some(src) = src {
                let m = Self::pop(&mut inner, &(comm_id, src, tag)).expect("queue is non-empty");
                return Ok((src, m));
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(FabricError::Timeout { peer: None, tag });
            }
            inner = self.cv.wait_timeout(inner, deadline - now).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn fifo_per_key() {
        let mb = Mailbox::default();
        mb.push((1, 0, 7), b"a".to_vec()).unwrap();
        mb.push((1, 0, 8), b"x".to_vec()).unwrap();
        mb.push((1, 0, 7), b"b".to_vec()).unwrap();
        let far = Instant::now() + Duration::from_secs(1);
        assert_eq!(mb.recv((1, 0, 7), 0, far).unwrap(), b"a");
        assert_eq!(mb.recv((1, 0, 7), 0, far).unwrap(), b"b");
        assert_eq!(mb.recv((1, 0, 8), 0, far).unwrap(), b"x");
    }

    #[test]
    fn recv_any_prefers_lowest_source() {
        let mb = Mailbox::default();
        mb.push((1, 3, 7), b"c".to_vec()).unwrap();
        mb.push((1, 1, 7), b"a".to_vec()).unwrap();
        let far = Instant::now() + Duration::from_secs(1);
        assert_eq!(mb.recv_any(1, 7, far).unwrap(), (1, b"a".to_vec()));
        assert_eq!(mb.recv_any(1, 7, far).unwrap(), (3, b"c".to_vec()));
    }

    #[test]
    fn disconnect_wakes_receiver() {
        let mb = Mailbox::default();
        mb.mark_disconnected(4);
        let far = Instant::now() + Duration::from_secs(5);
        assert_eq!(mb.recv((1, 4, 0), 4, far), Err(FabricError::PeerDisconnected(4)));
    }
}
