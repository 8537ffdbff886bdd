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

//! Collectives over point-to-point messages with fixed schedules:
//! gather is all -> root, broadcast is root -> all in ascending rank order,
//! allreduce is gather + reduce in rank order at rank 0 + broadcast.
//!
//! Every collective has a `_with_tag` form so that higher layers can keep
//! their traffic in their own tag range.

use serde::{Deserialize, Serialize};

use super::{Communicator, FabricError, Plane, Result, RESERVED_TAG_BASE};

const BCAST_TAG: u64 = RESERVED_TAG_BASE + 1;
const GATHER_TAG: u64 = RESERVED_TAG_BASE + 2;
const ALL_TO_ALL_TAG: u64 = RESERVED_TAG_BASE + 3;
const ALLREDUCE_TAG: u64 = RESERVED_TAG_BASE + 4;
const BARRIER_TAG: u64 = RESERVED_TAG_BASE + 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
}

impl ReduceOp {
    fn apply(self, acc: &mut [f64], v: &[f64]) {
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = match self {
                ReduceOp::Sum => *a + x,
                ReduceOp::Max => a.max(x),
                ReduceOp::Min => a.min(x),
            };
        }
    }
}

fn encode_f64s(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode_f64s(b: &[u8]) -> Result<Vec<f64>> {
    if b.len() % 8 != 0 {
        return Err(FabricError::Protocol(format!("f64 vector of {} bytes", b.len())));
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Communicator {
    /// Every rank returns the root's payload. Non-root ranks may pass `None`.
    pub fn broadcast(&self, root: usize, payload: Option<Vec<u8>>) -> Result<Vec<u8>> {
        self.broadcast_with_tag(BCAST_TAG, root, payload)
    }

    pub fn broadcast_with_tag(
        &self,
        tag: u64,
        root: usize,
        payload: Option<Vec<u8>>,
    ) -> Result<Vec<u8>> {
        self.check_rank(root)?;
        if self.rank == root {
            let payload = payload.ok_or_else(|| {
                FabricError::Protocol("broadcast root must supply a payload".into())
            })?;
            for dst in (0..self.size).filter(|&r| r != root) {
                self.send_on(Plane::Data, dst, tag, payload.clone())?;
            }
            Ok(payload)
        } else {
            self.recv(root, tag)
        }
    }

    /// Root receives every rank's payload in rank order, others get `None`.
    pub fn gather(&self, payload: Vec<u8>, root: usize) -> Result<Option<Vec<Vec<u8>>>> {
        self.gather_with_tag(GATHER_TAG, payload, root)
    }

    pub fn gather_with_tag(
        &self,
        tag: u64,
        payload: Vec<u8>,
        root: usize,
    ) -> Result<Option<Vec<Vec<u8>>>> {
        self.check_rank(root)?;
        if self.rank != root {
            self.send_on(Plane::Data, root, tag, payload)?;
            return Ok(None);
        }
        let mut own = Some(payload);
        let mut out = Vec::with_capacity(self.size);
        for src in 0..self.size {
            if src == root {
                out.push(own.take().unwrap());
            } else {
                out.push(self.recv(src, tag)?);
            }
        }
        Ok(Some(out))
    }

    /// `outgoing[j]` goes to rank `j`; the result is indexed by source rank.
    pub fn all_to_all(&self, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        self.all_to_all_with_tag(ALL_TO_ALL_TAG, outgoing)
    }

    pub fn all_to_all_with_tag(&self, tag: u64, outgoing: Vec<Vec<u8>>) -> Result<Vec<Vec<u8>>> {
        if outgoing.len() != self.size {
            return Err(FabricError::LengthMismatch {
                expected: self.size,
                found: outgoing.len(),
            });
        }
        let mut own = None;
        for (dst, payload) in outgoing.into_iter().enumerate() {
            if dst == self.rank {
                own = Some(payload);
            } else {
                self.send_on(Plane::Data, dst, tag, payload)?;
            }
        }
        let mut incoming = Vec::with_capacity(self.size);
        for src in 0..self.size {
            if src == self.rank {
                incoming.push(own.take().unwrap());
            } else {
                incoming.push(self.recv(src, tag)?);
            }
        }
        Ok(incoming)
    }

    /// Elementwise reduction. Rank 0 folds the vectors in ascending rank
    /// order and broadcasts the result, so every rank returns bit-identical
    /// values regardless of transport or timing.
    pub fn allreduce_f64(&self, values: &[f64], op: ReduceOp) -> Result<Vec<f64>> {
        self.allreduce_f64_with_tag(ALLREDUCE_TAG, values, op)
    }

    pub fn allreduce_f64_with_tag(&self, tag: u64, values: &[f64], op: ReduceOp) -> Result<Vec<f64>> {
        let gathered = self.gather_with_tag(tag, encode_f64s(values), 0)?;
        // reply: status byte (0 ok, 1 length mismatch) followed by the vector
        let reply = match gathered {
            Some(parts) => {
                let vectors = parts.iter().map(|p| decode_f64s(p)).collect::<Result<Vec<_>>>()?;
                let expected = vectors[0].len();
                let msg = match vectors.iter().find(|v| v.len() != expected) {
                    Some(bad) => {
                        let mut m = vec![1u8];
                        m.extend_from_slice(&(expected as u64).to_le_bytes());
                        m.extend_from_slice(&(bad.len() as u64).to_le_bytes());
                        m
                    }
                    None => {
                        let mut acc = vectors[0].clone();
                        for v in &vectors[1..] {
                            op.apply(&mut acc, v);
                        }
                        let mut m = vec![0u8];
                        m.extend_from_slice(&encode_f64s(&acc));
                        m
                    }
                };
                self.broadcast_with_tag(tag, 0, Some(msg))?
            }
            None => self.broadcast_with_tag(tag, 0, None)?,
        };
        match reply.first() {
            Some(0) => decode_f64s(&reply[1..]),
            Some(1) if reply.len() == 17 => Err(FabricError::LengthMismatch {
                expected: u64::from_le_bytes(reply[1..9].try_into().unwrap()) as usize,
                found: u64::from_le_bytes(reply[9..17].try_into().unwrap()) as usize,
            }),
            _ => Err(FabricError::Protocol("malformed allreduce reply".into())),
        }
    }

    /// Returns only after every rank has entered.
    pub fn barrier(&self) -> Result<()> {
        self.gather_with_tag(BARRIER_TAG, Vec::new(), 0)?;
        let root_payload = (self.rank == 0).then(Vec::new);
        self.broadcast_with_tag(BARRIER_TAG, 0, root_payload)?;
        Ok(())
    }
}
