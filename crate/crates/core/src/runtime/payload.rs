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


//! Task payload envelope:
//!
//! ```text
//! "DRCP" | u32 params_len | params (JSON) | u16 n_inputs
//!   | n_inputs x { u16 name_len | name | u8 kind | u32 n_parts | n_parts x { u64 len | bytes } }
//! ```
//!
//! Table parts are IPC-encoded tables. Part `i` of an input belongs to task
//! rank `i % P`.

use super::wire::{Reader, Writer};
use crate::table::{concat, decode_ipc, encode_ipc, take_rows, Table};

pub const PAYLOAD_MAGIC: &[u8; 4] = b"DRCP";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Table = 0,
    Blob = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PayloadInput {
    pub name: String,
    pub kind: InputKind,
    pub parts: Vec<Vec<u8>>,
}

/// Builder for a task payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPayload {
    pub params: serde_json::Value,
    pub inputs: Vec<PayloadInput>,
}

/// Splits `table` into `parts` contiguous pieces; earlier pieces take the
/// remainder rows.
pub fn split_table(table: &Table, parts: usize) -> Vec<Table> {
    let parts = parts.max(1);
    let n = table.num_rows();
    let (base, extra) = (n / parts, n % parts);
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let idx: Vec<usize> = (start..start + len).collect();
            start += len;
            take_rows(table, &idx).expect("indices in range")
        })
        .collect()
}

impl TaskPayload {
    pub fn new(params: serde_json::Value) -> Self {
        Self {
            params,
            inputs: Vec::new(),
        }
    }

    pub fn with_table_parts(mut self, name: &str, parts: &[Table]) -> Self {
        self.inputs.push(PayloadInput {
            name: name.to_string(),
            kind: InputKind::Table,
            parts: parts.iter().map(encode_ipc).collect(),
        });
        self
    }

    /// Adds `table` split into `parts` contiguous partitions.
    pub fn with_table(self, name: &str, table: &Table, parts: usize) -> Self {
        self.with_table_parts(name, &split_table(table, parts))
    }

    pub fn with_blob(mut self, name: &str, blob: Vec<u8>) -> Self {
        self.inputs.push(PayloadInput {
            name: name.to_string(),
            kind: InputKind::Blob,
            parts: vec![blob],
        });
        self
    }

    pub fn encode(&self) -> Vec<u8> {
        let params = serde_json::to_vec(&self.params).expect("json value serializes");
        let mut w = Writer::default();
        w.buf.extend_from_slice(PAYLOAD_MAGIC);
        w.u32(params.len() as u32);
        w.buf.extend_from_slice(&params);
        w.u16(self.inputs.len() as u16);
        for input in &self.inputs {
            w.short_str(&input.name).u8(input.kind as u8).u32(input.parts.len() as u32);
            for p in &input.parts {
                w.bytes(p);
            }
        }
        w.buf
    }
}

/// A decoded envelope whose parts still borrow the payload bytes.
#[derive(Debug)]
pub struct PayloadView<'a> {
    pub params: serde_json::Value,
    inputs: Vec<(String, InputKind, Vec<&'a [u8]>)>,
}

impl<'a> PayloadView<'a> {
    pub fn parse(buf: &'a [u8]) -> Result<Self, String> {
        let mut r = Reader::new(buf);
        if r.take(4)? != PAYLOAD_MAGIC {
            return Err("bad payload magic".into());
        }
        let plen = r.u32()? as usize;
        let params = serde_json::from_slice(r.take(plen)?).map_err(|e| format!("params: {e}"))?;
        let n = r.u16()?;
        let mut inputs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = r.short_str()?;
            let kind = match r.u8()? {
                0 => InputKind::Table,
                1 => InputKind::Blob,
                k => return Err(format!("input `{name}`: unknown kind {k}")),
            };
            let nparts = r.u32()?;
            let mut parts = Vec::new();
            for _ in 0..nparts {
                parts.push(r.bytes()?);
            }
            inputs.push((name, kind, parts));
        }
        r.finish()?;
        Ok(Self { params, inputs })
    }

    fn input(&self, name: &str, kind: InputKind) -> Result<&[&'a [u8]], String> {
        match self.inputs.iter().find(|(n, _, _)| n == name) {
            Some((_, k, parts)) if *k == kind => Ok(parts),
            Some(_) => Err(format!("input `{name}` has the wrong kind")),
            None => Err(format!("missing input `{name}`")),
        }
    }

    /// Decodes the parts of table input `name` owned by `rank` of `size` and
    /// concatenates them. A rank without parts gets an empty table.
    pub fn local_table(&self, name: &str, rank: usize, size: usize) -> Result<Table, String> {
        let parts = self.input(name, InputKind::Table)?;
        if parts.is_empty() {
            return Err(format!("input `{name}` has no parts"));
        }
        let mine: Vec<Table> = parts
            .iter()
            .enumerate()
            .filter(|(i, _)| i % size == rank)
            .map(|(_, p)| decode_ipc(p))
            .collect::<Result<_, _>>()
            .map_err(|e| format!("input `{name}`: {e}"))?;
        if mine.is_empty() {
            let first = decode_ipc(parts[0]).map_err(|e| format!("input `{name}`: {e}"))?;
            return Ok(Table::empty(first.schema().clone()));
        }
        concat(&mine).map_err(|e| format!("input `{name}`: {e}"))
    }

    pub fn blob(&self, name: &str) -> Result<&'a [u8], String> {
        let parts = self.input(name, InputKind::Blob)?;
        parts.first().copied().ok_or_else(|| format!("input `{name}` is empty"))
    }
}
