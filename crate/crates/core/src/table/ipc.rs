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

//! Binary table encoding used for task payloads and shuffle traffic.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "DRC1" | u32 field_count | { u16 name_len | name | u8 dtype_tag }*
//!        | u64 num_rows | column*
//! column := Int64/Float64: num_rows x 8 bytes
//!         | Utf8: (num_rows + 1) x u64 offsets | data bytes
//! ```

use super::{Column, DataType, Field, Result, Schema, Table, TableError};

pub const IPC_MAGIC: &[u8; 4] = b"DRC1";

pub fn encode_ipc(table: &Table) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(table));
    out.extend_from_slice(IPC_MAGIC);
    out.extend_from_slice(&(table.schema().len() as u32).to_le_bytes());
    for f in table.schema().fields() {
        out.extend_from_slice(&(f.name.len() as u16).to_le_bytes());
        out.extend_from_slice(f.name.as_bytes());
        out.push(f.dtype.tag());
    }
    out.extend_from_slice(&(table.num_rows() as u64).to_le_bytes());
    for col in table.columns() {
        match col {
            Column::Int64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Column::Float64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Column::Utf8 { offsets, data } => {
                offsets.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                out.extend_from_slice(data);
            }
        }
    }
    out
}

fn encoded_len(table: &Table) -> usize {
    let header: usize = 4 + 4 + table
        .schema()
        .fields()
        .iter()
        .map(|f| 2 + f.name.len() + 1)
        .sum::<usize>()
        + 8;
    let body: usize = table
        .columns()
        .iter()
        .map(|c| match c {
            Column::Int64(v) => v.len() * 8,
            Column::Float64(v) => v.len() * 8,
            Column::Utf8 { offsets, data } => offsets.len() * 8 + data.len(),
        })
        .sum();
    header + body
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            TableError::Truncated {
                offset: self.pos,
                needed: n,
            },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// `count` 8-byte words, bounds-checked before allocating.
    fn words(&mut self, count: u64) -> Result<&'a [u8]> {
        let n = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(8))
            .ok_or(TableError::Truncated {
                offset: self.pos,
                needed: usize::MAX,
            })?;
        self.take(n)
    }
}

fn le_words(bytes: &[u8]) -> impl Iterator<Item = [u8; 8]> + '_ {
    bytes.chunks_exact(8).map(|c| c.try_into().unwrap())
}

pub fn decode_ipc(bytes: &[u8]) -> Result<Table> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != IPC_MAGIC {
        return Err(TableError::BadMagic);
    }
    cur.take(4)?;
    let nfields = cur.u32()?;
    let mut fields = Vec::new();
    for _ in 0..nfields {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| TableError::SchemaMismatch("field name is not utf8".into()))?
            .to_string();
        let dtype = DataType::from_tag(cur.u8()?)?;
        fields.push(Field { name, dtype });
    }
    let schema = Schema::new(fields)?;
    let num_rows = cur.u64()?;
    let mut columns = Vec::with_capacity(schema.len());
    for f in schema.fields() {
        let col = match f.dtype {
            DataType::Int64 => {
                Column::Int64(le_words(cur.words(num_rows)?).map(i64::from_le_bytes).collect())
            }
            DataType::Float64 => {
                Column::Float64(le_words(cur.words(num_rows)?).map(f64::from_le_bytes).collect())
            }
            DataType::Utf8 => {
                let offsets: Vec<u64> = le_words(cur.words(num_rows.saturating_add(1))?)
                    .map(u64::from_le_bytes)
                    .collect();
                if offsets[0] != 0 || offsets.windows(2).any(|w| w[0] > w[1]) {
                    return Err(TableError::Offsets(format!("`{}`", f.name)));
                }
                let data_len = *offsets.last().unwrap();
                let data_len = usize::try_from(data_len).map_err(|_| TableError::Truncated {
                    offset: cur.pos,
                    needed: usize::MAX,
                })?;
                let data = cur.take(data_len)?.to_vec();
                Column::Utf8 { offsets, data }
            }
        };
        columns.push(col);
    }
    if cur.pos != bytes.len() {
        return Err(TableError::TrailingBytes(bytes.len() - cur.pos));
    }
    Table::try_new(schema, columns)
}
