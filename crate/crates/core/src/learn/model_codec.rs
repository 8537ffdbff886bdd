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


//! `DRCM | u32 F | F x f64 weights | f64 bias | u8 has_hidden` followed, when
//! `has_hidden == 1`, by `u32 H | H*F x f64 W | H x f64 c | H x f64 v`.
//! Everything little-endian.

use super::{Hidden, LearnError, LinearModel, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"DRCM";

pub fn encode_model(m: &LinearModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + 8 * m.num_params());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&(m.weights.len() as u32).to_le_bytes());
    for w in &m.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&m.bias.to_le_bytes());
    match &m.hidden {
        None => out.push(0),
        Some(h) => {
            out.push(1);
            out.extend_from_slice(&(h.units() as u32).to_le_bytes());
            for x in h.w.iter().chain(&h.c).chain(&h.v) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            LearnError::Decode(format!("truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| LearnError::Decode("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_model(buf: &[u8]) -> Result<LinearModel> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(LearnError::Decode("bad magic".into()));
    }
    let f = r.u32()?;
    let weights = r.f64s(f)?;
    let bias = r.f64s(1)?[0];
    let hidden = match r.take(1)?[0] {
        0 => None,
        1 => {
            let h = r.u32()?;
            let size = h.checked_mul(f).ok_or_else(|| LearnError::Decode("size overflow".into()))?;
            Some(Hidden {
                w: r.f64s(size)?,
                c: r.f64s(h)?,
                v: r.f64s(h)?,
            })
        }
        t => return Err(LearnError::Decode(format!("bad hidden flag {t}"))),
    };
    if r.pos != buf.len() {
        return Err(LearnError::Decode("trailing bytes".into()));
    }
    Ok(LinearModel { weights, bias, hidden })
}
