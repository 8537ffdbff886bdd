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

#![allow(dead_code)]

use std::sync::Arc;
use std::thread;

use drc_core::fabric::{create_world, Backend, Communicator};
use drc_core::rng::SplitMix64;
use drc_core::table::{Column, DataType, Schema, Table, Value};

pub fn run_world<T: Send + 'static>(
    backend: Backend,
    size: usize,
    f: impl Fn(Communicator) -> T + Send + Sync + 'static,
) -> Vec<T> {
    let world = create_world(backend, size).expect("world");
    let f = Arc::new(f);
    let handles: Vec<_> = world
        .comms
        .into_iter()
        .map(|c| {
            let f = f.clone();
            thread::spawn(move || f(c))
        })
        .collect();
    handles.into_iter().map(|h| h.join().expect("rank panicked")).collect()
}

/// `k: Int64 in [0, key_range)`, `v: Float64`, `s: Utf8` (one of 4 tags).
pub fn random_table(rng: &mut SplitMix64, rows: usize, key_range: u64, key_name: &str) -> Table {
    let schema = Schema::of(&[
        (key_name, DataType::Int64),
        ("v", DataType::Float64),
        ("s", DataType::Utf8),
    ])
    .unwrap();
    let keys = (0..rows).map(|_| rng.below(key_range) as i64).collect();
    let vals = (0..rows).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let tags: Vec<&str> = (0..rows).map(|_| ["a", "bb", "", "d\0e"][rng.below(4) as usize]).collect();
    Table::try_new(schema, vec![Column::Int64(keys), Column::Float64(vals), Column::from_strs(&tags)]).unwrap()
}

/// Contiguous split of `t` into `parts` pieces (earlier pieces get the rest).
pub fn split_contiguous(t: &Table, parts: usize) -> Vec<Table> {
    let n = t.num_rows();
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|p| {
            let len = base + usize::from(p < extra);
            let idx: Vec<usize> = (start..start + len).collect();
            start += len;
            drc_core::table::take_rows(t, &idx).unwrap()
        })
        .collect()
}

pub fn multiset(rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    let mut rows = rows;
    rows.sort();
    rows
}

/// Nested-loop inner join on columns named `on`, output = left row followed
/// by right non-key cells.
pub fn nested_loop_join(left: &Table, right: &Table, on: &[&str]) -> Vec<Vec<Value>> {
    let lk: Vec<usize> = on.iter().map(|n| left.schema().index_of(n).unwrap()).collect();
    let rk: Vec<usize> = on.iter().map(|n| right.schema().index_of(n).unwrap()).collect();
    let mut out = Vec::new();
    for l in left.rows() {
        for r in right.rows() {
            if lk.iter().zip(&rk).all(|(&a, &b)| l[a] == r[b]) {
                let mut row = l.clone();
                row.extend(r.iter().enumerate().filter(|(i, _)| !rk.contains(i)).map(|(_, v)| v.clone()));
                out.push(row);
            }
        }
    }
    out
}

/// FNV-1a 64 written out independently of the crate's implementation.
pub fn oracle_partition_of_int_key(key: i64, parts: usize) -> usize {
    let mut h: u64 = 14695981039346656037;
    for b in key.to_le_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(1099511628211);
    }
    (h % parts as u64) as usize
}

pub fn is_sorted_by_key(rows: &[Vec<Value>], key: usize, ascending: bool) -> bool {
    rows.windows(2).all(|w| {
        if ascending {
            w[0][key] <= w[1][key]
        } else {
            w[0][key] >= w[1][key]
        }
    })
}
