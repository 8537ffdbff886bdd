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

//! Local (single-partition) table operators.

use std::cmp::Ordering;
use std::collections::HashMap;

use super::{Column, ColumnBuilder, DataType, Field, Result, Schema, Table, TableError};

/// Total order on f64: NaN sorts greatest and all NaNs compare equal.
pub fn compare_f64(a: f64, b: f64) -> Ordering {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => a.total_cmp(&b),
    }
}

fn compare_cells(a: &Column, i: usize, b: &Column, j: usize) -> Ordering {
    match (a, b) {
        (Column::Int64(x), Column::Int64(y)) => x[i].cmp(&y[j]),
        (Column::Float64(x), Column::Float64(y)) => compare_f64(x[i], y[j]),
        (Column::Utf8 { .. }, Column::Utf8 { .. }) => a.utf8_bytes(i).cmp(b.utf8_bytes(j)),
        _ => unreachable!("key dtypes checked by RowComparator::new"),
    }
}

/// Lexicographic comparison of key tuples drawn from two tables with
/// matching key dtypes. Descending order reverses the whole tuple order.
pub struct RowComparator<'a> {
    left: Vec<&'a Column>,
    right: Vec<&'a Column>,
    ascending: bool,
}

impl<'a> RowComparator<'a> {
    pub fn new(
        left: &'a Table,
        left_keys: &[String],
        right: &'a Table,
        right_keys: &[String],
        ascending: bool,
    ) -> Result<Self> {
        let lk = left.schema().indices_of(left_keys)?;
        let rk = right.schema().indices_of(right_keys)?;
        if lk.len() != rk.len() {
            return Err(TableError::SchemaMismatch(format!(
                "{} left keys vs {} right keys",
                lk.len(),
                rk.len()
            )));
        }
        for (&l, &r) in lk.iter().zip(&rk) {
            let (lf, rf) = (&left.schema().fields()[l], &right.schema().fields()[r]);
            if lf.dtype != rf.dtype {
                return Err(TableError::TypeMismatch {
                    name: rf.name.clone(),
                    expected: lf.dtype,
                    actual: rf.dtype,
                });
            }
        }
        Ok(Self {
            left: lk.iter().map(|&i| left.column(i)).collect(),
            right: rk.iter().map(|&i| right.column(i)).collect(),
            ascending,
        })
    }

    /// Comparator over a single table.
    pub fn single(table: &'a Table, keys: &[String], ascending: bool) -> Result<Self> {
        Self::new(table, keys, table, keys, ascending)
    }

    pub fn compare(&self, i: usize, j: usize) -> Ordering {
        for (a, b) in self.left.iter().zip(&self.right) {
            let ord = compare_cells(a, i, b, j);
            if ord != Ordering::Equal {
                return if self.ascending { ord } else { ord.reverse() };
            }
        }
        Ordering::Equal
    }
}

/// Stable sort by `keys`.
pub fn local_sort(table: &Table, keys: &[String], ascending: bool) -> Result<Table> {
    let cmp = RowComparator::single(table, keys, ascending)?;
    let mut perm: Vec<usize> = (0..table.num_rows()).collect();
    perm.sort_by(|&a, &b| cmp.compare(a, b));
    take_rows(table, &perm)
}

pub fn take_rows(table: &Table, indices: &[usize]) -> Result<Table> {
    let n = table.num_rows();
    if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
        return Err(TableError::IndexOutOfRange {
            index: bad,
            num_rows: n,
        });
    }
    let columns = table
        .columns()
        .iter()
        .map(|c| gather_column(c, indices))
        .collect();
    Table::try_new(table.schema().clone(), columns)
}

fn gather_column(col: &Column, indices: &[usize]) -> Column {
    match col {
        Column::Int64(v) => Column::Int64(indices.iter().map(|&i| v[i]).collect()),
        Column::Float64(v) => Column::Float64(indices.iter().map(|&i| v[i]).collect()),
        Column::Utf8 { .. } => {
            let mut b = ColumnBuilder::new(DataType::Utf8, indices.len());
            for &i in indices {
                b.push_from(col, i);
            }
            b.finish()
        }
    }
}

pub fn concat(tables: &[Table]) -> Result<Table> {
    let first = tables.first().ok_or(TableError::EmptyConcat)?;
    if let Some(bad) = tables.iter().find(|t| t.schema() != first.schema()) {
        return Err(TableError::SchemaMismatch(format!(
            "{:?} vs {:?}",
            first.schema().fields(),
            bad.schema().fields()
        )));
    }
    if tables.len() == 1 {
        return Ok(first.clone());
    }
    let total: usize = tables.iter().map(Table::num_rows).sum();
    let columns = (0..first.num_columns())
        .map(|c| {
            let mut b = ColumnBuilder::new(first.schema().fields()[c].dtype, total);
            for t in tables {
                match (&mut b, t.column(c)) {
                    (ColumnBuilder::Int64(dst), Column::Int64(src)) => dst.extend_from_slice(src),
                    (ColumnBuilder::Float64(dst), Column::Float64(src)) => {
                        dst.extend_from_slice(src)
                    }
                    (ColumnBuilder::Utf8 { offsets, data }, Column::Utf8 { offsets: so, data: sd }) => {
                        let base = data.len() as u64;
                        offsets.extend(so[1..].iter().map(|o| o + base));
                        data.extend_from_slice(sd);
                    }
                    _ => unreachable!("schemas are identical"),
                }
            }
            b.finish()
        })
        .collect();
    Table::try_new(first.schema().clone(), columns)
}

/// Injective per-row key encoding used as the hash-table key for joins.
fn join_key(cols: &[&Column], row: usize, buf: &mut Vec<u8>) {
    buf.clear();
    for c in cols {
        match c {
            Column::Int64(v) => buf.extend_from_slice(&v[row].to_le_bytes()),
            Column::Float64(v) => buf.extend_from_slice(&v[row].to_bits().to_le_bytes()),
            Column::Utf8 { .. } => {
                let s = c.utf8_bytes(row);
                buf.extend_from_slice(&(s.len() as u64).to_le_bytes());
                buf.extend_from_slice(s);
            }
        }
    }
}

fn reject_nan_keys(table: &Table, keys: &[usize]) -> Result<()> {
    for &k in keys {
        if let Column::Float64(v) = table.column(k) {
            if v.iter().any(|x| x.is_nan()) {
                return Err(TableError::NanJoinKey(table.schema().fields()[k].name.clone()));
            }
        }
    }
    Ok(())
}

/// Output schema of an inner join on `on`: all left fields, then right
/// non-key fields. A right field whose name is already taken gets a
/// `_right` suffix.
pub(crate) fn joined_schema(left: &Schema, right: &Schema, on: &[String]) -> Result<Schema> {
    let mut fields: Vec<Field> = left.fields().to_vec();
    for f in right.fields() {
        if on.contains(&f.name) {
            continue;
        }
        let mut name = f.name.clone();
        while fields.iter().any(|x| x.name == name) {
            name.push_str("_right");
        }
        fields.push(Field::new(name, f.dtype));
    }
    Schema::new(fields)
}

/// Inner hash join. Rows come out left-major: for each left row in order,
/// its matching right rows in order. Float64 keys match by bit pattern and
/// NaN keys are rejected.
pub fn local_hash_join(left: &Table, right: &Table, on: &[String]) -> Result<Table> {
    let lk = left.schema().indices_of(on)?;
    let rk = right.schema().indices_of(on)?;
    for (&l, &r) in lk.iter().zip(&rk) {
        let (lf, rf) = (&left.schema().fields()[l], &right.schema().fields()[r]);
        if lf.dtype != rf.dtype {
            return Err(TableError::TypeMismatch {
                name: lf.name.clone(),
                expected: lf.dtype,
                actual: rf.dtype,
            });
        }
    }
    reject_nan_keys(left, &lk)?;
    reject_nan_keys(right, &rk)?;
    let schema = joined_schema(left.schema(), right.schema(), on)?;

    let rcols: Vec<&Column> = rk.iter().map(|&i| right.column(i)).collect();
    let lcols: Vec<&Column> = lk.iter().map(|&i| left.column(i)).collect();
    let mut index: HashMap<Vec<u8>, Vec<usize>> = HashMap::new();
    let mut buf = Vec::new();
    for r in 0..right.num_rows() {
        join_key(&rcols, r, &mut buf);
        index.entry(buf.clone()).or_default().push(r);
    }

    let mut left_rows = Vec::new();
    let mut right_rows = Vec::new();
    for l in 0..left.num_rows() {
        join_key(&lcols, l, &mut buf);
        if let Some(matches) = index.get(&buf) {
            for &r in matches {
                left_rows.push(l);
                right_rows.push(r);
            }
        }
    }

    let mut columns: Vec<Column> = left
        .columns()
        .iter()
        .map(|c| gather_column(c, &left_rows))
        .collect();
    for (i, c) in right.columns().iter().enumerate() {
        if !rk.contains(&i) {
            columns.push(gather_column(c, &right_rows));
        }
    }
    Table::try_new(schema, columns)
}
