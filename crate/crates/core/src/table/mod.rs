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

//! Immutable columnar tables.
//!
//! A [`Table`] is a [`Schema`] plus one contiguous [`Column`] buffer per field.
//! Fixed-width columns (`Int64`, `Float64`) hold their values directly; `Utf8`
//! columns hold an offsets array of `len + 1` entries into a byte buffer.
//! Nulls are not representable.

mod csv;
mod ipc;
mod ops;

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::csv::parse_csv;
pub use self::ipc::{decode_ipc, encode_ipc, IPC_MAGIC};
pub use self::ops::{compare_f64, concat, local_hash_join, local_sort, take_rows, RowComparator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("schema must have at least one field")]
    EmptySchema,
    #[error("empty field name")]
    EmptyFieldName,
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{name}` has type {actual}, expected {expected}")]
    TypeMismatch {
        name: String,
        expected: DataType,
        actual: DataType,
    },
    #[error("table has {columns} columns but schema has {fields} fields")]
    ColumnCount { columns: usize, fields: usize },
    #[error("column `{name}` has {len} rows, expected {expected}")]
    ColumnLength {
        name: String,
        len: usize,
        expected: usize,
    },
    #[error("invalid utf8 offsets: {0}")]
    Offsets(String),
    #[error("invalid utf8 data in column `{0}`")]
    InvalidUtf8(String),
    #[error("field-count mismatch at line {line}: expected {expected}, found {found}")]
    FieldCount {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("cannot parse `{token}` as {dtype} at line {line}")]
    Parse {
        line: u64,
        token: String,
        dtype: DataType,
    },
    #[error("empty field at line {line} (nulls are not supported)")]
    EmptyValue { line: u64 },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("bad magic")]
    BadMagic,
    #[error("truncated buffer: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown dtype tag {0}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after table")]
    TrailingBytes(usize),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("concat of an empty table list")]
    EmptyConcat,
    #[error("row index {index} out of range for {num_rows} rows")]
    IndexOutOfRange { index: usize, num_rows: usize },
    #[error("NaN in join key column `{0}`")]
    NanJoinKey(String),
}

pub type Result<T, E = TableError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    #[serde(alias = "Int64")]
    Int64,
    #[serde(alias = "Float64")]
    Float64,
    #[serde(alias = "Utf8")]
    Utf8,
}

impl DataType {
    pub fn tag(self) -> u8 {
        match self {
            DataType::Int64 => 0,
            DataType::Float64 => 1,
            DataType::Utf8 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DataType::Int64),
            1 => Ok(DataType::Float64),
            2 => Ok(DataType::Utf8),
            other => Err(TableError::UnknownTag(other)),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DataType::Int64 => "Int64",
            DataType::Float64 => "Float64",
            DataType::Utf8 => "Utf8",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub dtype: DataType,
}

impl Field {
    pub fn new(name: impl Into<String>, dtype: DataType) -> Self {
        Self {
            name: name.into(),
            dtype,
        }
    }
}

/// Ordered, uniquely named fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Result<Self> {
        if fields.is_empty() {
            return Err(TableError::EmptySchema);
        }
        let mut seen = HashSet::with_capacity(fields.len());
        for f in &fields {
            if f.name.is_empty() {
                return Err(TableError::EmptyFieldName);
            }
            if !seen.insert(f.name.as_str()) {
                return Err(TableError::DuplicateField(f.name.clone()));
            }
        }
        Ok(Self { fields })
    }

    /// Shorthand for tests and fixtures: `Schema::of(&[("a", DataType::Int64)])`.
    pub fn of(fields: &[(&str, DataType)]) -> Result<Self> {
        Self::new(fields.iter().map(|(n, t)| Field::new(*n, *t)).collect())
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn field(&self, name: &str) -> Result<&Field> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))
    }

    /// Resolves a list of column names to indices.
    pub fn indices_of(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| TableError::UnknownColumn(n.clone()))
            })
            .collect()
    }
}

/// A typed, contiguous value buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Utf8 { offsets: Vec<u64>, data: Vec<u8> },
}

impl Column {
    pub fn from_strs<S: AsRef<str>>(values: &[S]) -> Self {
        let mut offsets = Vec::with_capacity(values.len() + 1);
        let mut data = Vec::new();
        offsets.push(0);
        for v in values {
            data.extend_from_slice(v.as_ref().as_bytes());
            offsets.push(data.len() as u64);
        }
        Column::Utf8 { offsets, data }
    }

    pub fn dtype(&self) -> DataType {
        match self {
            Column::Int64(_) => DataType::Int64,
            Column::Float64(_) => DataType::Float64,
            Column::Utf8 { .. } => DataType::Utf8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int64(v) => v.len(),
            Column::Float64(v) => v.len(),
            Column::Utf8 { offsets, .. } => offsets.len().saturating_sub(1),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn empty(dtype: DataType) -> Self {
        match dtype {
            DataType::Int64 => Column::Int64(Vec::new()),
            DataType::Float64 => Column::Float64(Vec::new()),
            DataType::Utf8 => Column::Utf8 {
                offsets: vec![0],
                data: Vec::new(),
            },
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match self {
            Column::Int64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            Column::Float64(v) => Some(v),
            _ => None,
        }
    }

    /// Byte slice of the `i`-th Utf8 value. Panics on other dtypes.
    pub fn utf8_bytes(&self, i: usize) -> &[u8] {
        match self {
            Column::Utf8 { offsets, data } => &data[offsets[i] as usize..offsets[i + 1] as usize],
            _ => panic!("utf8_bytes on {} column", self.dtype()),
        }
    }

    pub fn utf8_str(&self, i: usize) -> &str {
        // validated as utf8 at construction
        std::str::from_utf8(self.utf8_bytes(i)).expect("utf8 column holds valid utf8")
    }

    pub fn value(&self, i: usize) -> Value {
        match self {
            Column::Int64(v) => Value::Int64(v[i]),
            Column::Float64(v) => Value::Float64(v[i]),
            Column::Utf8 { .. } => Value::Utf8(self.utf8_str(i).to_string()),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if let Column::Utf8 { offsets, data } = self {
            if offsets.first() != Some(&0) {
                return Err(TableError::Offsets(format!("`{name}`: first offset must be 0")));
            }
            if offsets.windows(2).any(|w| w[0] > w[1]) {
                return Err(TableError::Offsets(format!("`{name}`: offsets decrease")));
            }
            if *offsets.last().unwrap() != data.len() as u64 {
                return Err(TableError::Offsets(format!(
                    "`{name}`: last offset {} != data length {}",
                    offsets.last().unwrap(),
                    data.len()
                )));
            }
            for w in offsets.windows(2) {
                if std::str::from_utf8(&data[w[0] as usize..w[1] as usize]).is_err() {
                    return Err(TableError::InvalidUtf8(name.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// An owned cell value, used for row-wise access and fixtures.
#[derive(Debug, Clone)]
pub enum Value {
    Int64(i64),
    Float64(f64),
    Utf8(String),
}

// Float64 cells compare by bit pattern so that rows can be used as multiset keys.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a == b,
            (Value::Float64(a), Value::Float64(b)) => a.to_bits() == b.to_bits(),
            (Value::Utf8(a), Value::Utf8(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Value::Int64(v) => (0u8, *v).hash(state),
            Value::Float64(v) => (1u8, v.to_bits()).hash(state),
            Value::Utf8(v) => (2u8, v).hash(state),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int64(a), Value::Int64(b)) => a.cmp(b),
            (Value::Float64(a), Value::Float64(b)) => compare_f64(*a, *b),
            (Value::Utf8(a), Value::Utf8(b)) => a.as_bytes().cmp(b.as_bytes()),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Int64(_) => 0,
            Value::Float64(_) => 1,
            Value::Utf8(_) => 2,
        }
    }
}

/// Schema plus equal-length columns. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    columns: Vec<Column>,
    num_rows: usize,
}

impl Table {
    pub fn try_new(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(TableError::ColumnCount {
                columns: columns.len(),
                fields: schema.len(),
            });
        }
        let num_rows = columns.first().map(Column::len).unwrap_or(0);
        for (field, col) in schema.fields().iter().zip(&columns) {
            if col.dtype() != field.dtype {
                return Err(TableError::TypeMismatch {
                    name: field.name.clone(),
                    expected: field.dtype,
                    actual: col.dtype(),
                });
            }
            col.validate(&field.name)?;
            if col.len() != num_rows {
                return Err(TableError::ColumnLength {
                    name: field.name.clone(),
                    len: col.len(),
                    expected: num_rows,
                });
            }
        }
        Ok(Self {
            schema,
            columns,
            num_rows,
        })
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = schema.fields().iter().map(|f| Column::empty(f.dtype)).collect();
        Self {
            schema,
            columns,
            num_rows: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&Column> {
        let i = self
            .schema
            .index_of(name)
            .ok_or_else(|| TableError::UnknownColumn(name.to_string()))?;
        Ok(&self.columns[i])
    }

    pub fn num_rows(&self) -> usize {
        self.num_rows
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    /// Projection onto the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Table> {
        let idx = self.schema.indices_of(names)?;
        let fields = idx.iter().map(|&i| self.schema.fields()[i].clone()).collect();
        let columns = idx.iter().map(|&i| self.columns[i].clone()).collect();
        Table::try_new(Schema::new(fields)?, columns)
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.value(i)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<Value>> {
        (0..self.num_rows).map(|i| self.row(i)).collect()
    }

    /// Builds a table from row tuples. Every row must match the schema.
    pub fn from_rows(schema: Schema, rows: &[Vec<Value>]) -> Result<Self> {
        let mut builders: Vec<ColumnBuilder> = schema
            .fields()
            .iter()
            .map(|f| ColumnBuilder::new(f.dtype, rows.len()))
            .collect();
        for row in rows {
            if row.len() != schema.len() {
                return Err(TableError::ColumnCount {
                    columns: row.len(),
                    fields: schema.len(),
                });
            }
            for ((b, v), f) in builders.iter_mut().zip(row).zip(schema.fields()) {
                b.push(v, &f.name)?;
            }
        }
        let columns = builders.into_iter().map(ColumnBuilder::finish).collect();
        Table::try_new(schema, columns)
    }
}

/// Append-only builder used by ingestion and by row-wise constructors.
pub(crate) enum ColumnBuilder {
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Utf8 { offsets: Vec<u64>, data: Vec<u8> },
}

impl ColumnBuilder {
    pub(crate) fn new(dtype: DataType, capacity: usize) -> Self {
        match dtype {
            DataType::Int64 => ColumnBuilder::Int64(Vec::with_capacity(capacity)),
            DataType::Float64 => ColumnBuilder::Float64(Vec::with_capacity(capacity)),
            DataType::Utf8 => {
                let mut offsets = Vec::with_capacity(capacity + 1);
                offsets.push(0);
                ColumnBuilder::Utf8 {
                    offsets,
                    data: Vec::new(),
                }
            }
        }
    }

    fn push(&mut self, v: &Value, name: &str) -> Result<()> {
        match (self, v) {
            (ColumnBuilder::Int64(c), Value::Int64(x)) => c.push(*x),
            (ColumnBuilder::Float64(c), Value::Float64(x)) => c.push(*x),
            (ColumnBuilder::Utf8 { offsets, data }, Value::Utf8(s)) => {
                data.extend_from_slice(s.as_bytes());
                offsets.push(data.len() as u64);
            }
            (b, v) => {
                return Err(TableError::TypeMismatch {
                    name: name.to_string(),
                    expected: b.dtype(),
                    actual: match v {
                        Value::Int64(_) => DataType::Int64,
                        Value::Float64(_) => DataType::Float64,
                        Value::Utf8(_) => DataType::Utf8,
                    },
                })
            }
        }
        Ok(())
    }

    fn dtype(&self) -> DataType {
        match self {
            ColumnBuilder::Int64(_) => DataType::Int64,
            ColumnBuilder::Float64(_) => DataType::Float64,
            ColumnBuilder::Utf8 { .. } => DataType::Utf8,
        }
    }

    /// Copies row `i` of `src` (same dtype) onto the builder.
    pub(crate) fn push_from(&mut self, src: &Column, i: usize) {
        match (self, src) {
            (ColumnBuilder::Int64(c), Column::Int64(s)) => c.push(s[i]),
            (ColumnBuilder::Float64(c), Column::Float64(s)) => c.push(s[i]),
            (ColumnBuilder::Utf8 { offsets, data }, Column::Utf8 { .. }) => {
                data.extend_from_slice(src.utf8_bytes(i));
                offsets.push(data.len() as u64);
            }
            _ => unreachable!("builder dtype matches source column"),
        }
    }

    pub(crate) fn finish(self) -> Column {
        match self {
            ColumnBuilder::Int64(v) => Column::Int64(v),
            ColumnBuilder::Float64(v) => Column::Float64(v),
            ColumnBuilder::Utf8 { offsets, data } => Column::Utf8 { offsets, data },
        }
    }
}
