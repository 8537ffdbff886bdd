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

//! CSV ingestion: comma separated, `\n` or `\r\n` line ends, optional
//! double-quote quoting with `""` escapes. Quoted fields may not span lines.

use std::io::Read;

use super::{ColumnBuilder, Result, Schema, Table, TableError};

/// Parses CSV text into a table with the given schema.
///
/// Blank lines are skipped. Empty fields are rejected since the table model
/// has no nulls.
pub fn parse_csv<R: Read>(text: R, schema: &Schema, has_header: bool) -> Result<Table> {
    // Schema::new guarantees unique non-empty names; re-checking lets callers
    // pass schemas assembled from deserialized config.
    let schema = Schema::new(schema.fields().to_vec())?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::None)
        .from_reader(text);

    let width = schema.len();
    let mut builders: Vec<ColumnBuilder> = schema
        .fields()
        .iter()
        .map(|f| ColumnBuilder::new(f.dtype, 0))
        .collect();

    let mut record = ::csv::ByteRecord::new();
    let mut first = true;
    loop {
        let more = reader
            .read_byte_record(&mut record)
            .map_err(|e| TableError::Csv(e.to_string()))?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if first && has_header {
            first = false;
            continue;
        }
        first = false;
        if record.len() != width {
            return Err(TableError::FieldCount {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (i, raw) in record.iter().enumerate() {
            if raw.is_empty() {
                return Err(TableError::EmptyValue { line });
            }
            if raw.contains(&b'\n') || raw.contains(&b'\r') {
                return Err(TableError::Csv(format!("embedded newline at line {line}")));
            }
            let dtype = schema.fields()[i].dtype;
            let token = std::str::from_utf8(raw).map_err(|_| TableError::Parse {
                line,
                token: String::from_utf8_lossy(raw).into_owned(),
                dtype,
            })?;
            let bad = || TableError::Parse {
                line,
                token: token.to_string(),
                dtype,
            };
            match &mut builders[i] {
                ColumnBuilder::Int64(c) => c.push(token.parse::<i64>().map_err(|_| bad())?),
                ColumnBuilder::Float64(c) => c.push(token.parse::<f64>().map_err(|_| bad())?),
                ColumnBuilder::Utf8 { offsets, data } => {
                    data.extend_from_slice(raw);
                    offsets.push(data.len() as u64);
                }
            }
        }
    }
    let columns = builders.into_iter().map(ColumnBuilder::finish).collect();
    Table::try_new(schema, columns)
}
