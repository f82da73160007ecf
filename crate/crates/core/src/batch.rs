//! Columnar rowsets.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::{Value, ValueKind};

#[derive(Debug, Error, PartialEq)]
pub enum BatchError {
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
    #[error("expected {expected} columns, got {actual}")]
    ColumnCount { expected: usize, actual: usize },
    #[error("column `{column}` has {actual} values, expected {expected}")]
    ColumnLength {
        column: String,
        expected: usize,
        actual: usize,
    },
    #[error("column `{column}` row {row}: value {value} is not of kind {kind}")]
    KindMismatch {
        column: String,
        row: usize,
        value: Value,
        kind: ValueKind,
    },
    #[error("row {row} has {actual} values, expected {expected}")]
    RowWidth { row: usize, expected: usize, actual: usize },
}

/// True for `[A-Za-z_][A-Za-z0-9_]*`.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub kind: ValueKind,
}

impl Field {
    pub fn new(name: impl Into<String>, kind: ValueKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered, uniquely named columns.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Field>", into = "Vec<Field>")]
pub struct Schema {
    fields: Vec<Field>,
}

impl Schema {
    pub fn new(fields: Vec<Field>) -> Result<Self, BatchError> {
        let mut seen = HashSet::new();
        for f in &fields {
            if !is_identifier(&f.name) {
                return Err(BatchError::InvalidIdentifier(f.name.clone()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(BatchError::DuplicateColumn(f.name.clone()));
            }
        }
        Ok(Self { fields })
    }

    /// Convenience constructor for tests and presets; panics on invalid input.
    pub fn of(fields: &[(&str, ValueKind)]) -> Self {
        Self::new(fields.iter().map(|(n, k)| Field::new(*n, *k)).collect()).expect("valid schema")
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

    pub fn field(&self, name: &str) -> Option<&Field> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn kinds(&self) -> Vec<ValueKind> {
        self.fields.iter().map(|f| f.kind).collect()
    }
}

impl TryFrom<Vec<Field>> for Schema {
    type Error = BatchError;

    fn try_from(fields: Vec<Field>) -> Result<Self, Self::Error> {
        Schema::new(fields)
    }
}

impl From<Schema> for Vec<Field> {
    fn from(s: Schema) -> Self {
        s.fields
    }
}

/// A columnar rowset. Every column holds exactly `row_count` values, each
/// either null or of the column's declared kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    schema: Schema,
    columns: Vec<Vec<Value>>,
    row_count: usize,
}

impl Batch {
    pub fn new(schema: Schema, columns: Vec<Vec<Value>>) -> Result<Self, BatchError> {
        if columns.len() != schema.len() {
            return Err(BatchError::ColumnCount {
                expected: schema.len(),
                actual: columns.len(),
            });
        }
        let row_count = columns.first().map_or(0, Vec::len);
        for (field, col) in schema.fields().iter().zip(&columns) {
            if col.len() != row_count {
                return Err(BatchError::ColumnLength {
                    column: field.name.clone(),
                    expected: row_count,
                    actual: col.len(),
                });
            }
            if let Some((row, value)) = col.iter().enumerate().find(|(_, v)| !v.conforms_to(field.kind)) {
                return Err(BatchError::KindMismatch {
                    column: field.name.clone(),
                    row,
                    value: value.clone(),
                    kind: field.kind,
                });
            }
        }
        Ok(Self {
            schema,
            columns,
            row_count,
        })
    }

    pub fn from_rows(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, BatchError> {
        let width = schema.len();
        let mut columns: Vec<Vec<Value>> = (0..width).map(|_| Vec::with_capacity(rows.len())).collect();
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(BatchError::RowWidth {
                    row: i,
                    expected: width,
                    actual: row.len(),
                });
            }
            for (col, v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::new(schema, columns)
    }

    pub fn empty(schema: Schema) -> Self {
        let columns = (0..schema.len()).map(|_| Vec::new()).collect();
        Self {
            schema,
            columns,
            row_count: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[Vec<Value>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&[Value]> {
        self.schema.index_of(name).map(|i| self.columns[i].as_slice())
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn row(&self, index: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[index].clone()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count).map(|i| self.row(i))
    }

    pub fn into_columns(self) -> Vec<Vec<Value>> {
        self.columns
    }

    /// Rows `[start, end)` as a new batch with the same schema.
    pub fn slice(&self, start: usize, end: usize) -> Batch {
        let end = end.min(self.row_count);
        let start = start.min(end);
        Batch {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
            row_count: end - start,
        }
    }

    /// Keeps only rows whose mask entry is true.
    pub fn filter(&self, mask: &[bool]) -> Batch {
        let columns: Vec<Vec<Value>> = self
            .columns
            .iter()
            .map(|c| {
                c.iter()
                    .zip(mask)
                    .filter(|(_, keep)| **keep)
                    .map(|(v, _)| v.clone())
                    .collect()
            })
            .collect();
        let row_count = mask.iter().filter(|k| **k).count();
        Batch {
            schema: self.schema.clone(),
            columns,
            row_count,
        }
    }

    /// Element-wise comparison with the float tolerance applied.
    pub fn approx_eq(&self, other: &Batch, tolerance: f64) -> bool {
        self.schema == other.schema
            && self.row_count == other.row_count
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.approx_eq(y, tolerance)))
    }
}
