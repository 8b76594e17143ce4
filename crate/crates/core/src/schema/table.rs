use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ColumnMeta, FunctionalDependency};
use crate::value::{ColumnKind, Datum, Value};

/// Column-major storage; `None` is the NULL sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Num(Vec<Option<f64>>),
    Cat(Vec<Option<Arc<str>>>),
}

impl ColumnData {
    pub fn empty(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Continuous => ColumnData::Num(Vec::new()),
            ColumnKind::Categorical => ColumnData::Cat(Vec::new()),
        }
    }

    pub fn with_capacity(kind: ColumnKind, n: usize) -> Self {
        match kind {
            ColumnKind::Continuous => ColumnData::Num(Vec::with_capacity(n)),
            ColumnKind::Categorical => ColumnData::Cat(Vec::with_capacity(n)),
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Num(_) => ColumnKind::Continuous,
            ColumnData::Cat(_) => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ColumnData::Num(v) => v.len(),
            ColumnData::Cat(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize) -> Value {
        match self {
            ColumnData::Num(v) => v[row].map(Datum::num),
            ColumnData::Cat(v) => v[row].clone().map(Datum::Str),
        }
    }

    pub fn is_null(&self, row: usize) -> bool {
        match self {
            ColumnData::Num(v) => v[row].is_none(),
            ColumnData::Cat(v) => v[row].is_none(),
        }
    }

    /// Append a value; a datum of the wrong kind is stored as NULL.
    pub fn push(&mut self, value: Value) {
        match self {
            ColumnData::Num(v) => v.push(value.and_then(|d| d.as_f64())),
            ColumnData::Cat(v) => v.push(match value {
                Some(Datum::Str(s)) => Some(s),
                Some(Datum::Num(x)) => Some(Arc::from(x.to_string().as_str())),
                None => None,
            }),
        }
    }

    pub fn push_null(&mut self) {
        match self {
            ColumnData::Num(v) => v.push(None),
            ColumnData::Cat(v) => v.push(None),
        }
    }

    /// Copy the selected rows (`None` entries become NULL).
    pub fn gather(&self, rows: impl Iterator<Item = Option<usize>>) -> ColumnData {
        match self {
            ColumnData::Num(v) => ColumnData::Num(rows.map(|r| r.and_then(|r| v[r])).collect()),
            ColumnData::Cat(v) => {
                ColumnData::Cat(rows.map(|r| r.and_then(|r| v[r].clone())).collect())
            }
        }
    }
}

/// A materialized (possibly sampled) single table or full outer join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTable {
    pub origin_tables: Vec<String>,
    pub columns: Vec<ColumnMeta>,
    pub data: Vec<ColumnData>,
    pub sample_rate: f64,
    /// Exact row count of the unsampled table or join.
    pub full_population_size: u64,
    /// Functional dependencies whose dependent column was projected away.
    pub fds: Vec<FunctionalDependency>,
}

impl SampleTable {
    pub fn new(origin_tables: Vec<String>, columns: Vec<ColumnMeta>) -> Self {
        let data = columns.iter().map(|c| ColumnData::empty(c.kind)).collect();
        SampleTable {
            origin_tables,
            columns,
            data,
            sample_rate: 1.0,
            full_population_size: 0,
            fds: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.data.first().map_or(0, |c| c.len())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.column_index(name).map(|i| &self.data[i])
    }

    pub fn value(&self, row: usize, column: usize) -> Value {
        self.data[column].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<Value> {
        self.data.iter().map(|c| c.get(row)).collect()
    }

    pub fn push_row(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.data.len());
        for (c, v) in self.data.iter_mut().zip(row) {
            c.push(v);
        }
    }

    pub fn add_column(&mut self, meta: ColumnMeta, data: ColumnData) {
        debug_assert!(self.data.is_empty() || data.len() == self.num_rows());
        self.columns.push(meta);
        self.data.push(data);
    }

    /// New table with the selected rows, keeping metadata.
    pub fn select_rows(&self, rows: &[usize]) -> SampleTable {
        SampleTable {
            origin_tables: self.origin_tables.clone(),
            columns: self.columns.clone(),
            data: self
                .data
                .iter()
                .map(|c| c.gather(rows.iter().map(|&r| Some(r))))
                .collect(),
            sample_rate: self.sample_rate,
            full_population_size: self.full_population_size,
            fds: self.fds.clone(),
        }
    }

    /// Keep only the named columns, in the given order.
    pub fn project(&self, names: &[&str]) -> Option<SampleTable> {
        let idx: Option<Vec<usize>> = names.iter().map(|n| self.column_index(n)).collect();
        let idx = idx?;
        Some(SampleTable {
            origin_tables: self.origin_tables.clone(),
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            data: idx.iter().map(|&i| self.data[i].clone()).collect(),
            sample_rate: self.sample_rate,
            full_population_size: self.full_population_size,
            fds: self.fds.clone(),
        })
    }
}
