//! Schema description, configuration loading, ingestion and join
//! materialization.

mod config;
mod ingest;
mod join;
mod table;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::{ColumnKind, Datum};

pub use config::load_schema;
pub use ingest::{
    apply_fd_projection, compute_tuple_factors, ingest_table, parse_csv_table, Database,
};
pub use join::{
    full_outer_join_sample, join_row_values, join_rows_containing, join_rows_containing_any, join_size, JoinPlan, JoinRow,
    DEFAULT_MAX_ROWS,
};
pub use table::{ColumnData, SampleTable};

/// What a column of a (possibly joined) table represents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    /// Ordinary attribute of `table`.
    Attribute { table: String },
    /// Primary- or foreign-key column; kept for joins, not learned.
    Key { table: String },
    /// Tuple factor stored on the primary-key side `referenced`: number of
    /// rows of `referencing` pointing at the tuple. `at_least_one` marks the
    /// join-side variant whose zeros were replaced by one.
    TupleFactor {
        referenced: String,
        referencing: String,
        at_least_one: bool,
    },
    /// 1 when the joined row carries a real tuple of `table`, 0 for padding.
    Indicator { table: String },
}

impl ColumnRole {
    pub fn is_synthetic(&self) -> bool {
        matches!(
            self,
            ColumnRole::TupleFactor { .. } | ColumnRole::Indicator { .. }
        )
    }

    /// Table whose tuple this column belongs to (for factors: the PK side).
    pub fn owner(&self) -> &str {
        match self {
            ColumnRole::Attribute { table }
            | ColumnRole::Key { table }
            | ColumnRole::Indicator { table } => table,
            ColumnRole::TupleFactor { referenced, .. } => referenced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    pub nullable: bool,
    pub role: ColumnRole,
}

impl ColumnMeta {
    pub fn attribute(table: &str, name: &str, kind: ColumnKind, nullable: bool) -> Self {
        ColumnMeta {
            name: name.to_string(),
            kind,
            nullable,
            role: ColumnRole::Attribute {
                table: table.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub columns: Vec<ColumnMeta>,
    pub primary_key: String,
    pub row_count: u64,
    /// Source CSV; absent for in-memory tables.
    pub csv: Option<PathBuf>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKeyRel {
    pub referencing_table: String,
    pub referencing_column: String,
    pub referenced_table: String,
    pub referenced_column: String,
}

impl ForeignKeyRel {
    pub fn new(from: (&str, &str), to: (&str, &str)) -> Self {
        ForeignKeyRel {
            referencing_table: from.0.to_string(),
            referencing_column: from.1.to_string(),
            referenced_table: to.0.to_string(),
            referenced_column: to.1.to_string(),
        }
    }

    pub fn touches(&self, table: &str) -> bool {
        self.referencing_table == table || self.referenced_table == table
    }

    pub fn other(&self, table: &str) -> &str {
        if self.referencing_table == table {
            &self.referenced_table
        } else {
            &self.referencing_table
        }
    }

    /// Name of the tuple-factor column this relationship adds to the
    /// referenced (primary-key) table.
    pub fn factor_column(&self) -> String {
        factor_column(&self.referenced_table, &self.referencing_table)
    }
}

pub fn factor_column(referenced: &str, referencing: &str) -> String {
    format!("F[{referenced}<-{referencing}]")
}

pub fn indicator_column(table: &str) -> String {
    format!("N[{table}]")
}

pub fn qualified(table: &str, column: &str) -> String {
    format!("{table}.{column}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub table: String,
    pub determinant: String,
    pub dependent: String,
    /// Value of the dependent column for every observed determinant value.
    pub dictionary: BTreeMap<Datum, Datum>,
}

impl FunctionalDependency {
    pub fn declared(table: &str, determinant: &str, dependent: &str) -> Self {
        FunctionalDependency {
            table: table.to_string(),
            determinant: determinant.to_string(),
            dependent: dependent.to_string(),
            dictionary: BTreeMap::new(),
        }
    }

    pub fn determinant_column(&self) -> String {
        qualified(&self.table, &self.determinant)
    }

    pub fn dependent_column(&self) -> String {
        qualified(&self.table, &self.dependent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaGraph {
    pub tables: Vec<TableDef>,
    pub fks: Vec<ForeignKeyRel>,
    pub fds: Vec<FunctionalDependency>,
    /// Set when the FK graph has more than one connected component.
    pub multi_component: bool,
}

impl SchemaGraph {
    /// Validate and assemble a schema.
    pub fn new(
        tables: Vec<TableDef>,
        fks: Vec<ForeignKeyRel>,
        fds: Vec<FunctionalDependency>,
    ) -> Result<Self> {
        let mut names = BTreeSet::new();
        for t in &tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate table {}", t.name)));
            }
            let mut cols = BTreeSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(Error::Config(format!(
                        "duplicate column {}.{}",
                        t.name, c.name
                    )));
                }
            }
            if t.column(&t.primary_key).is_none() {
                return Err(Error::Config(format!(
                    "primary key {}.{} is not a declared column",
                    t.name, t.primary_key
                )));
            }
        }
        for fk in &fks {
            let dangling = |reason: &str| Error::DanglingForeignKey {
                from_table: fk.referencing_table.clone(),
                from_column: fk.referencing_column.clone(),
                to_table: fk.referenced_table.clone(),
                to_column: fk.referenced_column.clone(),
                reason: reason.to_string(),
            };
            let from = tables
                .iter()
                .find(|t| t.name == fk.referencing_table)
                .ok_or_else(|| dangling("referencing table does not exist"))?;
            if from.column(&fk.referencing_column).is_none() {
                return Err(dangling("referencing column does not exist"));
            }
            let to = tables
                .iter()
                .find(|t| t.name == fk.referenced_table)
                .ok_or_else(|| dangling("referenced table does not exist"))?;
            if to.primary_key != fk.referenced_column {
                return Err(dangling("referenced column is not the primary key"));
            }
            if fk.referencing_table == fk.referenced_table {
                return Err(dangling("self references are not supported"));
            }
        }
        for fd in &fds {
            let t = tables.iter().find(|t| t.name == fd.table);
            let ok = t.is_some_and(|t| {
                t.column(&fd.determinant).is_some() && t.column(&fd.dependent).is_some()
            });
            if !ok {
                return Err(Error::FdColumnNotFound {
                    table: fd.table.clone(),
                    determinant: fd.determinant.clone(),
                    dependent: fd.dependent.clone(),
                });
            }
        }
        let mut schema = SchemaGraph {
            tables,
            fks,
            fds,
            multi_component: false,
        };
        schema.multi_component = schema.components().len() > 1;
        // Key columns are kept for joins but never learned.
        for ti in 0..schema.tables.len() {
            for ci in 0..schema.tables[ti].columns.len() {
                let t = &schema.tables[ti];
                if schema.is_key_column(&t.name, &t.columns[ci].name) {
                    let table = t.name.clone();
                    schema.tables[ti].columns[ci].role = ColumnRole::Key { table };
                }
            }
        }
        Ok(schema)
    }

    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn require_table(&self, name: &str) -> Result<&TableDef> {
        self.table(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    /// Tables sorted by declaration order.
    pub fn in_declaration_order<'a>(&self, set: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let set: BTreeSet<&str> = set.into_iter().collect();
        self.tables
            .iter()
            .filter(|t| set.contains(t.name.as_str()))
            .map(|t| t.name.clone())
            .collect()
    }

    /// Is `name` a PK or FK column of `table`?
    pub fn is_key_column(&self, table: &str, name: &str) -> bool {
        self.table(table).is_some_and(|t| t.primary_key == name)
            || self
                .fks
                .iter()
                .any(|fk| fk.referencing_table == table && fk.referencing_column == name)
    }

    /// FK edges between two tables (either direction).
    pub fn edges_between(&self, a: &str, b: &str) -> Vec<&ForeignKeyRel> {
        self.fks
            .iter()
            .filter(|fk| fk.touches(a) && fk.other(a) == b)
            .collect()
    }

    /// FK edges with both endpoints in `set`.
    pub fn edges_within(&self, set: &BTreeSet<String>) -> Vec<&ForeignKeyRel> {
        self.fks
            .iter()
            .filter(|fk| set.contains(&fk.referencing_table) && set.contains(&fk.referenced_table))
            .collect()
    }

    pub fn is_connected(&self, set: &BTreeSet<String>) -> bool {
        let Some(start) = set.iter().next() else {
            return false;
        };
        let mut seen = BTreeSet::from([start.clone()]);
        let mut stack = vec![start.clone()];
        while let Some(t) = stack.pop() {
            for fk in &self.fks {
                if fk.touches(&t) {
                    let o = fk.other(&t).to_string();
                    if set.contains(&o) && seen.insert(o.clone()) {
                        stack.push(o);
                    }
                }
            }
        }
        seen.len() == set.len()
    }

    /// Connected components of the FK graph, each in declaration order.
    pub fn components(&self) -> Vec<Vec<String>> {
        let mut comp: HashMap<&str, usize> = HashMap::new();
        let mut out: Vec<Vec<String>> = Vec::new();
        for t in &self.tables {
            if comp.contains_key(t.name.as_str()) {
                continue;
            }
            let id = out.len();
            let mut members = vec![];
            let mut stack = vec![t.name.as_str()];
            comp.insert(&t.name, id);
            while let Some(x) = stack.pop() {
                members.push(x.to_string());
                for fk in &self.fks {
                    if fk.touches(x) {
                        let o = fk.other(x);
                        if !comp.contains_key(o) {
                            comp.insert(o, id);
                            stack.push(o);
                        }
                    }
                }
            }
            out.push(self.in_declaration_order(members.iter().map(|s| s.as_str())));
        }
        out
    }

    /// Connected table subsets of the given sizes (each sorted by name).
    pub fn connected_subsets(&self, min: usize, max: usize) -> Vec<BTreeSet<String>> {
        let mut found: BTreeSet<Vec<String>> = BTreeSet::new();
        let mut frontier: Vec<BTreeSet<String>> = self
            .tables
            .iter()
            .map(|t| BTreeSet::from([t.name.clone()]))
            .collect();
        for size in 1..=max {
            if size >= min {
                for s in &frontier {
                    found.insert(s.iter().cloned().collect());
                }
            }
            if size == max {
                break;
            }
            let mut next: BTreeSet<Vec<String>> = BTreeSet::new();
            for s in &frontier {
                for fk in &self.fks {
                    let (a, b) = (&fk.referencing_table, &fk.referenced_table);
                    let add = if s.contains(a) && !s.contains(b) {
                        b
                    } else if s.contains(b) && !s.contains(a) {
                        a
                    } else {
                        continue;
                    };
                    let mut n = s.clone();
                    n.insert(add.clone());
                    next.insert(n.into_iter().collect());
                }
            }
            frontier = next.into_iter().map(|v| v.into_iter().collect()).collect();
        }
        found.into_iter().map(|v| v.into_iter().collect()).collect()
    }
}
