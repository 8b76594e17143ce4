//! Schema configuration file (TOML).
//!
//! ```toml
//! [[tables]]
//! name = "customer"
//! csv = "customer.csv"          # relative to the config file
//! primary_key = "c_id"
//! columns = [
//!   { name = "c_id", kind = "continuous" },
//!   { name = "c_age", kind = "continuous", nullable = true },
//!   { name = "c_region", kind = "categorical" },
//! ]
//!
//! [[foreign_keys]]
//! table = "orders"
//! column = "c_id"
//! references = "customer.c_id"
//!
//! [[functional_dependencies]]
//! table = "customer"
//! determinant = "zip"
//! dependent = "city"
//! ```

use std::path::Path;

use serde::Deserialize;

use super::{ColumnMeta, ColumnRole, ForeignKeyRel, FunctionalDependency, SchemaGraph, TableDef};
use crate::error::{Error, Result};
use crate::value::ColumnKind;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    tables: Vec<TableEntry>,
    #[serde(default)]
    foreign_keys: Vec<FkEntry>,
    #[serde(default)]
    functional_dependencies: Vec<FdEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    name: String,
    csv: String,
    primary_key: String,
    columns: Vec<ColumnEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnEntry {
    name: String,
    kind: ColumnKind,
    #[serde(default)]
    nullable: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FkEntry {
    table: String,
    column: String,
    references: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FdEntry {
    table: String,
    determinant: String,
    dependent: String,
}

/// Load and validate a schema configuration; CSV paths are resolved
/// relative to the config file and must exist.
pub fn load_schema(config_file: &Path) -> Result<SchemaGraph> {
    let text =
        std::fs::read_to_string(config_file).map_err(|e| Error::io(config_file, e))?;
    let cfg: ConfigFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", config_file.display())))?;
    let base = config_file.parent().unwrap_or(Path::new("."));

    let mut tables = Vec::with_capacity(cfg.tables.len());
    for t in cfg.tables {
        let csv = base.join(&t.csv);
        if !csv.exists() {
            return Err(Error::Config(format!(
                "table {}: csv file {} does not exist",
                t.name,
                csv.display()
            )));
        }
        let columns = t
            .columns
            .into_iter()
            .map(|c| ColumnMeta {
                role: ColumnRole::Attribute {
                    table: t.name.clone(),
                },
                name: c.name,
                kind: c.kind,
                nullable: c.nullable,
            })
            .collect();
        tables.push(TableDef {
            name: t.name,
            columns,
            primary_key: t.primary_key,
            row_count: 0,
            csv: Some(csv),
        });
    }

    let mut fks = Vec::with_capacity(cfg.foreign_keys.len());
    for fk in cfg.foreign_keys {
        let (rt, rc) = fk.references.split_once('.').ok_or_else(|| {
            Error::Config(format!(
                "foreign key {}.{}: references must be written table.column, got {:?}",
                fk.table, fk.column, fk.references
            ))
        })?;
        fks.push(ForeignKeyRel::new((&fk.table, &fk.column), (rt, rc)));
    }

    let fds = cfg
        .functional_dependencies
        .into_iter()
        .map(|fd| FunctionalDependency::declared(&fd.table, &fd.determinant, &fd.dependent))
        .collect();

    SchemaGraph::new(tables, fks, fds)
}
