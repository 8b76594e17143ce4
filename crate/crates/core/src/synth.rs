//! Seeded synthetic relational data with dependencies inside and across
//! tables.
//!
//! Table `t0` is the root; every later table references one earlier table.
//! Each table has a categorical `cat`, an integer-valued `num` and a
//! nullable integer `opt`. A child row's parent is drawn with a weight that
//! grows with the parent's category, its `cat` copies the parent's with
//! probability `correlation`, and its `num` follows the parent's `num`.

use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{parse_csv_table, ColumnMeta, ColumnRole, Database, ForeignKeyRel, SchemaGraph, TableDef};
use crate::value::ColumnKind;

pub const CATEGORIES: [&str; 5] = ["A", "B", "C", "D", "E"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Number of tables, at least 1.
    pub tables: usize,
    pub root_rows: usize,
    /// Mean rows of a child table per root row.
    pub fanout: f64,
    /// Probability that a child copies its parent's category.
    pub correlation: f64,
    /// Fraction of NULLs in `opt`.
    pub null_fraction: f64,
    /// Parent of table `i` is `parents[i-1]`; empty means a chain.
    pub parents: Vec<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tables: 3,
            root_rows: 10_000,
            fanout: 2.0,
            correlation: 0.7,
            null_fraction: 0.1,
            parents: Vec::new(),
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn parent_of(&self, i: usize) -> usize {
        self.parents.get(i - 1).copied().unwrap_or(i - 1)
    }

    pub fn table_name(i: usize) -> String {
        format!("t{i}")
    }
}

struct Rows {
    cat: Vec<usize>,
    num: Vec<i64>,
    csv: String,
}

fn table_def(i: usize) -> TableDef {
    let name = SynthConfig::table_name(i);
    let attr = |c: &str, kind, nullable| ColumnMeta {
        name: c.to_string(),
        kind,
        nullable,
        role: ColumnRole::Attribute { table: name.clone() },
    };
    let mut columns = vec![attr("id", ColumnKind::Continuous, false)];
    if i > 0 {
        columns.push(attr("parent_id", ColumnKind::Continuous, false));
    }
    columns.push(attr("cat", ColumnKind::Categorical, false));
    columns.push(attr("num", ColumnKind::Continuous, false));
    columns.push(attr("opt", ColumnKind::Continuous, true));
    TableDef {
        name,
        columns,
        primary_key: "id".into(),
        row_count: 0,
        csv: None,
    }
}

fn schema(cfg: &SynthConfig) -> Result<SchemaGraph> {
    if cfg.tables == 0 {
        return Err(Error::Config("synthetic schema needs at least one table".into()));
    }
    let tables = (0..cfg.tables).map(table_def).collect();
    let fks = (1..cfg.tables)
        .map(|i| {
            let p = cfg.parent_of(i);
            if p >= i {
                return Err(Error::Config(format!("table {i} must reference an earlier table")));
            }
            Ok(ForeignKeyRel::new(
                (&SynthConfig::table_name(i), "parent_id"),
                (&SynthConfig::table_name(p), "id"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    SchemaGraph::new(tables, fks, Vec::new())
}

fn generate_rows(cfg: &SynthConfig, rng: &mut ChaCha8Rng, parent: Option<&Rows>, n: usize) -> Rows {
    let noise = Normal::<f64>::new(0.0, 4.0).expect("valid");
    let skew = WeightedIndex::new([8.0, 5.0, 3.0, 2.0, 1.0]).expect("valid");
    let weights = parent.map(|p| WeightedIndex::new(p.cat.iter().map(|&c| 1.0 + c as f64)).expect("valid"));
    let mut out = Rows {
        cat: Vec::with_capacity(n),
        num: Vec::with_capacity(n),
        csv: String::new(),
    };
    out.csv.push_str(if parent.is_some() { "id,parent_id,cat,num,opt\n" } else { "id,cat,num,opt\n" });
    for r in 0..n {
        let (pid, cat, num) = match (parent, &weights) {
            (Some(p), Some(w)) => {
                let pr = w.sample(rng);
                let cat = if rng.random::<f64>() < cfg.correlation {
                    p.cat[pr]
                } else {
                    skew.sample(rng)
                };
                let num = (p.num[pr] as f64 * 0.5 + 5.0 * cat as f64 + noise.sample(rng)).round() as i64;
                (Some(pr), cat, num)
            }
            _ => {
                let cat = skew.sample(rng);
                (None, cat, (10.0 * cat as f64 + 20.0 + noise.sample(rng)).round() as i64)
            }
        };
        let opt = if rng.random::<f64>() < cfg.null_fraction {
            String::new()
        } else {
            ((num / 3) + rng.random_range(0..3)).to_string()
        };
        match pid {
            Some(p) => writeln!(out.csv, "{r},{p},{},{num},{opt}", CATEGORIES[cat]),
            None => writeln!(out.csv, "{r},{},{num},{opt}", CATEGORIES[cat]),
        }
        .expect("string write");
        out.cat.push(cat);
        out.num.push(num);
    }
    out
}

fn generate_all(cfg: &SynthConfig) -> Result<(SchemaGraph, Vec<Rows>)> {
    let schema = schema(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut all: Vec<Rows> = Vec::with_capacity(cfg.tables);
    for i in 0..cfg.tables {
        let rows = if i == 0 {
            generate_rows(cfg, &mut rng, None, cfg.root_rows)
        } else {
            let n = (cfg.root_rows as f64 * cfg.fanout).round() as usize;
            generate_rows(cfg, &mut rng, Some(&all[cfg.parent_of(i)]), n)
        };
        all.push(rows);
    }
    Ok((schema, all))
}

/// Generate a database in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Database> {
    let (schema, rows) = generate_all(cfg)?;
    let tables = schema
        .tables
        .iter()
        .zip(&rows)
        .map(|(def, r)| parse_csv_table(r.csv.as_bytes(), def))
        .collect::<Result<Vec<_>>>()?;
    let mut schema = schema;
    for (def, r) in schema.tables.iter_mut().zip(&rows) {
        def.row_count = r.cat.len() as u64;
    }
    Database::from_tables(schema, tables)
}

/// Write CSV files and a `schema.toml` loadable by the CLI into `dir`.
pub fn write_dir(cfg: &SynthConfig, dir: &Path) -> Result<()> {
    let (schema, rows) = generate_all(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut toml = String::new();
    for (def, r) in schema.tables.iter().zip(&rows) {
        let file = format!("{}.csv", def.name);
        let path = dir.join(&file);
        std::fs::write(&path, &r.csv).map_err(|e| Error::io(&path, e))?;
        writeln!(toml, "[[tables]]\nname = \"{}\"\ncsv = \"{file}\"\nprimary_key = \"id\"\ncolumns = [", def.name)
            .expect("string write");
        for c in &def.columns {
            let kind = match c.kind {
                ColumnKind::Categorical => "categorical",
                ColumnKind::Continuous => "continuous",
            };
            writeln!(toml, "  {{ name = \"{}\", kind = \"{kind}\", nullable = {} }},", c.name, c.nullable)
                .expect("string write");
        }
        toml.push_str("]\n\n");
    }
    for fk in &schema.fks {
        writeln!(
            toml,
            "[[foreign_keys]]\ntable = \"{}\"\ncolumn = \"{}\"\nreferences = \"{}.{}\"\n",
            fk.referencing_table, fk.referencing_column, fk.referenced_table, fk.referenced_column
        )
        .expect("string write");
    }
    let path = dir.join("schema.toml");
    std::fs::write(&path, toml).map_err(|e| Error::io(&path, e))
}
