use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use log::warn;

use super::table::{ColumnData, SampleTable};
use super::{qualified, ColumnMeta, ColumnRole, FunctionalDependency, SchemaGraph, TableDef};
use crate::error::{Error, Result};
use crate::value::{display_value, Datum, Value};

/// Parse CSV text for `def`. Header must match the declared columns
/// (any order); an empty field is NULL.
pub fn parse_csv_table<R: Read>(reader: R, def: &TableDef) -> Result<SampleTable> {
    let csv_err = |message: String| Error::Csv {
        table: def.name.clone(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_err(e.to_string()))?.clone();
    if headers.len() != def.columns.len() {
        return Err(csv_err(format!(
            "header has {} fields, schema declares {}",
            headers.len(),
            def.columns.len()
        )));
    }
    // position of each declared column in the CSV
    let mut positions = Vec::with_capacity(def.columns.len());
    for c in &def.columns {
        let pos = headers
            .iter()
            .position(|h| h == c.name)
            .ok_or_else(|| csv_err(format!("header is missing column {}", c.name)))?;
        positions.push(pos);
    }

    let columns: Vec<ColumnMeta> = def
        .columns
        .iter()
        .map(|c| ColumnMeta {
            name: qualified(&def.name, &c.name),
            ..c.clone()
        })
        .collect();
    let mut table = SampleTable::new(vec![def.name.clone()], columns);
    let pk_col = def
        .columns
        .iter()
        .position(|c| c.name == def.primary_key)
        .expect("validated schema");
    let mut seen_pk: HashMap<Datum, ()> = HashMap::new();

    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_err(e.to_string()))?;
        for (ci, c) in def.columns.iter().enumerate() {
            let raw = record.get(positions[ci]).unwrap_or("");
            let value: Value = if raw.is_empty() {
                if ci == pk_col {
                    return Err(Error::TypeParse {
                        table: def.name.clone(),
                        row: row_no + 1,
                        column: c.name.clone(),
                        value: raw.to_string(),
                        kind: "non-NULL primary key",
                    });
                }
                None
            } else {
                Some(Datum::parse(raw, c.kind).ok_or_else(|| Error::TypeParse {
                    table: def.name.clone(),
                    row: row_no + 1,
                    column: c.name.clone(),
                    value: raw.to_string(),
                    kind: c.kind.name(),
                })?)
            };
            if ci == pk_col {
                let key = value.clone().expect("checked above");
                if seen_pk.insert(key.clone(), ()).is_some() {
                    return Err(Error::DuplicatePrimaryKey {
                        table: def.name.clone(),
                        column: c.name.clone(),
                        value: key.to_string(),
                    });
                }
            }
            table.data[ci].push(value);
        }
    }
    table.full_population_size = table.num_rows() as u64;
    Ok(table)
}

/// Load one table from a CSV file.
pub fn ingest_table(csv: &Path, def: &TableDef) -> Result<SampleTable> {
    let file = std::fs::File::open(csv).map_err(|e| Error::io(csv, e))?;
    parse_csv_table(std::io::BufReader::new(file), def)
}

/// Add one `F[S<-T]` column to every referenced table `S`, counting the
/// rows of the referencing table `T` that point at each tuple.
pub fn compute_tuple_factors(schema: &SchemaGraph, tables: &mut [SampleTable]) -> Result<()> {
    for fk in &schema.fks {
        let s_idx = schema.table_index(&fk.referenced_table).expect("validated");
        let t_idx = schema.table_index(&fk.referencing_table).expect("validated");
        let fk_col = qualified(&fk.referencing_table, &fk.referencing_column);
        let pk_col = qualified(&fk.referenced_table, &fk.referenced_column);
        let mut counts: HashMap<Datum, u64> = HashMap::new();
        {
            let t = &tables[t_idx];
            let col = t
                .column(&fk_col)
                .ok_or_else(|| Error::UnknownColumn(fk_col.clone()))?;
            for r in 0..t.num_rows() {
                if let Some(v) = col.get(r) {
                    *counts.entry(v).or_default() += 1;
                }
            }
        }
        let s = &mut tables[s_idx];
        let pk = s
            .column(&pk_col)
            .ok_or_else(|| Error::UnknownColumn(pk_col.clone()))?;
        let values: Vec<Option<f64>> = (0..s.num_rows())
            .map(|r| {
                let n = pk.get(r).and_then(|k| counts.get(&k).copied()).unwrap_or(0);
                Some(n as f64)
            })
            .collect();
        s.add_column(
            ColumnMeta {
                name: fk.factor_column(),
                kind: crate::value::ColumnKind::Continuous,
                nullable: false,
                role: ColumnRole::TupleFactor {
                    referenced: fk.referenced_table.clone(),
                    referencing: fk.referencing_table.clone(),
                    at_least_one: false,
                },
            },
            ColumnData::Num(values),
        );
    }
    Ok(())
}

/// Build the dictionary of a functional dependency from data; `None` when
/// some determinant value maps to two different dependent values.
fn fd_dictionary(table: &SampleTable, fd: &FunctionalDependency) -> Option<BTreeMap<Datum, Datum>> {
    let a = table.column(&fd.determinant_column())?;
    let b = table.column(&fd.dependent_column())?;
    let mut dict: BTreeMap<Datum, Datum> = BTreeMap::new();
    for r in 0..table.num_rows() {
        let (Some(av), Some(bv)) = (a.get(r), b.get(r)) else {
            continue;
        };
        match dict.get(&av) {
            Some(prev) if *prev != bv => return None,
            Some(_) => {}
            None => {
                dict.insert(av, bv);
            }
        }
    }
    Some(dict)
}

/// Remove the dependent columns of valid functional dependencies from the
/// learning view and keep their dictionaries. Violated dependencies are
/// dropped with a warning and both columns stay.
pub fn apply_fd_projection(table: &SampleTable, fds: &[FunctionalDependency]) -> SampleTable {
    let mut out = table.clone();
    for fd in fds {
        if out.column_index(&fd.determinant_column()).is_none() {
            continue;
        }
        let Some(idx) = out.column_index(&fd.dependent_column()) else {
            continue;
        };
        match fd_dictionary(&out, fd) {
            Some(dictionary) => {
                out.columns.remove(idx);
                out.data.remove(idx);
                out.fds.retain(|f| f.dependent_column() != fd.dependent_column());
                out.fds.push(FunctionalDependency {
                    dictionary,
                    ..fd.clone()
                });
            }
            None => warn!(
                "functional dependency {} -> {} violated by data; keeping both columns",
                fd.determinant_column(),
                fd.dependent_column()
            ),
        }
    }
    out
}

/// All base tables of a schema, augmented with tuple-factor columns, with
/// primary-key and foreign-key indexes.
#[derive(Debug, Clone)]
pub struct Database {
    pub schema: SchemaGraph,
    pub tables: Vec<SampleTable>,
    pk_index: Vec<HashMap<Datum, usize>>,
    /// Per FK: referenced key -> referencing rows.
    children: Vec<HashMap<Datum, Vec<usize>>>,
}

impl Database {
    /// Read every table's CSV and build the augmented database.
    pub fn load(mut schema: SchemaGraph) -> Result<Self> {
        let mut tables = Vec::with_capacity(schema.tables.len());
        for def in &schema.tables {
            let path = def.csv.as_ref().ok_or_else(|| {
                Error::Config(format!("table {} has no csv path", def.name))
            })?;
            tables.push(ingest_table(path, def)?);
        }
        for (def, t) in schema.tables.iter_mut().zip(&tables) {
            def.row_count = t.num_rows() as u64;
        }
        Self::from_tables(schema, tables)
    }

    /// Assemble from already-parsed tables (one per schema table, in
    /// declaration order, with qualified column names).
    pub fn from_tables(mut schema: SchemaGraph, mut tables: Vec<SampleTable>) -> Result<Self> {
        if tables.len() != schema.tables.len() {
            return Err(Error::Config(format!(
                "expected {} tables, got {}",
                schema.tables.len(),
                tables.len()
            )));
        }
        for (def, t) in schema.tables.iter_mut().zip(&mut tables) {
            def.row_count = t.num_rows() as u64;
            t.full_population_size = def.row_count;
        }
        let mut db = Database {
            pk_index: Vec::new(),
            children: Vec::new(),
            schema,
            tables,
        };
        db.build_indexes()?;
        let schema = db.schema.clone();
        compute_tuple_factors(&schema, &mut db.tables)?;
        // FD dictionaries are learned from the data.
        for fd in &mut db.schema.fds {
            let ti = schema.table_index(&fd.table).expect("validated");
            match fd_dictionary(&db.tables[ti], fd) {
                Some(d) => fd.dictionary = d,
                None => warn!(
                    "functional dependency {} -> {} violated by data",
                    fd.determinant_column(),
                    fd.dependent_column()
                ),
            }
        }
        Ok(db)
    }

    fn build_indexes(&mut self) -> Result<()> {
        self.pk_index.clear();
        for (def, t) in self.schema.tables.iter().zip(&self.tables) {
            let pk = t
                .column(&qualified(&def.name, &def.primary_key))
                .ok_or_else(|| Error::UnknownColumn(qualified(&def.name, &def.primary_key)))?;
            let mut idx = HashMap::with_capacity(t.num_rows());
            for r in 0..t.num_rows() {
                let key = pk.get(r).ok_or_else(|| Error::TypeParse {
                    table: def.name.clone(),
                    row: r + 1,
                    column: def.primary_key.clone(),
                    value: String::new(),
                    kind: "non-NULL primary key",
                })?;
                if idx.insert(key.clone(), r).is_some() {
                    return Err(Error::DuplicatePrimaryKey {
                        table: def.name.clone(),
                        column: def.primary_key.clone(),
                        value: key.to_string(),
                    });
                }
            }
            self.pk_index.push(idx);
        }
        self.children.clear();
        for fk in &self.schema.fks {
            let ti = self.schema.table_index(&fk.referencing_table).expect("validated");
            let si = self.schema.table_index(&fk.referenced_table).expect("validated");
            let col_name = qualified(&fk.referencing_table, &fk.referencing_column);
            let col = self.tables[ti]
                .column(&col_name)
                .ok_or_else(|| Error::UnknownColumn(col_name.clone()))?;
            let mut map: HashMap<Datum, Vec<usize>> = HashMap::new();
            for r in 0..self.tables[ti].num_rows() {
                if let Some(v) = col.get(r) {
                    if !self.pk_index[si].contains_key(&v) {
                        return Err(Error::ReferentialIntegrity {
                            table: fk.referencing_table.clone(),
                            column: fk.referencing_column.clone(),
                            value: v.to_string(),
                            referenced: fk.referenced_table.clone(),
                        });
                    }
                    map.entry(v).or_default().push(r);
                }
            }
            self.children.push(map);
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Option<&SampleTable> {
        self.schema.table_index(name).map(|i| &self.tables[i])
    }

    pub fn require(&self, name: &str) -> Result<&SampleTable> {
        self.table(name)
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn row_by_key(&self, table: &str, key: &Datum) -> Option<usize> {
        let ti = self.schema.table_index(table)?;
        self.pk_index[ti].get(key).copied()
    }

    pub fn primary_key_of(&self, table: &str, row: usize) -> Option<Datum> {
        let ti = self.schema.table_index(table)?;
        let def = &self.schema.tables[ti];
        self.tables[ti]
            .column(&qualified(&def.name, &def.primary_key))?
            .get(row)
    }

    /// Index of the FK in `schema.fks`.
    pub fn fk_index(&self, fk: &super::ForeignKeyRel) -> usize {
        self.schema.fks.iter().position(|f| f == fk).expect("known fk")
    }

    /// Rows of the referencing table that point at `key`.
    pub fn referencing_rows(&self, fk_idx: usize, key: &Datum) -> &[usize] {
        self.children[fk_idx]
            .get(key)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Row of the referenced table a referencing row points at.
    pub fn referenced_row(&self, fk_idx: usize, referencing_row: usize) -> Option<usize> {
        let fk = &self.schema.fks[fk_idx];
        let t = self.table(&fk.referencing_table)?;
        let v = t
            .column(&qualified(&fk.referencing_table, &fk.referencing_column))?
            .get(referencing_row)?;
        self.row_by_key(&fk.referenced_table, &v)
    }

    /// Insert a base row given as values for the declared columns (in
    /// declaration order). Tuple factors of referenced rows are updated.
    /// Returns the new row index.
    pub fn insert_row(&mut self, table: &str, values: Vec<Value>) -> Result<usize> {
        let ti = self
            .schema
            .table_index(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let def = self.schema.tables[ti].clone();
        if values.len() != def.columns.len() {
            return Err(Error::Update(format!(
                "{table}: expected {} values, got {}",
                def.columns.len(),
                values.len()
            )));
        }
        let pk_pos = def
            .columns
            .iter()
            .position(|c| c.name == def.primary_key)
            .expect("validated");
        let key = values[pk_pos]
            .clone()
            .ok_or_else(|| Error::Update(format!("{table}: NULL primary key")))?;
        if self.pk_index[ti].contains_key(&key) {
            return Err(Error::DuplicatePrimaryKey {
                table: table.to_string(),
                column: def.primary_key.clone(),
                value: key.to_string(),
            });
        }
        // referential integrity of the new row
        let mut parents = Vec::new();
        for (fi, fk) in self.schema.fks.iter().enumerate() {
            if fk.referencing_table != table {
                continue;
            }
            let pos = def
                .columns
                .iter()
                .position(|c| c.name == fk.referencing_column)
                .expect("validated");
            if let Some(v) = &values[pos] {
                let si = self.schema.table_index(&fk.referenced_table).expect("validated");
                if !self.pk_index[si].contains_key(v) {
                    return Err(Error::ReferentialIntegrity {
                        table: table.to_string(),
                        column: fk.referencing_column.clone(),
                        value: v.to_string(),
                        referenced: fk.referenced_table.clone(),
                    });
                }
                parents.push((fi, v.clone()));
            }
        }
        let row = self.tables[ti].num_rows();
        let mut full_row = values;
        // tuple factors of the new row: nothing references it yet
        while full_row.len() < self.tables[ti].columns.len() {
            full_row.push(Some(Datum::num(0.0)));
        }
        self.tables[ti].push_row(full_row);
        self.tables[ti].full_population_size += 1;
        self.schema.tables[ti].row_count += 1;
        self.pk_index[ti].insert(key, row);
        for (fi, v) in parents {
            self.children[fi].entry(v.clone()).or_default().push(row);
            self.bump_factor(fi, &v, 1.0);
        }
        Ok(row)
    }

    /// Delete the row with primary key `key`. Fails if other rows still
    /// reference it.
    pub fn delete_row(&mut self, table: &str, key: &Datum) -> Result<Vec<Value>> {
        let ti = self
            .schema
            .table_index(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let row = *self.pk_index[ti]
            .get(key)
            .ok_or_else(|| Error::Update(format!("{table}: no row with key {key}")))?;
        for (fi, fk) in self.schema.fks.iter().enumerate() {
            if fk.referenced_table == table && !self.referencing_rows(fi, key).is_empty() {
                return Err(Error::Update(format!(
                    "{table}: row {key} is still referenced by {}",
                    fk.referencing_table
                )));
            }
        }
        let def = self.schema.tables[ti].clone();
        let old = self.tables[ti].row(row);
        // detach from parents
        for fi in 0..self.schema.fks.len() {
            let fk = self.schema.fks[fi].clone();
            if fk.referencing_table != table {
                continue;
            }
            let pos = def
                .columns
                .iter()
                .position(|c| c.name == fk.referencing_column)
                .expect("validated");
            if let Some(v) = &old[pos] {
                if let Some(list) = self.children[fi].get_mut(v) {
                    list.retain(|&r| r != row);
                    if list.is_empty() {
                        self.children[fi].remove(v);
                    }
                }
                self.bump_factor(fi, v, -1.0);
            }
        }
        // swap-remove the row and repair indexes of the moved row
        let last = self.tables[ti].num_rows() - 1;
        for c in &mut self.tables[ti].data {
            match c {
                ColumnData::Num(v) => {
                    v.swap_remove(row);
                }
                ColumnData::Cat(v) => {
                    v.swap_remove(row);
                }
            }
        }
        self.pk_index[ti].remove(key);
        if row != last {
            let moved_key = self
                .primary_key_of(table, row)
                .expect("moved row has a key");
            self.pk_index[ti].insert(moved_key, row);
            for fi in 0..self.schema.fks.len() {
                let fk = &self.schema.fks[fi];
                if fk.referencing_table != table {
                    continue;
                }
                for list in self.children[fi].values_mut() {
                    for r in list.iter_mut() {
                        if *r == last {
                            *r = row;
                        }
                    }
                }
            }
        }
        self.tables[ti].full_population_size -= 1;
        self.schema.tables[ti].row_count -= 1;
        let _ = display_value;
        Ok(old[..def.columns.len()].to_vec())
    }

    fn bump_factor(&mut self, fk_idx: usize, key: &Datum, delta: f64) {
        let fk = self.schema.fks[fk_idx].clone();
        let si = self.schema.table_index(&fk.referenced_table).expect("validated");
        let row = self.pk_index[si][key];
        let col = self.tables[si]
            .column_index(&fk.factor_column())
            .expect("factor column present");
        if let ColumnData::Num(v) = &mut self.tables[si].data[col] {
            v[row] = Some(v[row].unwrap_or(0.0) + delta);
        }
    }
}
