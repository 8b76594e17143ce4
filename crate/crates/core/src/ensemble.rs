//! Ensemble construction, budgeted extension and persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learn::{exact_rspn, learn_rspn, LearnParams};
use crate::par::{self, Execution};
use crate::rdc::{mix_seed, stable_hash, table_dependency};
use crate::schema::{
    apply_fd_projection, full_outer_join_sample, join_size, Database, SampleTable, SchemaGraph,
};
use crate::spn::Rspn;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub learn: LearnParams,
    /// Row cap of each learning sample.
    pub max_rows: usize,
    /// Row cap of the join samples used to measure table dependencies.
    pub dependency_sample_rows: usize,
    /// Largest table set considered by the optimizer.
    pub max_candidate_tables: usize,
    /// Build exact mixtures over distinct rows instead of learning.
    pub exact: bool,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        EnsembleParams {
            learn: LearnParams::default(),
            max_rows: 1_000_000,
            dependency_sample_rows: 10_000,
            max_candidate_tables: 4,
            exact: false,
        }
    }
}

/// Dependency between two tables: the largest coefficient over their
/// attribute pairs. Keys are stored with `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDependency {
    pub a: String,
    pub b: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub schema: SchemaGraph,
    pub rspns: Vec<Rspn>,
    pub dependencies: Vec<TableDependency>,
    /// Wall-clock seconds spent learning the base ensemble.
    pub base_cost: f64,
    /// Proxy cost (columns squared times rows) of the base ensemble.
    pub base_proxy_cost: f64,
    pub budget_factor: f64,
    pub params: EnsembleParams,
}

/// A table set the optimizer may add.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRspn {
    pub table_set: Vec<String>,
    pub mean_rdc: f64,
    pub estimated_cost: f64,
}

/// Canonical model id of a table set.
pub fn model_id(tables: &[String]) -> String {
    tables.join("+")
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Ensemble {
    pub fn dependency(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(1.0);
        }
        let (x, y) = pair_key(a, b);
        self.dependencies
            .iter()
            .find(|d| d.a == x && d.b == y)
            .map(|d| d.value)
    }

    fn set_dependency(&mut self, a: &str, b: &str, value: f64) {
        let (x, y) = pair_key(a, b);
        match self.dependencies.iter_mut().find(|d| d.a == x && d.b == y) {
            Some(d) => d.value = value,
            None => {
                self.dependencies.push(TableDependency { a: x, b: y, value });
                self.dependencies
                    .sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
            }
        }
    }

    pub fn rspn(&self, id: &str) -> Option<&Rspn> {
        self.rspns.iter().find(|r| r.id == id)
    }

    pub fn covers(&self, table: &str) -> bool {
        self.rspns.iter().any(|r| r.covers_table(table))
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.schema.tables {
            if !self.covers(&t.name) {
                return Err(Error::Invariant(format!("table {} is not covered", t.name)));
            }
        }
        for r in &self.rspns {
            let set: BTreeSet<String> = r.table_set.iter().cloned().collect();
            if !self.schema.is_connected(&set) {
                return Err(Error::Invariant(format!("model {} spans a disconnected set", r.id)));
            }
            r.validate()?;
        }
        Ok(())
    }
}

/// Learning view of a table set: sampled join, FD projection with the
/// dictionaries of the full database.
fn learning_sample(db: &Database, tables: &[String], max_rows: usize, seed: u64) -> Result<SampleTable> {
    let sample = full_outer_join_sample(db, tables, max_rows, seed)?;
    let fds: Vec<_> = db
        .schema
        .fds
        .iter()
        .filter(|f| tables.contains(&f.table))
        .cloned()
        .collect();
    let mut view = apply_fd_projection(&sample, &fds);
    for fd in &mut view.fds {
        if let Some(full) = fds.iter().find(|f| f.dependent_column() == fd.dependent_column()) {
            for (k, v) in &full.dictionary {
                fd.dictionary.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
    }
    Ok(view)
}

fn proxy_cost(data: &SampleTable) -> f64 {
    let cols = data.columns.len() as f64;
    cols * cols * data.num_rows() as f64
}

fn build_model(db: &Database, tables: &[String], params: &EnsembleParams, exec: Execution) -> Result<(Rspn, f64)> {
    let seed = mix_seed(params.learn.seed, stable_hash(&model_id(tables)));
    let data = learning_sample(db, tables, params.max_rows, seed)?;
    let cost = proxy_cost(&data);
    let id = model_id(tables);
    let model = if params.exact {
        exact_rspn(&data, &id)?
    } else {
        let learn = LearnParams { seed, ..params.learn };
        learn_rspn(&data, &id, &learn, exec)?
    };
    info!(
        "learned {id}: {} rows, {} nodes",
        data.num_rows(),
        model.nodes.len()
    );
    Ok((model, cost))
}

/// Measured dependency of two tables on a sample of the join of `set`.
fn measure_dependency(db: &Database, set: &[String], a: &str, b: &str, params: &EnsembleParams, exec: Execution) -> Result<f64> {
    let seed = mix_seed(params.learn.seed ^ 0xdeb, stable_hash(&model_id(set)));
    let joined = full_outer_join_sample(db, set, params.dependency_sample_rows, seed)?;
    Ok(table_dependency(a, b, &joined, &params.learn.rdc, exec))
}

/// Table pairs linked by a foreign key, in schema order, deduplicated.
fn fk_pairs(schema: &SchemaGraph) -> Vec<(String, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for fk in &schema.fks {
        if fk.referencing_table == fk.referenced_table {
            continue;
        }
        let key = pair_key(&fk.referencing_table, &fk.referenced_table);
        if seen.insert(key.clone()) {
            out.push(key);
        }
    }
    out
}

/// Base ensemble: a join model per FK pair whose tables are dependent,
/// single-table models for the remaining tables. Dependencies listed in
/// `overrides` replace measured values.
pub fn build_base_ensemble(
    db: &Database,
    params: &EnsembleParams,
    overrides: &BTreeMap<(String, String), f64>,
    exec: Execution,
) -> Result<Ensemble> {
    params.learn.validate()?;
    let started = Instant::now();
    let mut ens = Ensemble {
        schema: db.schema.clone(),
        rspns: Vec::new(),
        dependencies: Vec::new(),
        base_cost: 0.0,
        base_proxy_cost: 0.0,
        budget_factor: 0.0,
        params: *params,
    };
    for ((a, b), v) in overrides {
        ens.set_dependency(a, b, *v);
    }
    let mut sets: Vec<Vec<String>> = Vec::new();
    for (a, b) in fk_pairs(&db.schema) {
        let set = db.schema.in_declaration_order([a.as_str(), b.as_str()]);
        let dep = match ens.dependency(&a, &b) {
            Some(v) => v,
            None => {
                let v = measure_dependency(db, &set, &a, &b, params, exec)?;
                ens.set_dependency(&a, &b, v);
                v
            }
        };
        info!("dependency {a}-{b}: {dep:.3}");
        if dep >= params.learn.rdc_threshold {
            sets.push(set);
        }
    }
    let covered: BTreeSet<&String> = sets.iter().flatten().collect();
    let singles: Vec<Vec<String>> = db
        .schema
        .tables
        .iter()
        .filter(|t| !covered.contains(&t.name))
        .map(|t| vec![t.name.clone()])
        .collect();
    sets.extend(singles);
    let built = par::map(exec, &sets, |s| build_model(db, s, params, exec));
    for b in built {
        let (model, cost) = b?;
        ens.base_proxy_cost += cost;
        ens.rspns.push(model);
    }
    ens.base_cost = started.elapsed().as_secs_f64();
    ens.validate()?;
    Ok(ens)
}

/// Candidate table sets of three or more tables not yet modeled, ranked by
/// mean pairwise dependency (descending), then by proxy cost.
pub fn rank_candidates(ens: &mut Ensemble, db: &Database, exec: Execution) -> Result<Vec<CandidateRspn>> {
    let params = ens.params;
    let existing: BTreeSet<BTreeSet<String>> = ens
        .rspns
        .iter()
        .map(|r| r.table_set.iter().cloned().collect())
        .collect();
    let mut out = Vec::new();
    for set in db.schema.connected_subsets(3, params.max_candidate_tables.max(3)) {
        if existing.contains(&set) {
            continue;
        }
        let tables = db.schema.in_declaration_order(set.iter().map(|s| s.as_str()));
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for (i, a) in tables.iter().enumerate() {
            for b in &tables[i + 1..] {
                let v = match ens.dependency(a, b) {
                    Some(v) => v,
                    None => {
                        let v = measure_dependency(db, &tables, a, b, &params, exec)?;
                        ens.set_dependency(a, b, v);
                        v
                    }
                };
                sum += v;
                pairs += 1;
            }
        }
        let rows = join_size(db, &tables)?.min(params.max_rows as u64) as f64;
        let cols = estimated_columns(&db.schema, &tables) as f64;
        out.push(CandidateRspn {
            table_set: tables,
            mean_rdc: sum / pairs.max(1) as f64,
            estimated_cost: cols * cols * rows,
        });
    }
    out.sort_by(|x, y| {
        y.mean_rdc
            .total_cmp(&x.mean_rdc)
            .then(x.estimated_cost.total_cmp(&y.estimated_cost))
            .then(x.table_set.cmp(&y.table_set))
    });
    Ok(out)
}

/// Columns of the join view of `tables`: declared columns, tuple factors
/// and one indicator per table.
fn estimated_columns(schema: &SchemaGraph, tables: &[String]) -> usize {
    let mut n = 0;
    for t in tables {
        if let Some(def) = schema.table(t) {
            n += def.columns.len() + 1;
        }
        n += schema.fks.iter().filter(|fk| fk.referenced_table == *t).count();
    }
    n
}

/// Extend the ensemble with the best candidates until their proxy cost
/// would exceed `budget_factor` times the base proxy cost.
pub fn optimize_ensemble(mut ens: Ensemble, db: &Database, budget_factor: f64, exec: Execution) -> Result<Ensemble> {
    if budget_factor.is_nan() || budget_factor < 0.0 {
        return Err(Error::Config("budget factor must be non-negative".into()));
    }
    ens.budget_factor = budget_factor;
    if budget_factor == 0.0 {
        return Ok(ens);
    }
    let budget = budget_factor * ens.base_proxy_cost;
    let mut spent = 0.0;
    let mut chosen = Vec::new();
    for c in rank_candidates(&mut ens, db, exec)? {
        if spent + c.estimated_cost > budget {
            break;
        }
        spent += c.estimated_cost;
        chosen.push(c.table_set);
    }
    let params = ens.params;
    let built = par::map(exec, &chosen, |s| build_model(db, s, &params, exec));
    for b in built {
        ens.rspns.push(b?.0);
    }
    ens.validate()?;
    Ok(ens)
}

const MAGIC: &[u8; 8] = b"RSPNENSM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 32 + 32 + 8;

fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Container layout, little endian: magic (8 bytes), version (u32), schema
/// digest (32), body digest (32), body length (u64), body.
pub fn to_bytes(ens: &Ensemble) -> Result<Vec<u8>> {
    let schema = bincode::serialize(&ens.schema).map_err(|e| Error::Persistence(e.to_string()))?;
    let body = bincode::serialize(ens).map_err(|e| Error::Persistence(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&sha256(&schema));
    out.extend_from_slice(&sha256(&body));
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Ensemble> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Persistence("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Persistence("truncated header".into()));
    }
    let schema_digest = &bytes[12..44];
    let body_digest = &bytes[44..76];
    let len = u64::from_le_bytes(bytes[76..84].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != len {
        return Err(Error::Persistence(format!(
            "truncated body: {} of {len} bytes",
            body.len()
        )));
    }
    if sha256(body) != body_digest {
        return Err(Error::Persistence("body checksum mismatch".into()));
    }
    let ens: Ensemble = bincode::deserialize(body).map_err(|e| Error::Persistence(e.to_string()))?;
    let schema = bincode::serialize(&ens.schema).map_err(|e| Error::Persistence(e.to_string()))?;
    if sha256(&schema) != schema_digest {
        return Err(Error::Persistence("schema digest mismatch".into()));
    }
    Ok(ens)
}

pub fn save(ens: &Ensemble, path: &Path) -> Result<()> {
    let bytes = to_bytes(ens)?;
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Ensemble> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
