//! Accuracy evaluation against the scan oracle and random workloads.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::oracle::ScanOracle;
use crate::par::{self, Execution};
use crate::query::{execute, parse_query, Aggregate, QueryOptions};
use crate::schema::{ColumnRole, Database};
use crate::value::{ColumnKind, Datum};

/// `max(est/true, true/est)` with both sides floored at 1.
pub fn q_error(estimate: f64, truth: f64) -> f64 {
    let (e, t) = (estimate.max(1.0), truth.max(1.0));
    (e / t).max(t / e)
}

pub fn relative_error(estimate: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        estimate.abs()
    } else {
        ((estimate - truth) / truth).abs()
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query: String,
    pub truth: Option<f64>,
    pub estimate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub relative_error: Option<f64>,
    /// Set for COUNT queries.
    pub q_error: Option<f64>,
    pub latency_us: f64,
    /// Reason the query was skipped.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<QueryRecord>,
    pub median_q_error: Option<f64>,
    pub p90_q_error: Option<f64>,
    pub p95_q_error: Option<f64>,
    pub max_q_error: Option<f64>,
    pub mean_relative_error: Option<f64>,
    pub median_relative_error: Option<f64>,
    pub skipped: usize,
    pub note: String,
}

impl EvalReport {
    pub fn from_records(records: Vec<QueryRecord>) -> Self {
        let mut q: Vec<f64> = records.iter().filter_map(|r| r.q_error).collect();
        q.sort_by(f64::total_cmp);
        let mut rel: Vec<f64> = records.iter().filter_map(|r| r.relative_error).collect();
        rel.sort_by(f64::total_cmp);
        let some = |v: &[f64], p: f64| (!v.is_empty()).then(|| quantile(v, p));
        EvalReport {
            median_q_error: some(&q, 0.5),
            p90_q_error: some(&q, 0.9),
            p95_q_error: some(&q, 0.95),
            max_q_error: q.last().copied(),
            mean_relative_error: (!rel.is_empty()).then(|| rel.iter().sum::<f64>() / rel.len() as f64),
            median_relative_error: some(&rel, 0.5),
            skipped: records.iter().filter(|r| r.skipped.is_some()).count(),
            records,
            note: "q-errors floor estimate and truth at 1".into(),
        }
    }

    /// Per-query CSV.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Csv {
            table: "report".into(),
            message: e.to_string(),
        };
        w.write_record(["query", "truth", "estimate", "relative_error", "q_error", "latency_us", "skipped"])
            .map_err(csv_err)?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.query.clone(),
                f(r.truth),
                f(r.estimate),
                f(r.relative_error),
                f(r.q_error),
                r.latency_us.to_string(),
                r.skipped.clone().unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
    }
}

fn skipped(query: &str, reason: String) -> QueryRecord {
    QueryRecord {
        query: query.to_string(),
        truth: None,
        estimate: None,
        ci_low: None,
        ci_high: None,
        relative_error: None,
        q_error: None,
        latency_us: 0.0,
        skipped: Some(reason),
    }
}

/// Run one query through the ensemble and the oracle.
pub fn evaluate_query(sql: &str, ens: &Ensemble, db: &Database, opts: &QueryOptions) -> QueryRecord {
    let ast = match parse_query(sql, &db.schema) {
        Ok(a) => a,
        Err(e) => return skipped(sql, e.to_string()),
    };
    if !ast.group_by.is_empty() {
        return skipped(sql, "grouped queries are not scored".into());
    }
    let truth = match ScanOracle::new(db).evaluate(&ast) {
        Ok(t) => t.scalar(),
        Err(e) => return skipped(sql, format!("oracle: {e}")),
    };
    let start = Instant::now();
    let result = execute(sql, ens, opts);
    let latency_us = start.elapsed().as_secs_f64() * 1e6;
    let est = match result {
        Ok(r) => r.estimate.expect("ungrouped"),
        Err(e) => return skipped(sql, e.to_string()),
    };
    let is_count = ast.aggregate == Aggregate::Count;
    QueryRecord {
        query: sql.to_string(),
        truth,
        estimate: Some(est.value),
        ci_low: Some(est.ci_low),
        ci_high: Some(est.ci_high),
        relative_error: truth.map(|t| relative_error(est.value, t)),
        q_error: truth.filter(|_| is_count).map(|t| q_error(est.value, t)),
        latency_us,
        skipped: None,
    }
}

pub fn evaluate_workload(
    queries: &[String],
    ens: &Ensemble,
    db: &Database,
    opts: &QueryOptions,
    exec: Execution,
) -> EvalReport {
    EvalReport::from_records(par::map(exec, queries, |q| evaluate_query(q, ens, db, opts)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadKind {
    Count,
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadParams {
    pub kind: WorkloadKind,
    pub queries: usize,
    pub min_tables: usize,
    pub max_tables: usize,
    pub min_predicates: usize,
    pub max_predicates: usize,
    pub seed: u64,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            kind: WorkloadKind::Count,
            queries: 200,
            min_tables: 1,
            max_tables: 6,
            min_predicates: 1,
            max_predicates: 5,
            seed: 7,
        }
    }
}

fn literal(d: &Datum) -> String {
    match d {
        Datum::Num(x) => format!("{x}"),
        Datum::Str(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

/// Random connected table sequence where each table joins an earlier one.
fn random_tables(db: &Database, size: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let names: Vec<&str> = db.schema.tables.iter().map(|t| t.name.as_str()).collect();
    let mut chosen = vec![names[rng.random_range(0..names.len())].to_string()];
    while chosen.len() < size {
        let frontier: BTreeSet<String> = db
            .schema
            .fks
            .iter()
            .filter_map(|fk| {
                let a = chosen.contains(&fk.referencing_table);
                let b = chosen.contains(&fk.referenced_table);
                match (a, b) {
                    (true, false) => Some(fk.referenced_table.clone()),
                    (false, true) => Some(fk.referencing_table.clone()),
                    _ => None,
                }
            })
            .collect();
        let frontier: Vec<String> = frontier.into_iter().collect();
        let Some(next) = frontier.choose(rng) else { break };
        chosen.push(next.clone());
    }
    chosen
}

/// Random row of every table forming one tuple of the inner join, or
/// `None` when the walk hits a row without partners.
fn sample_tuple(db: &Database, tables: &[String], rng: &mut ChaCha8Rng) -> Option<Vec<usize>> {
    let first = db.table(&tables[0])?;
    if first.num_rows() == 0 {
        return None;
    }
    let mut rows = vec![rng.random_range(0..first.num_rows())];
    for t in &tables[1..] {
        let (fi, fk) = db.schema.fks.iter().enumerate().find(|(_, fk)| {
            (fk.referencing_table == *t && tables[..rows.len()].contains(&fk.referenced_table))
                || (fk.referenced_table == *t && tables[..rows.len()].contains(&fk.referencing_table))
        })?;
        let other = fk.other(t);
        let orow = rows[tables.iter().position(|x| x == other)?];
        let next = if fk.referencing_table == *t {
            let key = db.primary_key_of(other, orow)?;
            *db.referencing_rows(fi, &key).choose(rng)?
        } else {
            db.referenced_row(fi, orow)?
        };
        rows.push(next);
    }
    Some(rows)
}

/// Random SQL workload over attribute columns. Each filter column appears
/// once, and the constants come from one sampled join tuple, so inclusive
/// comparisons keep the result nonempty.
pub fn generate_workload(db: &Database, params: &WorkloadParams) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let max_tables = params.max_tables.min(db.schema.tables.len()).max(1);
    let min_tables = params.min_tables.clamp(1, max_tables);
    let mut out = Vec::with_capacity(params.queries);
    let mut attempts = 0;
    while out.len() < params.queries && attempts < params.queries * 50 {
        attempts += 1;
        let size = rng.random_range(min_tables..=max_tables);
        let tables = random_tables(db, size, &mut rng);
        let Some(tuple) = (0..20).find_map(|_| sample_tuple(db, &tables, &mut rng)) else {
            continue;
        };
        let mut attrs: Vec<(usize, ColumnKind, usize)> = Vec::new();
        for (ti, t) in tables.iter().enumerate() {
            let st = db.table(t).expect("schema table");
            for (ci, m) in st.columns.iter().enumerate() {
                if matches!(m.role, ColumnRole::Attribute { .. }) {
                    attrs.push((ti, m.kind, ci));
                }
            }
        }
        if attrs.is_empty() {
            continue;
        }
        let column = |a: &(usize, ColumnKind, usize)| db.table(&tables[a.0]).expect("table").columns[a.2].name.clone();
        let head = match params.kind {
            WorkloadKind::Count => "SELECT COUNT(*)".to_string(),
            WorkloadKind::Avg => {
                let numeric: Vec<&(usize, ColumnKind, usize)> =
                    attrs.iter().filter(|a| a.1 == ColumnKind::Continuous).collect();
                let Some(a) = numeric.choose(&mut rng) else { continue };
                format!("SELECT AVG({})", column(a))
            }
        };
        let hi = params.max_predicates.max(params.min_predicates);
        let k = rng.random_range(params.min_predicates..=hi).min(attrs.len());
        let mut conjuncts = Vec::new();
        for a in attrs.choose_multiple(&mut rng, k) {
            let st = db.table(&tables[a.0]).expect("table");
            let Some(v) = st.value(tuple[a.0], a.2) else { continue };
            let col = column(a);
            let text = match a.1 {
                ColumnKind::Categorical => {
                    if rng.random::<f64>() < 0.3 {
                        let w = st.value(rng.random_range(0..st.num_rows()), a.2);
                        let mut lits = vec![literal(&v)];
                        if let Some(w) = w.filter(|w| *w != v) {
                            lits.push(literal(&w));
                        }
                        format!("{col} IN ({})", lits.join(", "))
                    } else {
                        format!("{col} = {}", literal(&v))
                    }
                }
                ColumnKind::Continuous => {
                    let op = ["<=", ">=", "="][rng.random_range(0..3)];
                    format!("{col} {op} {}", literal(&v))
                }
            };
            conjuncts.push(text);
        }
        let mut sql = format!("{head} FROM {}", tables[0]);
        for t in &tables[1..] {
            sql.push_str(&format!(" JOIN {t}"));
        }
        if !conjuncts.is_empty() {
            sql.push_str(" WHERE ");
            sql.push_str(&conjuncts.join(" AND "));
        }
        if parse_query(&sql, &db.schema).is_ok() {
            out.push(sql);
        }
    }
    out
}
