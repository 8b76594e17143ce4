//! In-place model maintenance for inserts and deletes, drift detection,
//! and derivation of per-model update streams from base-table changes.

use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::nearest;
use crate::par::Execution;
use crate::rdc::{pairwise_rdc_columns, RdcParams};
use crate::schema::{join_rows_containing_any, qualified, ColumnData, Database, JoinPlan, SampleTable};
use crate::spn::{NodeKind, Rspn};
use crate::value::{Datum, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Insert,
    Delete,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Insert => 1,
            Direction::Delete => -1,
        }
    }
}

/// Tuples are in the model's column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateBatch {
    pub operations: Vec<RowChange>,
    pub applied_sample_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BatchReport {
    pub total: usize,
    pub applied: usize,
}

fn check_arity(rspn: &Rspn, tuple: &[Value]) -> Result<()> {
    if tuple.len() != rspn.columns.len() {
        return Err(Error::Update(format!(
            "{}: tuple has {} values, model has {} columns",
            rspn.id,
            tuple.len(),
            rspn.columns.len()
        )));
    }
    Ok(())
}

/// Route one tuple through the tree and adjust counts along its path.
/// Population accounting is left to the caller.
fn descend(rspn: &mut Rspn, tuple: &[Value], dir: Direction) {
    let insert = dir == Direction::Insert;
    let mut stack = vec![rspn.root];
    while let Some(n) = stack.pop() {
        let scope = rspn.nodes[n].scope.clone();
        match &mut rspn.nodes[n].kind {
            NodeKind::Leaf(leaf) => leaf.adjust(&tuple[leaf.column], insert),
            NodeKind::Product { children, .. } => stack.extend(children.iter().copied()),
            NodeKind::Sum {
                children,
                cluster_sizes,
                centroids,
            } => {
                let point: Vec<f64> = scope
                    .iter()
                    .map(|&c| rspn.transform.feature(c, tuple[c].as_ref()))
                    .collect();
                let pick = if insert {
                    nearest(centroids, &point)
                } else {
                    // deletes route among clusters that still hold rows
                    let live: Vec<usize> = (0..children.len()).filter(|&i| cluster_sizes[i] > 0).collect();
                    if live.is_empty() {
                        nearest(centroids, &point)
                    } else {
                        let cs: Vec<Vec<f64>> = live.iter().map(|&i| centroids[i].clone()).collect();
                        live[nearest(&cs, &point)]
                    }
                };
                if insert {
                    cluster_sizes[pick] += 1;
                } else if cluster_sizes[pick] == 0 {
                    warn!("{}: delete from empty cluster at node {n}", rspn.id);
                } else {
                    cluster_sizes[pick] -= 1;
                }
                stack.push(children[pick]);
            }
        }
    }
    if insert {
        rspn.n_samples += 1;
    } else {
        rspn.n_samples = rspn.n_samples.saturating_sub(1);
    }
}

/// Apply one sampled insert or delete. The population moves by
/// `1 / sample_rate`.
pub fn update_tuple(rspn: &mut Rspn, tuple: &[Value], dir: Direction) -> Result<()> {
    check_arity(rspn, tuple)?;
    if dir == Direction::Delete && rspn.population() <= 0.0 {
        return Err(Error::Update(format!("{}: delete from empty model", rspn.id)));
    }
    descend(rspn, tuple, dir);
    rspn.sampled_updates += dir.sign();
    Ok(())
}

/// Apply a batch, keeping each operation with probability equal to the
/// model's sample rate. The population moves by the full batch size.
pub fn apply_batch(rspn: &mut Rspn, batch: &UpdateBatch, seed: u64) -> Result<BatchReport> {
    if (batch.applied_sample_rate - rspn.sample_rate).abs() > 1e-12 {
        return Err(Error::Update(format!(
            "{}: batch sample rate {} differs from model sample rate {}",
            rspn.id, batch.applied_sample_rate, rspn.sample_rate
        )));
    }
    for (_, t) in &batch.operations {
        check_arity(rspn, t)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BatchReport {
        total: batch.operations.len(),
        applied: 0,
    };
    for (dir, t) in &batch.operations {
        let keep = rspn.sample_rate >= 1.0 || rng.random::<f64>() < rspn.sample_rate;
        if keep {
            descend(rspn, t, *dir);
            report.applied += 1;
        }
        rspn.batch_updates += dir.sign();
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftParams {
    pub rdc_threshold: f64,
    /// Product nodes reached by fewer fresh rows are not tested.
    pub min_rows: usize,
    pub rdc: RdcParams,
}

impl Default for DriftParams {
    fn default() -> Self {
        DriftParams {
            rdc_threshold: 0.3,
            min_rows: 200,
            rdc: RdcParams::default(),
        }
    }
}

/// Product nodes whose child scopes are now dependent on `fresh`.
/// Returns `(node, max cross-child coefficient)`, sorted by node.
pub fn drift_check(rspn: &Rspn, fresh: &SampleTable, params: &DriftParams, exec: Execution) -> Result<Vec<(usize, f64)>> {
    let source: Vec<usize> = rspn
        .columns
        .iter()
        .map(|c| {
            fresh
                .column_index(&c.name)
                .ok_or_else(|| Error::UnknownColumn(c.name.clone()))
        })
        .collect::<Result<_>>()?;
    let tuples: Vec<Vec<Value>> = (0..fresh.num_rows())
        .map(|r| source.iter().map(|&i| fresh.data[i].get(r)).collect())
        .collect();
    // route fresh rows down the tree
    let mut routed: Vec<Vec<usize>> = vec![Vec::new(); rspn.nodes.len()];
    routed[rspn.root] = (0..tuples.len()).collect();
    let mut order = vec![rspn.root];
    let mut i = 0;
    while i < order.len() {
        let n = order[i];
        i += 1;
        let rows = std::mem::take(&mut routed[n]);
        match &rspn.nodes[n].kind {
            NodeKind::Leaf(_) => {}
            NodeKind::Product { children, .. } => {
                for &c in children {
                    routed[c] = rows.clone();
                    order.push(c);
                }
            }
            NodeKind::Sum {
                children, centroids, ..
            } => {
                let scope = &rspn.nodes[n].scope;
                for &r in &rows {
                    let p: Vec<f64> = scope
                        .iter()
                        .map(|&c| rspn.transform.feature(c, tuples[r][c].as_ref()))
                        .collect();
                    routed[children[nearest(centroids, &p)]].push(r);
                }
                order.extend(children.iter().copied());
            }
        }
        routed[n] = rows;
    }
    let mut out = Vec::new();
    for (n, node) in rspn.nodes.iter().enumerate() {
        let NodeKind::Product { children, .. } = &node.kind else {
            continue;
        };
        let rows = &routed[n];
        if rows.len() < params.min_rows.max(2) {
            continue;
        }
        let names: Vec<String> = node.scope.iter().map(|&c| rspn.columns[c].name.clone()).collect();
        let cols: Vec<&ColumnData> = node.scope.iter().map(|&c| &fresh.data[source[c]]).collect();
        let m = pairwise_rdc_columns(&names, &cols, rows, &params.rdc, exec);
        let owner: BTreeMap<usize, usize> = children
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| rspn.nodes[c].scope.iter().map(move |&s| (s, k)))
            .collect();
        let mut worst: f64 = 0.0;
        for (a, &ca) in node.scope.iter().enumerate() {
            for (b, &cb) in node.scope.iter().enumerate().skip(a + 1) {
                if owner[&ca] != owner[&cb] {
                    worst = worst.max(m.at(a, b));
                }
            }
        }
        if worst > params.rdc_threshold {
            out.push((n, worst));
        }
    }
    Ok(out)
}

/// A change to one base table.
#[derive(Debug, Clone, PartialEq)]
pub enum TableOp {
    /// Values for the declared columns, in declaration order.
    Insert { table: String, values: Vec<Value> },
    Delete { table: String, key: Datum },
}

impl TableOp {
    pub fn table(&self) -> &str {
        match self {
            TableOp::Insert { table, .. } | TableOp::Delete { table, .. } => table,
        }
    }
}

/// Base tuples whose join rows change when `op` is applied: rows of
/// referenced tables inside the plan, plus the touched row itself.
fn anchors(db: &Database, plan: &JoinPlan, table: &str, values: &[Value]) -> Vec<(String, usize)> {
    let Some(def) = db.schema.table(table) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for fk in &db.schema.fks {
        if fk.referencing_table != table || plan.position(&fk.referenced_table).is_none() {
            continue;
        }
        let pos = def.columns.iter().position(|c| c.name == fk.referencing_column);
        if let Some(Some(v)) = pos.map(|p| &values[p]) {
            if let Some(r) = db.row_by_key(&fk.referenced_table, v) {
                out.push((fk.referenced_table.clone(), r));
            }
        }
    }
    out
}

fn model_rows(db: &Database, plan: &JoinPlan, rspn: &Rspn, anchors: &[(String, usize)]) -> Result<Vec<Vec<Value>>> {
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<(&str, usize)> = anchors.iter().map(|(t, r)| (t.as_str(), *r)).collect();
    let rows = join_rows_containing_any(db, plan, &refs)?;
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let t = plan.materialize(db, &rows);
    let idx: Vec<usize> = rspn
        .columns
        .iter()
        .map(|c| {
            t.column_index(&c.name)
                .ok_or_else(|| Error::UnknownColumn(c.name.clone()))
        })
        .collect::<Result<_>>()?;
    Ok((0..t.num_rows())
        .map(|r| idx.iter().map(|&i| t.data[i].get(r)).collect())
        .collect())
}

/// A joined-row insert or delete.
pub type RowChange = (Direction, Vec<Value>);

/// Apply base-table changes to `db` and derive, per model, the joined-row
/// deletes and inserts that keep the model consistent with the database,
/// including rows whose tuple factors or indicators change. Identical
/// delete/insert pairs cancel.
pub fn derive_updates(db: &mut Database, models: &[&Rspn], ops: &[TableOp]) -> Result<Vec<Vec<RowChange>>> {
    let plans: Vec<JoinPlan> = models
        .iter()
        .map(|m| JoinPlan::new(&db.schema, &m.table_set))
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); models.len()];
    for op in ops {
        let table = op.table().to_string();
        let (values, own_row) = match op {
            TableOp::Insert { values, .. } => (values.clone(), None),
            TableOp::Delete { key, .. } => {
                let r = db
                    .row_by_key(&table, key)
                    .ok_or_else(|| Error::Update(format!("{table}: no row with key {key}")))?;
                let def = db.schema.require_table(&table)?;
                let t = db.require(&table)?;
                let vals = def
                    .columns
                    .iter()
                    .map(|c| {
                        t.column(&qualified(&table, &c.name))
                            .map(|d| d.get(r))
                            .ok_or_else(|| Error::UnknownColumn(qualified(&table, &c.name)))
                    })
                    .collect::<Result<_>>()?;
                (vals, Some(r))
            }
        };
        let mut before = Vec::with_capacity(models.len());
        for (m, plan) in models.iter().zip(&plans) {
            let mut a = anchors(db, plan, &table, &values);
            if let (Some(r), Some(_)) = (own_row, plan.position(&table)) {
                a.push((table.clone(), r));
            }
            before.push((a.clone(), model_rows(db, plan, m, &a)?));
        }
        let new_row = match op {
            TableOp::Insert { values, .. } => Some(db.insert_row(&table, values.clone())?),
            TableOp::Delete { key, .. } => {
                db.delete_row(&table, key)?;
                None
            }
        };
        for (k, (m, plan)) in models.iter().zip(&plans).enumerate() {
            let (mut a, old) = std::mem::take(&mut before[k]);
            // the deleted row is gone; anchors on its table may have moved
            a.retain(|(t, _)| own_row.is_none() || *t != table);
            a.extend(anchors(db, plan, &table, &values));
            if let (Some(r), Some(_)) = (new_row, plan.position(&table)) {
                a.push((table.clone(), r));
            }
            a.sort();
            a.dedup();
            let new = model_rows(db, plan, m, &a)?;
            let mut balance: BTreeMap<Vec<Value>, i64> = BTreeMap::new();
            for r in old {
                *balance.entry(r).or_default() -= 1;
            }
            for r in new {
                *balance.entry(r).or_default() += 1;
            }
            for (row, n) in balance {
                let dir = if n > 0 { Direction::Insert } else { Direction::Delete };
                for _ in 0..n.unsigned_abs() {
                    out[k].push((dir, row.clone()));
                }
            }
        }
    }
    Ok(out)
}
