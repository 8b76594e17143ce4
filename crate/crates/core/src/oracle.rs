//! Exact evaluation of the supported SQL subset by scanning base tables.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{Aggregate, JoinKind, QueryAst};
use crate::schema::{qualified, Database};
use crate::value::{Datum, Value};

/// Exact answer: a scalar, or one value per group. AVG over no rows is
/// `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExactAnswer {
    Scalar(Option<f64>),
    Groups(BTreeMap<Vec<Value>, f64>),
}

impl ExactAnswer {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            ExactAnswer::Scalar(v) => *v,
            ExactAnswer::Groups(_) => None,
        }
    }
}

/// Joined tuple: one optional row index per query table.
type Tuple = Vec<Option<usize>>;

/// Ground-truth evaluator over a loaded database.
pub struct ScanOracle<'a> {
    db: &'a Database,
    /// Upper bound on intermediate join tuples.
    pub max_tuples: usize,
}

impl<'a> ScanOracle<'a> {
    pub fn new(db: &'a Database) -> Self {
        ScanOracle {
            db,
            max_tuples: 50_000_000,
        }
    }

    fn rows(&self, table: &str) -> Result<usize> {
        Ok(self.db.require(table)?.num_rows())
    }

    /// Join result in FROM order, honoring outer-join padding.
    pub fn join(&self, ast: &QueryAst) -> Result<Vec<Tuple>> {
        let width = ast.tables.len();
        let pos = |t: &str| ast.tables.iter().position(|x| x == t).expect("query table");
        let mut tuples: Vec<Tuple> = (0..self.rows(&ast.tables[0])?)
            .map(|r| {
                let mut t = vec![None; width];
                t[0] = Some(r);
                t
            })
            .collect();
        for j in &ast.joins {
            let fk = &self.db.schema.fks[j.fk];
            let (lp, rp) = (pos(&j.left), pos(&j.right));
            let right_is_referencing = fk.referencing_table == j.right;
            let mut out = Vec::new();
            let mut matched_right = HashSet::new();
            for t in &tuples {
                let partners: Vec<usize> = match t[lp] {
                    None => Vec::new(),
                    Some(l) if right_is_referencing => match self.db.primary_key_of(&j.left, l) {
                        Some(k) => self.db.referencing_rows(j.fk, &k).to_vec(),
                        None => Vec::new(),
                    },
                    Some(l) => self.db.referenced_row(j.fk, l).into_iter().collect(),
                };
                if partners.is_empty() {
                    if matches!(j.kind, JoinKind::Left | JoinKind::Full) {
                        out.push(t.clone());
                    }
                    continue;
                }
                for p in partners {
                    matched_right.insert(p);
                    let mut n = t.clone();
                    n[rp] = Some(p);
                    out.push(n);
                }
                if out.len() > self.max_tuples {
                    return Err(Error::JoinOverflow(ast.tables.clone()));
                }
            }
            if matches!(j.kind, JoinKind::Right | JoinKind::Full) {
                for r in 0..self.rows(&j.right)? {
                    if !matched_right.contains(&r) {
                        let mut n = vec![None; width];
                        n[rp] = Some(r);
                        out.push(n);
                    }
                }
            }
            tuples = out;
        }
        Ok(tuples)
    }

    fn value(&self, ast: &QueryAst, t: &Tuple, column: &str) -> Result<Value> {
        let table = crate::query::table_of(column);
        let p = ast
            .tables
            .iter()
            .position(|x| x == table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let Some(row) = t[p] else { return Ok(None) };
        let data = self
            .db
            .require(table)?
            .column(column)
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))?;
        Ok(data.get(row))
    }

    /// Exact aggregate of the query.
    pub fn evaluate(&self, ast: &QueryAst) -> Result<ExactAnswer> {
        let mut acc: BTreeMap<Vec<Value>, (f64, f64)> = BTreeMap::new();
        for t in self.join(ast)? {
            let mut keep = true;
            for c in &ast.predicate.conjuncts {
                let v = self.value(ast, &t, &c.column)?;
                if !c.condition.matches_value(v.as_ref()) {
                    keep = false;
                    break;
                }
            }
            if !keep {
                continue;
            }
            let key = ast
                .group_by
                .iter()
                .map(|g| self.value(ast, &t, g))
                .collect::<Result<Vec<_>>>()?;
            let e = acc.entry(key).or_insert((0.0, 0.0));
            match &ast.aggregate {
                Aggregate::Count => e.0 += 1.0,
                Aggregate::Sum(c) | Aggregate::Avg(c) => {
                    if let Some(x) = self.value(ast, &t, c)?.and_then(|d| d.as_f64()) {
                        e.0 += 1.0;
                        e.1 += x;
                    }
                }
            }
        }
        let finish = |(n, s): (f64, f64)| -> Option<f64> {
            match ast.aggregate {
                Aggregate::Count => Some(n),
                Aggregate::Sum(_) => Some(s),
                Aggregate::Avg(_) => (n > 0.0).then(|| s / n),
            }
        };
        if ast.group_by.is_empty() {
            let v = acc.remove(&Vec::new()).unwrap_or((0.0, 0.0));
            return Ok(ExactAnswer::Scalar(finish(v)));
        }
        Ok(ExactAnswer::Groups(
            acc.into_iter()
                .filter_map(|(k, v)| finish(v).map(|x| (k, x)))
                .collect(),
        ))
    }

    /// Distinct non-NULL values of a base column.
    pub fn distinct_values(&self, table: &str, column: &str) -> Result<Vec<Datum>> {
        let t = self.db.require(table)?;
        let name = qualified(table, column);
        let data = t.column(&name).ok_or(Error::UnknownColumn(name))?;
        let mut out: Vec<Datum> = (0..t.num_rows()).filter_map(|r| data.get(r)).collect();
        out.sort();
        out.dedup();
        Ok(out)
    }
}
