//! Greedy choice of the models answering a query.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{table_of, QueryAst};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::schema::factor_column;
use crate::spn::Rspn;

/// Join edge attaching a step's new tables to those covered before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub fk: usize,
    /// Endpoint already covered.
    pub covered: String,
    /// Endpoint introduced by this step.
    pub new: String,
    /// Whether the covered endpoint is the referenced (primary-key) side.
    pub covered_is_referenced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Index into the ensemble's models.
    pub rspn: usize,
    pub rspn_id: String,
    /// Query tables first covered by this step.
    pub assigned: Vec<String>,
    /// Previously covered query tables this model also holds, connected to
    /// the link endpoint.
    pub overlap: Vec<String>,
    pub link: Option<Link>,
    /// Sum of pairwise dependencies over the handled filter columns.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub steps: Vec<Step>,
}

/// Connected components of `set` under the query's join edges, each in
/// query table order.
pub(crate) fn components(ast: &QueryAst, set: &BTreeSet<String>) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    let mut seen = BTreeSet::new();
    for t in ast.tables.iter().filter(|t| set.contains(*t)) {
        if seen.contains(t) {
            continue;
        }
        let mut comp = BTreeSet::from([t.clone()]);
        let mut stack = vec![t.clone()];
        seen.insert(t.clone());
        while let Some(x) = stack.pop() {
            for j in &ast.joins {
                let o = if j.left == x {
                    &j.right
                } else if j.right == x {
                    &j.left
                } else {
                    continue;
                };
                if set.contains(o) && seen.insert(o.clone()) {
                    comp.insert(o.clone());
                    stack.push(o.clone());
                }
            }
        }
        out.push(ast.tables.iter().filter(|t| comp.contains(*t)).cloned().collect());
    }
    out
}

/// Query join edges with one endpoint in `a` and the other in `b`.
fn crossing<'q>(ast: &'q QueryAst, a: &BTreeSet<String>, b: &[String]) -> Vec<&'q super::JoinEdge> {
    ast.joins
        .iter()
        .filter(|j| (a.contains(&j.left) && b.contains(&j.right)) || (a.contains(&j.right) && b.contains(&j.left)))
        .collect()
}

/// Filter columns a model can see for the given tables: filter and group
/// columns on those tables (FD-dependent columns map to determinants), plus
/// tuple factors of query joins inside them.
fn handled_columns(ast: &QueryAst, model: &Rspn, tables: &BTreeSet<String>, schema: &crate::schema::SchemaGraph) -> Vec<String> {
    let mut cols = BTreeSet::new();
    let names = ast
        .predicate
        .conjuncts
        .iter()
        .map(|c| c.column.as_str())
        .chain(ast.group_by.iter().map(|s| s.as_str()));
    for c in names {
        if !tables.contains(table_of(c)) {
            continue;
        }
        if model.has_column(c) {
            cols.insert(c.to_string());
        } else if let Some(fd) = model.fds.iter().find(|f| f.dependent_column() == c) {
            cols.insert(fd.determinant_column());
        }
    }
    for j in &ast.joins {
        if tables.contains(&j.left) && tables.contains(&j.right) {
            let fk = &schema.fks[j.fk];
            let f = factor_column(&fk.referenced_table, &fk.referencing_table);
            if model.has_column(&f) {
                cols.insert(f);
            }
        }
    }
    cols.into_iter().collect()
}

fn pair_score(model: &Rspn, cols: &[String]) -> f64 {
    let mut s = 0.0;
    for (i, a) in cols.iter().enumerate() {
        for b in &cols[i + 1..] {
            s += model.rdc.get(a, b).unwrap_or(0.0);
        }
    }
    s
}

/// Greedy cover of the query's tables. Each step takes the model whose
/// handled filter columns have the largest summed pairwise dependency;
/// ties prefer fewer tables, then the smaller model id.
pub fn select_rspns(ast: &QueryAst, ens: &Ensemble) -> Result<ExecutionPlan> {
    for t in &ast.tables {
        if !ens.covers(t) {
            return Err(Error::Uncoverable(format!("no model covers table {t}")));
        }
    }
    let required = ast.required_tables();
    let mut covered: BTreeSet<String> = BTreeSet::new();
    let mut steps: Vec<Step> = Vec::new();
    while covered.len() < ast.tables.len() {
        let mut best: Option<(f64, usize, String, Step)> = None;
        for (mi, m) in ens.rspns.iter().enumerate() {
            let part: BTreeSet<String> = ast
                .tables
                .iter()
                .filter(|t| !covered.contains(*t) && m.covers_table(t))
                .cloned()
                .collect();
            if part.is_empty() {
                continue;
            }
            let comps = components(ast, &part);
            let (assigned, link) = if covered.is_empty() {
                // the largest component holding a preserved table, earliest on ties
                let Some(c) = comps
                    .iter()
                    .filter(|c| required.is_empty() || c.iter().any(|t| required.contains(t)))
                    .fold(None::<&Vec<String>>, |acc, c| match acc {
                        Some(a) if a.len() >= c.len() => Some(a),
                        _ => Some(c),
                    })
                else {
                    continue;
                };
                (c.clone(), None)
            } else {
                let Some(c) = comps.iter().find(|c| !crossing(ast, &covered, c).is_empty()) else {
                    continue;
                };
                let edges = crossing(ast, &covered, c);
                if edges.len() > 1 {
                    return Err(Error::Unsupported("cyclic join graph across models".into()));
                }
                let e = edges[0];
                let (cov, new) = if covered.contains(&e.left) {
                    (e.left.clone(), e.right.clone())
                } else {
                    (e.right.clone(), e.left.clone())
                };
                let fk = &ens.schema.fks[e.fk];
                (
                    c.clone(),
                    Some(Link {
                        fk: e.fk,
                        covered_is_referenced: fk.referenced_table == cov,
                        covered: cov,
                        new,
                    }),
                )
            };
            let overlap: Vec<String> = match &link {
                Some(l) if m.covers_table(&l.covered) => {
                    let inside: BTreeSet<String> = covered.iter().filter(|t| m.covers_table(t)).cloned().collect();
                    components(ast, &inside)
                        .into_iter()
                        .find(|c| c.contains(&l.covered))
                        .unwrap_or_default()
                }
                _ => Vec::new(),
            };
            let seen: BTreeSet<String> = assigned.iter().chain(&overlap).cloned().collect();
            let score = pair_score(m, &handled_columns(ast, m, &seen, &ens.schema));
            let step = Step {
                rspn: mi,
                rspn_id: m.id.clone(),
                assigned,
                overlap,
                link,
                score,
            };
            let better = match &best {
                None => true,
                Some((bs, bn, bid, _)) => {
                    score > *bs + 1e-12
                        || ((score - bs).abs() <= 1e-12
                            && (m.table_set.len() < *bn || (m.table_set.len() == *bn && m.id < *bid)))
                }
            };
            if better {
                best = Some((score, m.table_set.len(), m.id.clone(), step));
            }
        }
        let Some((_, _, _, step)) = best else {
            let rest: Vec<&String> = ast.tables.iter().filter(|t| !covered.contains(*t)).collect();
            return Err(Error::Unsupported(format!(
                "no foreign key links {rest:?} to the covered tables"
            )));
        };
        covered.extend(step.assigned.iter().cloned());
        steps.push(step);
    }
    Ok(ExecutionPlan { steps })
}
