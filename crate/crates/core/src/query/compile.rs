//! Compilation of COUNT, AVG and SUM into products of model expectations.

use std::collections::BTreeSet;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use super::plan::{ExecutionPlan, Step};
use super::{table_of, Aggregate, QueryAst};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::schema::{factor_column, indicator_column, JoinPlan};
use crate::spn::{CmpOp, Condition, Conjunct, Predicate, Rspn, TargetExpr, Term};
use crate::value::Datum;

/// Which compilation rule produced an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryCase {
    /// One model over exactly the query's tables.
    ExactMatch,
    /// One model over a superset of the query's tables.
    Superset,
    /// Several models combined along join edges.
    Combined,
}

impl QueryCase {
    pub fn label(self) -> &'static str {
        match self {
            QueryCase::ExactMatch => "Case 1 (exact match)",
            QueryCase::Superset => "Case 2 (larger model)",
            QueryCase::Combined => "Case 3 (combined models)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorRole {
    Population,
    /// Leftmost sub-query.
    Left,
    /// Sub-query of a later model.
    Right,
    /// Overlap normalization of a later model.
    Overlap,
    AvgNumerator,
    AvgDenominator,
}

/// One signed expectation `sign · E[target · 1_predicate]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationTerm {
    pub sign: f64,
    pub predicate: Predicate,
}

/// Population size of a model, or a signed sum of expectations on it;
/// optionally inverted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub rspn: usize,
    pub rspn_id: String,
    pub role: FactorRole,
    pub target: TargetExpr,
    /// Empty for population factors.
    pub terms: Vec<ExpectationTerm>,
    pub reciprocal: bool,
}

impl Factor {
    pub fn is_population(&self) -> bool {
        self.role == FactorRole::Population
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorExpr {
    pub case: QueryCase,
    pub factors: Vec<Factor>,
    /// Filter conjuncts that no chosen model could evaluate.
    pub dropped: Vec<Conjunct>,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let body = if self.is_population() {
            format!("|{}|", self.rspn_id)
        } else {
            let parts: Vec<String> = self
                .terms
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let sign = match (i, t.sign < 0.0) {
                        (0, false) => "",
                        (0, true) => "-",
                        (_, false) => " + ",
                        (_, true) => " - ",
                    };
                    format!("{sign}E_{}[{} · 1{{{}}}]", self.rspn_id, self.target, t.predicate)
                })
                .collect();
            parts.join("")
        };
        if self.reciprocal {
            write!(f, "1/({body})")
        } else {
            write!(f, "{body}")
        }
    }
}

impl fmt::Display for FactorExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.factors.iter().map(|x| x.to_string()).collect();
        write!(f, "{}: {}", self.case.label(), parts.join(" × "))
    }
}

fn one() -> Datum {
    Datum::num(1.0)
}

/// Tables of the model's join tree whose tuple factors multiply the tuples
/// of `part`: for every tree edge whose referencing side lies away from
/// `part`, the reciprocal of its join-side factor.
fn multiplicity_terms(ens: &Ensemble, model: &Rspn, part: &BTreeSet<String>) -> Result<Vec<Term>> {
    if model.table_set.len() == 1 {
        return Ok(Vec::new());
    }
    let plan = JoinPlan::new(&ens.schema, &model.table_set)?;
    let n = plan.tables.len();
    let mut out = Vec::new();
    for pos in 1..n {
        let (ppos, fk_idx) = plan.parent[pos].expect("non-root");
        let fk = &ens.schema.fks[fk_idx];
        // subtree below `pos` versus the rest
        let mut below = BTreeSet::from([pos]);
        let mut stack = vec![pos];
        while let Some(p) = stack.pop() {
            for &(c, _) in &plan.children[p] {
                below.insert(c);
                stack.push(c);
            }
        }
        let part_below = below.iter().any(|&p| part.contains(&plan.tables[p]));
        let part_above = (0..n).any(|p| !below.contains(&p) && part.contains(&plan.tables[p]));
        let referencing_pos = if fk.referencing_table == plan.tables[pos] { pos } else { ppos };
        // the referencing side's component holds no query table
        let far = if referencing_pos == pos { !part_below } else { !part_above };
        if far {
            out.push(Term::reciprocal(factor_column(&fk.referenced_table, &fk.referencing_table)));
        }
    }
    Ok(out)
}

/// Predicate terms for the tuples of `part` on `model`: filters on
/// `filter_tables`, presence of required tables, or inclusion-exclusion
/// over presence when none of the part is required.
fn presence_terms(
    model: &Rspn,
    part: &BTreeSet<String>,
    required: &BTreeSet<String>,
    filters: &Predicate,
) -> Result<Vec<ExpectationTerm>> {
    let mut base = filters.clone();
    if model.table_set.len() == 1 {
        return Ok(vec![ExpectationTerm {
            sign: 1.0,
            predicate: base,
        }]);
    }
    let req: Vec<&String> = part.iter().filter(|t| required.contains(*t)).collect();
    if !req.is_empty() {
        for t in req {
            base.conjuncts.push(Conjunct::cmp(indicator_column(t), CmpOp::Eq, one()));
        }
        return Ok(vec![ExpectationTerm {
            sign: 1.0,
            predicate: base,
        }]);
    }
    let all: BTreeSet<&String> = model.table_set.iter().collect();
    if part.iter().collect::<BTreeSet<_>>() == all {
        // every joined row carries a tuple of the part
        return Ok(vec![ExpectationTerm {
            sign: 1.0,
            predicate: base,
        }]);
    }
    let tables: Vec<&String> = part.iter().collect();
    if tables.len() > 8 {
        return Err(Error::Unsupported("outer join over more than 8 optional tables".into()));
    }
    let mut out = Vec::new();
    for mask in 1u32..(1 << tables.len()) {
        let mut p = base.clone();
        for (i, t) in tables.iter().enumerate() {
            if mask & (1 << i) != 0 {
                p.conjuncts.push(Conjunct::cmp(indicator_column(t), CmpOp::Eq, one()));
            }
        }
        let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
        out.push(ExpectationTerm { sign, predicate: p });
    }
    Ok(out)
}

fn filters_on(pred: &Predicate, tables: &BTreeSet<String>) -> Predicate {
    Predicate::new(
        pred.conjuncts
            .iter()
            .filter(|c| tables.contains(table_of(&c.column)))
            .cloned()
            .collect(),
    )
}

#[allow(clippy::too_many_arguments)]
fn expectation(
    ens: &Ensemble,
    step_model: usize,
    role: FactorRole,
    part: &BTreeSet<String>,
    filter_tables: &BTreeSet<String>,
    extra: Vec<Term>,
    ast: &QueryAst,
    required: &BTreeSet<String>,
) -> Result<Factor> {
    let model = &ens.rspns[step_model];
    let mut terms = multiplicity_terms(ens, model, part)?;
    terms.extend(extra);
    let filters = filters_on(&ast.predicate, filter_tables);
    Ok(Factor {
        rspn: step_model,
        rspn_id: model.id.clone(),
        role,
        target: TargetExpr::new(terms),
        terms: presence_terms(model, part, required, &filters)?,
        reciprocal: false,
    })
}

fn population(ens: &Ensemble, m: usize) -> Factor {
    Factor {
        rspn: m,
        rspn_id: ens.rspns[m].id.clone(),
        role: FactorRole::Population,
        target: TargetExpr::one(),
        terms: Vec::new(),
        reciprocal: false,
    }
}

fn set(tables: &[String]) -> BTreeSet<String> {
    tables.iter().cloned().collect()
}

/// Tuple-factor terms a step contributes for links of later steps whose
/// covered endpoint it owns as the referenced side.
fn outgoing_link_terms(ast: &QueryAst, plan: &ExecutionPlan, i: usize, required: &BTreeSet<String>, ens: &Ensemble) -> Vec<Term> {
    let owned = set(&plan.steps[i].assigned);
    let mut out = Vec::new();
    for later in &plan.steps[i + 1..] {
        let Some(l) = &later.link else { continue };
        if l.covered_is_referenced && owned.contains(&l.covered) {
            let fk = &ens.schema.fks[l.fk];
            let col = factor_column(&fk.referenced_table, &fk.referencing_table);
            // rows without partners survive an outer join and count once
            if required.contains(&l.new) {
                out.push(Term::value(col));
            } else {
                out.push(Term::at_least_one(col));
            }
        }
    }
    let _ = ast;
    out
}

/// COUNT as a product of factors over the plan's models.
pub fn compile_count(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<FactorExpr> {
    let required = ast.required_tables();
    let first = &plan.steps[0];
    let mut factors = vec![population(ens, first.rspn)];
    let part = set(&first.assigned);
    factors.push(expectation(
        ens,
        first.rspn,
        FactorRole::Left,
        &part,
        &part,
        outgoing_link_terms(ast, plan, 0, &required, ens),
        ast,
        &required,
    )?);
    for (i, step) in plan.steps.iter().enumerate().skip(1) {
        factors.extend(right_factors(ast, plan, i, step, &required, ens)?);
    }
    let case = if plan.steps.len() > 1 {
        QueryCase::Combined
    } else if ens.rspns[first.rspn].table_set.len() == ast.tables.len() {
        QueryCase::ExactMatch
    } else {
        QueryCase::Superset
    };
    Ok(FactorExpr {
        case,
        factors,
        dropped: Vec::new(),
    })
}

fn right_factors(
    ast: &QueryAst,
    plan: &ExecutionPlan,
    i: usize,
    step: &Step,
    required: &BTreeSet<String>,
    ens: &Ensemble,
) -> Result<Vec<Factor>> {
    let link = step.link.as_ref().expect("later steps are linked");
    if !required.contains(&link.covered) && required.contains(&link.new) {
        return Err(Error::Unsupported(
            "outer join preserving a table introduced by a later model".into(),
        ));
    }
    let model = &ens.rspns[step.rspn];
    let overlap = set(&step.overlap);
    let num_part: BTreeSet<String> = overlap.iter().chain(&step.assigned).cloned().collect();
    let mut den_part = overlap.clone();
    den_part.insert(link.new.clone());
    // the referenced side is reached through the covered side's rows:
    // weight its tuples by how often they are referenced
    let mut weight = Vec::new();
    if !link.covered_is_referenced && !model.covers_table(&link.covered) {
        let fk = &ens.schema.fks[link.fk];
        weight.push(Term::value(factor_column(&fk.referenced_table, &fk.referencing_table)));
    }
    let mut num_extra = weight.clone();
    num_extra.extend(outgoing_link_terms(ast, plan, i, required, ens));
    let num = expectation(ens, step.rspn, FactorRole::Right, &num_part, &num_part, num_extra, ast, required)?;
    let mut den = expectation(ens, step.rspn, FactorRole::Overlap, &den_part, &overlap, weight, ast, required)?;
    den.reciprocal = true;
    Ok(vec![num, den])
}

/// Model answering an AVG: the single model of a one-step plan, otherwise
/// the model holding the column with the strongest dependency on the
/// filter columns.
fn avg_model(ast: &QueryAst, plan: &ExecutionPlan, column: &str, ens: &Ensemble) -> Result<usize> {
    if plan.steps.len() == 1 && ens.rspns[plan.steps[0].rspn].has_column(column) {
        return Ok(plan.steps[0].rspn);
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (mi, m) in ens.rspns.iter().enumerate() {
        if !m.has_column(column) || !ast.tables.iter().any(|t| m.covers_table(t)) {
            continue;
        }
        let strength = ast
            .predicate
            .conjuncts
            .iter()
            .filter_map(|c| m.rdc.get(column, &c.column))
            .fold(0.0f64, f64::max);
        let better = match best {
            None => true,
            Some((s, n, _)) => strength > s + 1e-12 || ((strength - s).abs() <= 1e-12 && m.table_set.len() < n),
        };
        if better {
            best = Some((strength, m.table_set.len(), mi));
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::Uncoverable(format!("no model holds {column}")))
}

/// AVG as `E[A · w · 1_C] / E[w · 1_C]` on one model, where `w` removes
/// join multiplicity. Filters outside the model are dropped.
pub fn compile_avg(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<FactorExpr> {
    let column = match &ast.aggregate {
        Aggregate::Avg(c) | Aggregate::Sum(c) => c.clone(),
        Aggregate::Count => return Err(Error::Invariant("AVG compilation of a COUNT query".into())),
    };
    let mi = avg_model(ast, plan, &column, ens)?;
    let model = &ens.rspns[mi];
    let required = ast.required_tables();
    let inside: BTreeSet<String> = ast.tables.iter().filter(|t| model.covers_table(t)).cloned().collect();
    let part: BTreeSet<String> = super::plan::components(ast, &inside)
        .into_iter()
        .find(|c| c.iter().any(|t| t == table_of(&column)))
        .map(|c| c.into_iter().collect())
        .unwrap_or_default();
    let mut dropped = Vec::new();
    let mut kept = Predicate::default();
    for c in &ast.predicate.conjuncts {
        if part.contains(table_of(&c.column)) {
            kept.conjuncts.push(c.clone());
        } else {
            dropped.push(c.clone());
        }
    }
    if !dropped.is_empty() {
        let strength = dropped
            .iter()
            .filter_map(|c| ens.rspns.iter().filter_map(|m| m.rdc.get(&column, &c.column)).reduce(f64::max))
            .reduce(f64::max);
        let names: Vec<String> = dropped.iter().map(|c| c.to_string()).collect();
        match strength {
            Some(s) => warn!("AVG({column}) ignores filters [{}]; max dependency on them {s:.3}", names.join(", ")),
            None => warn!("AVG({column}) ignores filters [{}]; dependency unknown", names.join(", ")),
        }
    }
    kept.conjuncts.push(Conjunct::new(column.clone(), Condition::NotNull));
    let weights = multiplicity_terms(ens, model, &part)?;
    let presence = presence_terms(model, &part, &required, &kept)?;
    let num = Factor {
        rspn: mi,
        rspn_id: model.id.clone(),
        role: FactorRole::AvgNumerator,
        target: TargetExpr::new(weights.clone()).times(Term::value(column.clone())),
        terms: presence.clone(),
        reciprocal: false,
    };
    let den = Factor {
        rspn: mi,
        rspn_id: model.id.clone(),
        role: FactorRole::AvgDenominator,
        target: TargetExpr::new(weights),
        terms: presence,
        reciprocal: true,
    };
    let case = if model.table_set.len() == part.len() {
        QueryCase::ExactMatch
    } else {
        QueryCase::Superset
    };
    Ok(FactorExpr {
        case,
        factors: vec![num, den],
        dropped,
    })
}

/// SUM as COUNT over rows with a non-NULL column times AVG of the column.
pub fn compile_sum(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<(FactorExpr, FactorExpr)> {
    let column = match &ast.aggregate {
        Aggregate::Sum(c) | Aggregate::Avg(c) => c.clone(),
        Aggregate::Count => return Err(Error::Invariant("SUM compilation of a COUNT query".into())),
    };
    let count_ast = ast.as_count().with_conjunct(Conjunct::new(column, Condition::NotNull));
    Ok((compile_count(&count_ast, plan, ens)?, compile_avg(ast, plan, ens)?))
}
