//! Evaluation of compiled expressions, group-by expansion and the
//! regression and classification entry points.

use std::collections::BTreeSet;

use log::warn;
use serde::{Deserialize, Serialize};

use super::compile::{compile_avg, compile_count, Factor, FactorExpr, QueryCase};
use super::plan::{select_rspns, ExecutionPlan};
use super::{parse_query, table_of, Aggregate, QueryAst};
use crate::confidence::{self, FactorKind, UncertainFactor};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::spn::{CmpOp, Conjunct, Predicate, Rspn, TargetExpr};
use crate::value::Datum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOptions {
    /// Two-sided confidence level of reported intervals.
    pub confidence_level: f64,
    /// Groups with a smaller estimated row count are omitted.
    pub min_group_count: f64,
    /// Largest number of candidate groups enumerated.
    pub max_groups: usize,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            confidence_level: 0.95,
            min_group_count: 0.5,
            max_groups: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    fn new(f: &UncertainFactor, level: f64, nonnegative: bool) -> Self {
        let (mut lo, hi) = confidence::confidence_interval(f.mean, f.variance, level);
        if nonnegative {
            lo = lo.max(0.0);
        }
        Estimate {
            value: f.mean,
            variance: f.variance,
            ci_low: lo,
            ci_high: hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEstimate {
    pub key: Vec<Datum>,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query: String,
    pub plan: ExecutionPlan,
    pub case: QueryCase,
    /// Compiled expressions, one per evaluated aggregate.
    pub expressions: Vec<String>,
    /// Set for queries without GROUP BY.
    pub estimate: Option<Estimate>,
    pub group_columns: Vec<String>,
    pub groups: Vec<GroupEstimate>,
    pub warnings: Vec<String>,
}

struct Moments {
    p: f64,
    e: f64,
    e2: f64,
    n: f64,
}

fn moments(f: &Factor, ens: &Ensemble) -> Result<Moments> {
    let m = &ens.rspns[f.rspn];
    let (mut p, mut e, mut e2) = (0.0, 0.0, 0.0);
    let square = f.target.pow(2);
    for t in &f.terms {
        p += t.sign * m.probability(&t.predicate)?;
        if f.target.is_one() {
            continue;
        }
        e += t.sign * m.expectation(&f.target, &t.predicate)?;
        e2 += t.sign * m.expectation(&square, &t.predicate)?;
    }
    if f.target.is_one() {
        e = p;
        e2 = p;
    }
    Ok(Moments {
        p: p.max(0.0),
        e,
        e2,
        n: m.n_samples.max(1) as f64,
    })
}

/// Conditional mean `E[target | C]` with its sampling variance.
fn conditional(mo: &Moments) -> Option<UncertainFactor> {
    if mo.p <= 0.0 {
        return None;
    }
    let mean = mo.e / mo.p;
    let v = (mo.e2 / mo.p - mean * mean).max(0.0);
    Some(UncertainFactor {
        mean,
        variance: v / (mo.n * mo.p),
        kind: FactorKind::ConditionalExpectation,
    })
}

/// `E[target · 1_C] = P(C) · E[target | C]`, or `None` for an empty
/// condition.
fn unconditional(mo: &Moments) -> UncertainFactor {
    let prob = UncertainFactor::probability(mo.p, mo.n);
    match conditional(mo) {
        Some(c) if c.variance > 0.0 || c.mean != 1.0 => confidence::product(&prob, &c),
        Some(_) => prob,
        None => UncertainFactor::constant(0.0),
    }
}

/// Value of a product expression with propagated variance. `Ok(None)` when
/// a denominator vanishes.
pub fn evaluate_factors(expr: &FactorExpr, ens: &Ensemble) -> Result<Option<UncertainFactor>> {
    let conditional_form = expr.factors.iter().all(|f| {
        matches!(
            f.role,
            super::compile::FactorRole::AvgNumerator | super::compile::FactorRole::AvgDenominator
        )
    });
    let mut parts = Vec::with_capacity(expr.factors.len());
    for f in &expr.factors {
        let u = if f.is_population() {
            UncertainFactor::constant(ens.rspns[f.rspn].population())
        } else {
            let mo = moments(f, ens)?;
            if conditional_form {
                match conditional(&mo) {
                    Some(c) => c,
                    None => return Ok(None),
                }
            } else {
                unconditional(&mo)
            }
        };
        if f.reciprocal {
            if u.mean.abs() < 1e-300 {
                return Ok(None);
            }
            parts.push(confidence::reciprocal(&u)?);
        } else {
            parts.push(u);
        }
    }
    Ok(Some(confidence::combine_product(&parts)))
}

struct Evaluated {
    value: UncertainFactor,
    expressions: Vec<String>,
    case: QueryCase,
    warnings: Vec<String>,
}

fn note(warnings: &mut Vec<String>, msg: String) {
    warn!("{msg}");
    warnings.push(msg);
}

fn eval_count(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<Evaluated> {
    let expr = compile_count(ast, plan, ens)?;
    let mut warnings = Vec::new();
    let value = match evaluate_factors(&expr, ens)? {
        Some(v) if v.mean < 0.0 => {
            note(&mut warnings, format!("negative count estimate {:.4} clamped to 0", v.mean));
            UncertainFactor { mean: 0.0, ..v }
        }
        Some(v) => v,
        None => {
            note(&mut warnings, "a normalizing expectation is zero; count set to 0".into());
            UncertainFactor::constant(0.0)
        }
    };
    Ok(Evaluated {
        value,
        expressions: vec![expr.to_string()],
        case: expr.case,
        warnings,
    })
}

fn dropped_warning(expr: &FactorExpr, warnings: &mut Vec<String>) {
    if !expr.dropped.is_empty() {
        let names: Vec<String> = expr.dropped.iter().map(|c| c.to_string()).collect();
        warnings.push(format!("filters outside the averaging model ignored: {}", names.join(", ")));
    }
}

fn eval_avg(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<Evaluated> {
    let expr = compile_avg(ast, plan, ens)?;
    let mut warnings = Vec::new();
    dropped_warning(&expr, &mut warnings);
    let value = evaluate_factors(&expr, ens)?.ok_or(Error::EmptyCondition)?;
    Ok(Evaluated {
        value,
        expressions: vec![expr.to_string()],
        case: expr.case,
        warnings,
    })
}

fn eval_sum(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<Evaluated> {
    let column = match &ast.aggregate {
        Aggregate::Sum(c) => c.clone(),
        _ => return Err(Error::Invariant("SUM evaluation of another aggregate".into())),
    };
    let count_ast = ast
        .as_count()
        .with_conjunct(Conjunct::new(column, crate::spn::Condition::NotNull));
    let count = eval_count(&count_ast, plan, ens)?;
    let mut warnings = count.warnings;
    let mut expressions = count.expressions;
    if count.value.mean == 0.0 {
        return Ok(Evaluated {
            value: UncertainFactor::constant(0.0),
            expressions,
            case: count.case,
            warnings,
        });
    }
    let avg = eval_avg(ast, plan, ens)?;
    warnings.extend(avg.warnings);
    expressions.extend(avg.expressions);
    Ok(Evaluated {
        value: confidence::product(&count.value, &avg.value),
        expressions,
        case: count.case,
        warnings,
    })
}

fn eval(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble) -> Result<Evaluated> {
    match ast.aggregate {
        Aggregate::Count => eval_count(ast, plan, ens),
        Aggregate::Avg(_) => eval_avg(ast, plan, ens),
        Aggregate::Sum(_) => eval_sum(ast, plan, ens),
    }
}

/// Candidate values of a grouping column, read from the plan's models.
fn group_values(column: &str, plan: &ExecutionPlan, ens: &Ensemble) -> Result<Vec<Datum>> {
    let table = table_of(column);
    let models = plan
        .steps
        .iter()
        .filter(|s| s.assigned.iter().chain(&s.overlap).any(|t| t == table))
        .map(|s| &ens.rspns[s.rspn]);
    let mut values = BTreeSet::new();
    let mut found = false;
    for m in models {
        if let Some(idx) = m.column_index(column) {
            if m.leaves_of(idx).any(|l| l.is_binned()) {
                return Err(Error::Unsupported(format!(
                    "GROUP BY on {column}, whose distribution is summarized by ranges"
                )));
            }
            values.extend(m.column_support(idx, &[]));
            found = true;
        } else if let Some(fd) = m.fds.iter().find(|f| f.dependent_column() == column) {
            values.extend(fd.dictionary.values().cloned());
            found = true;
        }
    }
    if !found {
        return Err(Error::NotInScope {
            column: column.to_string(),
            model: plan.steps.iter().map(|s| s.rspn_id.clone()).collect::<Vec<_>>().join(","),
        });
    }
    Ok(values.into_iter().collect())
}

fn group_keys(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble, opts: &QueryOptions) -> Result<Vec<Vec<Datum>>> {
    let mut keys: Vec<Vec<Datum>> = vec![Vec::new()];
    for c in &ast.group_by {
        let vals = group_values(c, plan, ens)?;
        if keys.len().saturating_mul(vals.len()) > opts.max_groups {
            return Err(Error::Unsupported(format!(
                "GROUP BY expands to more than {} candidate groups",
                opts.max_groups
            )));
        }
        keys = keys
            .into_iter()
            .flat_map(|k| {
                vals.iter().map(move |v| {
                    let mut k = k.clone();
                    k.push(v.clone());
                    k
                })
            })
            .collect();
    }
    Ok(keys)
}

fn nonnegative(ast: &QueryAst) -> bool {
    matches!(ast.aggregate, Aggregate::Count)
}

/// Evaluate a parsed query on a fixed plan.
pub fn execute_with_plan(ast: &QueryAst, plan: &ExecutionPlan, ens: &Ensemble, opts: &QueryOptions) -> Result<QueryResult> {
    let level = opts.confidence_level;
    if ast.group_by.is_empty() {
        let ev = eval(ast, plan, ens)?;
        return Ok(QueryResult {
            query: ast.to_string(),
            plan: plan.clone(),
            case: ev.case,
            expressions: ev.expressions,
            estimate: Some(Estimate::new(&ev.value, level, nonnegative(ast))),
            group_columns: Vec::new(),
            groups: Vec::new(),
            warnings: ev.warnings,
        });
    }
    let mut groups = Vec::new();
    let mut warnings = Vec::new();
    let mut expressions = Vec::new();
    let mut case = QueryCase::ExactMatch;
    for key in group_keys(ast, plan, ens, opts)? {
        let mut g = ast.clone();
        g.group_by.clear();
        for (c, v) in ast.group_by.iter().zip(&key) {
            g.predicate.conjuncts.push(Conjunct::cmp(c.clone(), CmpOp::Eq, v.clone()));
        }
        let count = eval_count(&g.as_count(), plan, ens)?;
        case = count.case;
        if count.value.mean < opts.min_group_count {
            continue;
        }
        let ev = match ast.aggregate {
            Aggregate::Count => count,
            _ => match eval(&g, plan, ens) {
                Ok(ev) => ev,
                Err(Error::EmptyCondition) => continue,
                Err(e) => return Err(e),
            },
        };
        if expressions.is_empty() {
            expressions = ev.expressions.clone();
        }
        for w in ev.warnings {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        groups.push(GroupEstimate {
            key,
            estimate: Estimate::new(&ev.value, level, nonnegative(ast)),
        });
    }
    Ok(QueryResult {
        query: ast.to_string(),
        plan: plan.clone(),
        case,
        expressions,
        estimate: None,
        group_columns: ast.group_by.clone(),
        groups,
        warnings,
    })
}

/// Parse, plan and evaluate a SQL aggregate query.
pub fn execute(sql: &str, ens: &Ensemble, opts: &QueryOptions) -> Result<QueryResult> {
    let ast = parse_query(sql, &ens.schema)?;
    let plan = select_rspns(&ast, ens)?;
    execute_with_plan(&ast, &plan, ens, opts)
}

/// Estimated result size of the query's join and filters, rounded and at
/// least 1.
pub fn estimate_cardinality(sql: &str, ens: &Ensemble) -> Result<u64> {
    let ast = parse_query(sql, &ens.schema)?.as_count();
    if !ast.group_by.is_empty() {
        return Err(Error::Unsupported("cardinality of a grouped query".into()));
    }
    let plan = select_rspns(&ast, ens)?;
    let ev = eval_count(&ast, &plan, ens)?;
    Ok(ev.value.mean.round().max(1.0) as u64)
}

/// Model holding `target` whose strongest dependency between `target` and
/// the evidence columns is largest; ties prefer fewer tables.
fn predictive_model<'a>(ens: &'a Ensemble, target: &str, evidence: &Predicate) -> Result<&'a Rspn> {
    let mut best: Option<(f64, usize, &Rspn)> = None;
    for m in ens.rspns.iter().filter(|m| m.has_column(target)) {
        let translated = m.translate_fd_predicate(evidence);
        let s = translated
            .conjuncts
            .iter()
            .filter_map(|c| m.rdc.get(target, &c.column))
            .fold(0.0f64, f64::max);
        let better = match best {
            None => true,
            Some((bs, bn, _)) => s > bs + 1e-12 || ((s - bs).abs() <= 1e-12 && m.table_set.len() < bn),
        };
        if better {
            best = Some((s, m.table_set.len(), m));
        }
    }
    best.map(|b| b.2)
        .ok_or_else(|| Error::UnknownColumn(target.to_string()))
}

fn visible_evidence(m: &Rspn, evidence: &Predicate) -> Predicate {
    let t = m.translate_fd_predicate(evidence);
    let kept: Vec<Conjunct> = t.conjuncts.into_iter().filter(|c| m.has_column(&c.column)).collect();
    if kept.len() < evidence.conjuncts.len() {
        warn!("evidence outside model {} ignored", m.id);
    }
    Predicate::new(kept)
}

/// Conditional mean of a continuous column given evidence.
pub fn regress(ens: &Ensemble, target: &str, evidence: &Predicate) -> Result<f64> {
    let m = predictive_model(ens, target, evidence)?;
    m.conditional_expectation(&TargetExpr::column(target), &visible_evidence(m, evidence))
}

/// Most probable value of a column given evidence.
pub fn classify(ens: &Ensemble, target: &str, evidence: &Predicate) -> Result<Datum> {
    let m = predictive_model(ens, target, evidence)?;
    m.mpe(&visible_evidence(m, evidence), target)
}
