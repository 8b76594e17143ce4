//! SQL aggregate queries: parsing, model selection, compilation into
//! products of expectations, and evaluation with confidence intervals.

mod compile;
mod exec;
mod parse;
mod plan;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::spn::Predicate;

pub use compile::{compile_avg, compile_count, compile_sum, ExpectationTerm, Factor, FactorExpr, FactorRole, QueryCase};
pub use exec::{
    classify, estimate_cardinality, evaluate_factors, execute, execute_with_plan, regress, Estimate, GroupEstimate,
    QueryOptions, QueryResult,
};
pub use parse::parse_query;
pub use plan::{select_rspns, ExecutionPlan, Link, Step};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregate {
    Count,
    Sum(String),
    Avg(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
    Right,
    Full,
}

/// Equi-join along a declared foreign key. `left` was listed before
/// `right` in the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: String,
    pub right: String,
    pub kind: JoinKind,
    /// Index into the schema's foreign keys.
    pub fk: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAst {
    pub aggregate: Aggregate,
    /// Tables in FROM order.
    pub tables: Vec<String>,
    pub joins: Vec<JoinEdge>,
    pub predicate: Predicate,
    pub group_by: Vec<String>,
}

/// Table owning a qualified column name.
pub(crate) fn table_of(column: &str) -> &str {
    column.split_once('.').map_or(column, |(t, _)| t)
}

impl QueryAst {
    /// Tables whose tuples must be present in every result row. Tables on
    /// the null-supplying side of an outer join are optional unless a
    /// filter on one of their columns rejects NULL padding.
    pub fn required_tables(&self) -> BTreeSet<String> {
        let mut optional = BTreeSet::new();
        let mut seen: Vec<&str> = vec![self.tables[0].as_str()];
        for j in &self.joins {
            match j.kind {
                JoinKind::Inner => {}
                JoinKind::Left => {
                    optional.insert(j.right.clone());
                }
                JoinKind::Right => optional.extend(seen.iter().map(|s| s.to_string())),
                JoinKind::Full => {
                    optional.extend(seen.iter().map(|s| s.to_string()));
                    optional.insert(j.right.clone());
                }
            }
            seen.push(&j.right);
        }
        for c in &self.predicate.conjuncts {
            optional.remove(table_of(&c.column));
        }
        self.tables
            .iter()
            .filter(|t| !optional.contains(*t))
            .cloned()
            .collect()
    }

    pub fn has_outer_join(&self) -> bool {
        self.joins.iter().any(|j| j.kind != JoinKind::Inner)
    }

    /// Copy with an extra conjunct.
    pub fn with_conjunct(&self, c: crate::spn::Conjunct) -> QueryAst {
        let mut q = self.clone();
        q.predicate.conjuncts.push(c);
        q
    }

    pub fn as_count(&self) -> QueryAst {
        QueryAst {
            aggregate: Aggregate::Count,
            ..self.clone()
        }
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.aggregate {
            Aggregate::Count => write!(f, "SELECT COUNT(*)")?,
            Aggregate::Sum(c) => write!(f, "SELECT SUM({c})")?,
            Aggregate::Avg(c) => write!(f, "SELECT AVG({c})")?,
        }
        write!(f, " FROM {}", self.tables[0])?;
        for j in &self.joins {
            let kw = match j.kind {
                JoinKind::Inner => "JOIN",
                JoinKind::Left => "LEFT JOIN",
                JoinKind::Right => "RIGHT JOIN",
                JoinKind::Full => "FULL JOIN",
            };
            write!(f, " {kw} {}", j.right)?;
        }
        if !self.predicate.is_empty() {
            write!(f, " WHERE {}", self.predicate)?;
        }
        if !self.group_by.is_empty() {
            write!(f, " GROUP BY {}", self.group_by.join(", "))?;
        }
        Ok(())
    }
}
