//! Conjunctive predicates and target expressions evaluated by a model.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::value::Datum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Cmp(CmpOp, Datum),
    In(BTreeSet<Datum>),
    /// Any non-NULL value.
    NotNull,
}

impl Condition {
    /// SQL semantics: NULL never satisfies a condition.
    pub fn matches(&self, v: &Datum) -> bool {
        match self {
            Condition::Cmp(op, c) => {
                // values of a different kind never compare
                if std::mem::discriminant(v) != std::mem::discriminant(c) {
                    return *op == CmpOp::Ne;
                }
                match op {
                    CmpOp::Lt => v < c,
                    CmpOp::Gt => v > c,
                    CmpOp::Le => v <= c,
                    CmpOp::Ge => v >= c,
                    CmpOp::Eq => v == c,
                    CmpOp::Ne => v != c,
                }
            }
            Condition::In(set) => set.contains(v),
            Condition::NotNull => true,
        }
    }

    pub fn matches_value(&self, v: Option<&Datum>) -> bool {
        v.is_some_and(|v| self.matches(v))
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lit = |d: &Datum| match d {
            Datum::Num(v) => format!("{v}"),
            Datum::Str(s) => format!("'{s}'"),
        };
        match self {
            Condition::Cmp(op, c) => write!(f, "{} {}", op.symbol(), lit(c)),
            Condition::In(set) => {
                let items: Vec<String> = set.iter().map(lit).collect();
                write!(f, "IN ({})", items.join(", "))
            }
            Condition::NotNull => write!(f, "IS NOT NULL"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conjunct {
    pub column: String,
    pub condition: Condition,
}

impl Conjunct {
    pub fn new(column: impl Into<String>, condition: Condition) -> Self {
        Conjunct {
            column: column.into(),
            condition,
        }
    }

    pub fn cmp(column: impl Into<String>, op: CmpOp, value: Datum) -> Self {
        Conjunct::new(column, Condition::Cmp(op, value))
    }
}

impl fmt::Display for Conjunct {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.column, self.condition)
    }
}

/// Conjunction of column conditions; empty means `true`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Predicate {
    pub conjuncts: Vec<Conjunct>,
}

impl Predicate {
    pub fn new(conjuncts: Vec<Conjunct>) -> Self {
        Predicate { conjuncts }
    }

    pub fn and(mut self, c: Conjunct) -> Self {
        self.conjuncts.push(c);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    pub fn columns(&self) -> BTreeSet<&str> {
        self.conjuncts.iter().map(|c| c.column.as_str()).collect()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return write!(f, "true");
        }
        let parts: Vec<String> = self.conjuncts.iter().map(|c| c.to_string()).collect();
        write!(f, "{}", parts.join(" AND "))
    }
}

/// Per-value map applied to a term's column before raising to its power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    Value,
    Reciprocal,
    /// `max(v, 1)`: zero tuple factors count as one.
    AtLeastOne,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub column: String,
    pub transform: Transform,
    pub power: u32,
}

impl Term {
    pub fn value(column: impl Into<String>) -> Self {
        Term {
            column: column.into(),
            transform: Transform::Value,
            power: 1,
        }
    }

    pub fn reciprocal(column: impl Into<String>) -> Self {
        Term {
            column: column.into(),
            transform: Transform::Reciprocal,
            power: 1,
        }
    }

    pub fn at_least_one(column: impl Into<String>) -> Self {
        Term {
            column: column.into(),
            transform: Transform::AtLeastOne,
            power: 1,
        }
    }

    /// `g(v)`; `None` for non-numeric values.
    pub fn apply(&self, v: f64) -> f64 {
        let base = match self.transform {
            Transform::Value => v,
            Transform::Reciprocal => 1.0 / v,
            Transform::AtLeastOne => v.max(1.0),
        };
        base.powi(self.power as i32)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.transform {
            Transform::Value => self.column.clone(),
            Transform::Reciprocal => format!("1/{}", self.column),
            Transform::AtLeastOne => format!("max({},1)", self.column),
        };
        if self.power == 1 {
            write!(f, "{base}")
        } else {
            write!(f, "({base})^{}", self.power)
        }
    }
}

/// Product of terms; the empty product is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TargetExpr {
    pub terms: Vec<Term>,
}

impl TargetExpr {
    pub fn one() -> Self {
        TargetExpr::default()
    }

    pub fn new(terms: Vec<Term>) -> Self {
        TargetExpr { terms }
    }

    pub fn column(column: impl Into<String>) -> Self {
        TargetExpr::new(vec![Term::value(column)])
    }

    pub fn times(mut self, t: Term) -> Self {
        self.terms.push(t);
        self
    }

    pub fn is_one(&self) -> bool {
        self.terms.is_empty()
    }

    /// Every term raised to `k` times its power.
    pub fn pow(&self, k: u32) -> Self {
        TargetExpr {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    power: t.power * k,
                    ..t.clone()
                })
                .collect(),
        }
    }
}

impl fmt::Display for TargetExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = self.terms.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join("*"))
    }
}
