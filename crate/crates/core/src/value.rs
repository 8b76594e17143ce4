//! Scalar values shared by tables, leaves and predicates.
//!
//! `Datum` is a non-NULL value. NULL is represented as `None` wherever a
//! column may hold it, so it can never collide with a domain value.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical,
    Continuous,
}

impl ColumnKind {
    pub fn name(self) -> &'static str {
        match self {
            ColumnKind::Categorical => "categorical",
            ColumnKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Datum {
    Num(f64),
    Str(Arc<str>),
}

/// A possibly-NULL cell.
pub type Value = Option<Datum>;

impl Datum {
    /// Numeric constructor; normalizes `-0.0` so equal numbers compare equal.
    pub fn num(v: f64) -> Datum {
        Datum::Num(if v == 0.0 { 0.0 } else { v })
    }

    pub fn str(s: &str) -> Datum {
        Datum::Str(Arc::from(s))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Datum::Num(v) => Some(*v),
            Datum::Str(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Datum::Str(s) => Some(s),
            Datum::Num(_) => None,
        }
    }

    /// Parse a raw text field into a datum of the given kind.
    pub fn parse(text: &str, kind: ColumnKind) -> Option<Datum> {
        match kind {
            ColumnKind::Categorical => Some(Datum::str(text)),
            ColumnKind::Continuous => {
                let v: f64 = text.trim().parse().ok()?;
                v.is_finite().then(|| Datum::num(v))
            }
        }
    }
}

impl PartialEq for Datum {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Datum {}

impl PartialOrd for Datum {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Datum {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Datum::Num(a), Datum::Num(b)) => a.total_cmp(b),
            (Datum::Str(a), Datum::Str(b)) => a.as_ref().cmp(b.as_ref()),
            (Datum::Num(_), Datum::Str(_)) => Ordering::Less,
            (Datum::Str(_), Datum::Num(_)) => Ordering::Greater,
        }
    }
}

impl std::hash::Hash for Datum {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Datum::Num(v) => {
                0u8.hash(state);
                v.to_bits().hash(state);
            }
            Datum::Str(s) => {
                1u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Datum::Num(v) => write!(f, "{v}"),
            Datum::Str(s) => write!(f, "{s}"),
        }
    }
}

pub fn display_value(v: &Value) -> String {
    match v {
        Some(d) => d.to_string(),
        None => "NULL".to_string(),
    }
}
