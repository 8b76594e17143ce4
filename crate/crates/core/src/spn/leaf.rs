//! Univariate leaves with exact value counts, or equal-frequency bins
//! for continuous columns with too many distinct values.

use std::collections::BTreeMap;
use std::ops::Bound;

use log::warn;
use serde::{Deserialize, Serialize};

use super::expr::{CmpOp, Condition, Term, Transform};
use crate::value::{ColumnKind, Datum, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

impl Bin {
    fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaf {
    /// Index into the model's scope columns.
    pub column: usize,
    pub kind: ColumnKind,
    pub counts: BTreeMap<Datum, u64>,
    pub null_count: u64,
    /// Present when the column was binned; `counts` is then empty.
    pub bins: Option<Vec<Bin>>,
}

impl Leaf {
    /// Fit exact counts, switching to `distinct_limit` equal-frequency bins
    /// for continuous columns with more distinct values than that.
    pub fn fit(
        column: usize,
        kind: ColumnKind,
        values: impl IntoIterator<Item = Value>,
        distinct_limit: usize,
    ) -> Leaf {
        let mut counts: BTreeMap<Datum, u64> = BTreeMap::new();
        let mut null_count = 0;
        for v in values {
            match v {
                Some(d) => *counts.entry(d).or_default() += 1,
                None => null_count += 1,
            }
        }
        let mut leaf = Leaf {
            column,
            kind,
            counts,
            null_count,
            bins: None,
        };
        if kind == ColumnKind::Continuous && leaf.counts.len() > distinct_limit.max(1) {
            leaf.bin(distinct_limit.max(1));
        }
        leaf
    }

    fn bin(&mut self, nbins: usize) {
        let total: u64 = self.counts.values().sum();
        let mut bins: Vec<Bin> = Vec::with_capacity(nbins);
        let mut acc: u64 = 0;
        let mut current: Option<Bin> = None;
        for (d, &c) in &self.counts {
            let x = d.as_f64().expect("continuous values are numeric");
            let b = current.get_or_insert(Bin {
                lower: x,
                upper: x,
                count: 0,
            });
            b.upper = x;
            b.count += c;
            acc += c;
            // close the bin once its share of the mass is reached
            let target = (total as u128 * (bins.len() as u128 + 1)).div_ceil(nbins as u128);
            if acc as u128 >= target {
                bins.push(current.take().expect("open bin"));
            }
        }
        if let Some(b) = current {
            bins.push(b);
        }
        self.counts.clear();
        self.bins = Some(bins);
    }

    pub fn total(&self) -> u64 {
        let values: u64 = match &self.bins {
            Some(b) => b.iter().map(|b| b.count).sum(),
            None => self.counts.values().sum(),
        };
        self.null_count + values
    }

    pub fn is_binned(&self) -> bool {
        self.bins.is_some()
    }

    /// `Σ_v count(v)·Π g(v) / total` over values satisfying every condition.
    pub fn evaluate(&self, conditions: &[Condition], terms: &[Term]) -> f64 {
        let total = self.total();
        if total == 0 {
            return if conditions.is_empty() && terms.is_empty() {
                1.0
            } else {
                0.0
            };
        }
        if conditions.is_empty() && terms.is_empty() {
            return 1.0;
        }
        let mass = match &self.bins {
            Some(bins) => binned_mass(bins, conditions, terms),
            None => self.exact_mass(conditions, terms),
        };
        mass / total as f64
    }

    fn exact_mass(&self, conditions: &[Condition], terms: &[Term]) -> f64 {
        let weight = |d: &Datum| -> f64 {
            if terms.is_empty() {
                return 1.0;
            }
            match d.as_f64() {
                Some(x) => terms.iter().map(|t| t.apply(x)).product(),
                None => 0.0,
            }
        };
        let ok = |d: &Datum| conditions.iter().all(|c| c.matches(d));
        // candidate points from equality-like conditions
        let mut points: Option<Vec<&Datum>> = None;
        for c in conditions {
            match c {
                Condition::Cmp(CmpOp::Eq, v) => points = Some(vec![v]),
                Condition::In(set) if points.is_none() => points = Some(set.iter().collect()),
                _ => {}
            }
        }
        if let Some(points) = points {
            return points
                .into_iter()
                .filter(|d| ok(d))
                .filter_map(|d| self.counts.get(d).map(|&c| c as f64 * weight(d)))
                .sum();
        }
        let Some((lo, hi)) = range_bounds(conditions) else {
            return 0.0;
        };
        self.counts
            .range((lo, hi))
            .filter(|(d, _)| ok(d))
            .map(|(d, &c)| c as f64 * weight(d))
            .sum()
    }

    /// Most frequent non-NULL value satisfying the conditions, with its
    /// relative frequency. Ties go to the smallest value.
    pub fn mode(&self, conditions: &[Condition]) -> Option<(Datum, f64)> {
        let total = self.total() as f64;
        if total == 0.0 {
            return None;
        }
        let ok = |d: &Datum| conditions.iter().all(|c| c.matches(d));
        let mut best: Option<(Datum, u64)> = None;
        match &self.bins {
            Some(bins) => {
                for b in bins {
                    let mid = Datum::num((b.lower + b.upper) / 2.0);
                    if b.count > 0 && ok(&mid) && best.as_ref().is_none_or(|(_, c)| b.count > *c) {
                        best = Some((mid, b.count));
                    }
                }
            }
            None => {
                for (d, &c) in &self.counts {
                    if c > 0 && ok(d) && best.as_ref().is_none_or(|(_, bc)| c > *bc) {
                        best = Some((d.clone(), c));
                    }
                }
            }
        }
        best.map(|(d, c)| (d, c as f64 / total))
    }

    /// Non-NULL values (bin midpoints when binned) satisfying the conditions.
    pub fn support(&self, conditions: &[Condition]) -> Vec<Datum> {
        let ok = |d: &Datum| conditions.iter().all(|c| c.matches(d));
        match &self.bins {
            Some(bins) => bins
                .iter()
                .filter(|b| b.count > 0)
                .map(|b| Datum::num((b.lower + b.upper) / 2.0))
                .filter(|d| ok(d))
                .collect(),
            None => self
                .counts
                .iter()
                .filter(|(d, &c)| c > 0 && ok(d))
                .map(|(d, _)| d.clone())
                .collect(),
        }
    }

    /// Add or remove one observation.
    pub fn adjust(&mut self, value: &Value, insert: bool) {
        match value {
            None => {
                if insert {
                    self.null_count += 1;
                } else if self.null_count == 0 {
                    warn!("delete of NULL with zero count in leaf {}", self.column);
                } else {
                    self.null_count -= 1;
                }
            }
            Some(d) => match &mut self.bins {
                Some(bins) => {
                    let x = d.as_f64().unwrap_or(0.0);
                    let i = nearest_bin(bins, x);
                    let b = &mut bins[i];
                    if insert {
                        b.count += 1;
                    } else if b.count == 0 {
                        warn!("delete of {x} from empty bin in leaf {}", self.column);
                    } else {
                        b.count -= 1;
                    }
                }
                None => {
                    if insert {
                        *self.counts.entry(d.clone()).or_default() += 1;
                    } else {
                        match self.counts.get_mut(d) {
                            Some(c) if *c > 1 => *c -= 1,
                            Some(_) => {
                                self.counts.remove(d);
                            }
                            None => warn!("delete of unseen value {d} in leaf {}", self.column),
                        }
                    }
                }
            },
        }
    }
}

fn nearest_bin(bins: &[Bin], x: f64) -> usize {
    let i = bins.partition_point(|b| b.upper < x);
    if i >= bins.len() {
        return bins.len() - 1;
    }
    if x >= bins[i].lower || i == 0 {
        return i;
    }
    // x falls in the gap between bins i-1 and i
    if x - bins[i - 1].upper <= bins[i].lower - x {
        i - 1
    } else {
        i
    }
}

/// Tightest range implied by the order comparisons; `None` when empty.
fn range_bounds(conditions: &[Condition]) -> Option<(Bound<&Datum>, Bound<&Datum>)> {
    let mut lo: Bound<&Datum> = Bound::Unbounded;
    let mut hi: Bound<&Datum> = Bound::Unbounded;
    for c in conditions {
        if let Condition::Cmp(op, v) = c {
            match op {
                CmpOp::Gt | CmpOp::Ge => {
                    let new = if *op == CmpOp::Gt {
                        Bound::Excluded(v)
                    } else {
                        Bound::Included(v)
                    };
                    lo = tighter_lower(lo, new);
                }
                CmpOp::Lt | CmpOp::Le => {
                    let new = if *op == CmpOp::Lt {
                        Bound::Excluded(v)
                    } else {
                        Bound::Included(v)
                    };
                    hi = tighter_upper(hi, new);
                }
                _ => {}
            }
        }
    }
    // BTreeMap::range panics on inverted or empty-excluded ranges
    if let (Bound::Included(a) | Bound::Excluded(a), Bound::Included(b) | Bound::Excluded(b)) =
        (lo, hi)
    {
        let empty = a > b || (a == b && !(matches!(lo, Bound::Included(_)) && matches!(hi, Bound::Included(_))));
        if empty {
            return None;
        }
    }
    Some((lo, hi))
}

fn tighter_lower<'a>(a: Bound<&'a Datum>, b: Bound<&'a Datum>) -> Bound<&'a Datum> {
    match (a, b) {
        (Bound::Unbounded, x) | (x, Bound::Unbounded) => x,
        (Bound::Included(x) | Bound::Excluded(x), Bound::Included(y) | Bound::Excluded(y)) => {
            if x > y {
                a
            } else if y > x {
                b
            } else if matches!(a, Bound::Excluded(_)) {
                a
            } else {
                b
            }
        }
    }
}

fn tighter_upper<'a>(a: Bound<&'a Datum>, b: Bound<&'a Datum>) -> Bound<&'a Datum> {
    match (a, b) {
        (Bound::Unbounded, x) | (x, Bound::Unbounded) => x,
        (Bound::Included(x) | Bound::Excluded(x), Bound::Included(y) | Bound::Excluded(y)) => {
            if x < y {
                a
            } else if y < x {
                b
            } else if matches!(a, Bound::Excluded(_)) {
                a
            } else {
                b
            }
        }
    }
}

/// Mass of binned values satisfying the conditions, under uniform density
/// within each bin.
fn binned_mass(bins: &[Bin], conditions: &[Condition], terms: &[Term]) -> f64 {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut points: Option<Vec<f64>> = None;
    let mut excluded: Vec<f64> = Vec::new();
    for c in conditions {
        match c {
            Condition::Cmp(op, v) => {
                let Some(x) = v.as_f64() else {
                    // numeric column against a string constant
                    if *op == CmpOp::Ne {
                        continue;
                    }
                    return 0.0;
                };
                match op {
                    CmpOp::Lt | CmpOp::Le => hi = hi.min(x),
                    CmpOp::Gt | CmpOp::Ge => lo = lo.max(x),
                    CmpOp::Eq => points = Some(vec![x]),
                    CmpOp::Ne => excluded.push(x),
                }
            }
            Condition::In(set) => {
                if points.is_none() {
                    points = Some(set.iter().filter_map(|d| d.as_f64()).collect());
                }
            }
            Condition::NotNull => {}
        }
    }
    let point_ok = |x: f64| {
        conditions.iter().all(|c| c.matches(&Datum::num(x)))
    };
    let weight = |x: f64| -> f64 { terms.iter().map(|t| t.apply(x)).product() };
    if let Some(points) = points {
        // only degenerate bins carry point mass
        return points
            .into_iter()
            .filter(|&x| point_ok(x))
            .map(|x| {
                bins.iter()
                    .filter(|b| b.width() == 0.0 && b.lower == x)
                    .map(|b| b.count as f64 * weight(x))
                    .sum::<f64>()
            })
            .sum();
    }
    let mut mass = 0.0;
    for b in bins {
        if b.count == 0 {
            continue;
        }
        if b.width() == 0.0 {
            if point_ok(b.lower) {
                mass += b.count as f64 * weight(b.lower);
            }
            continue;
        }
        let a = lo.max(b.lower);
        let z = hi.min(b.upper);
        if a >= z {
            continue;
        }
        let frac = (z - a) / b.width();
        let avg = mean_over(terms, a, z);
        mass += b.count as f64 * frac * avg;
    }
    mass
}

/// Mean of `Π g(x)` for `x` uniform on `[a, z]`.
fn mean_over(terms: &[Term], a: f64, z: f64) -> f64 {
    match terms {
        [] => 1.0,
        [t] if t.transform == Transform::Value => {
            let p = t.power as i32;
            (z.powi(p + 1) - a.powi(p + 1)) / ((p + 1) as f64 * (z - a))
        }
        _ => {
            // composite expressions: midpoint rule over 16 panels
            let n = 16;
            let h = (z - a) / n as f64;
            (0..n)
                .map(|i| {
                    let x = a + (i as f64 + 0.5) * h;
                    terms.iter().map(|t| t.apply(x)).product::<f64>()
                })
                .sum::<f64>()
                / n as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ages() -> Leaf {
        Leaf::fit(
            0,
            ColumnKind::Continuous,
            [20.0, 50.0, 80.0].map(|x| Some(Datum::num(x))),
            100_000,
        )
    }

    #[test]
    fn exact_frequencies() {
        let l = ages();
        assert_eq!(l.total(), 3);
        let lt = [Condition::Cmp(CmpOp::Lt, Datum::num(60.0))];
        assert!((l.evaluate(&lt, &[]) - 2.0 / 3.0).abs() < 1e-12);
        let mean = l.evaluate(&[], &[Term::value("a")]);
        assert!((mean - 50.0).abs() < 1e-12);
    }

    #[test]
    fn all_null_leaf() {
        let l = Leaf::fit(0, ColumnKind::Categorical, [None, None], 10);
        assert_eq!(l.null_count, 2);
        assert_eq!(l.evaluate(&[Condition::NotNull], &[]), 0.0);
        assert_eq!(l.evaluate(&[], &[]), 1.0);
    }

    #[test]
    fn inverted_range_is_empty() {
        let l = ages();
        let c = [
            Condition::Cmp(CmpOp::Gt, Datum::num(60.0)),
            Condition::Cmp(CmpOp::Lt, Datum::num(30.0)),
        ];
        assert_eq!(l.evaluate(&c, &[]), 0.0);
        let c = [
            Condition::Cmp(CmpOp::Ge, Datum::num(50.0)),
            Condition::Cmp(CmpOp::Lt, Datum::num(50.0)),
        ];
        assert_eq!(l.evaluate(&c, &[]), 0.0);
    }

    #[test]
    fn binned_leaf_normalizes() {
        let n = 1001;
        let l = Leaf::fit(
            0,
            ColumnKind::Continuous,
            (0..n).map(|i| Some(Datum::num(i as f64))),
            100,
        );
        let bins = l.bins.as_ref().unwrap();
        assert!(bins.len() <= 100);
        assert_eq!(l.total(), n as u64);
        for w in bins.windows(2) {
            assert!(w[0].upper < w[1].lower);
        }
        let half = l.evaluate(&[Condition::Cmp(CmpOp::Lt, Datum::num(500.0))], &[]);
        assert!((half - 0.5).abs() < 0.02, "{half}");
    }

    #[test]
    fn insert_delete_roundtrip() {
        let mut l = ages();
        let before = l.clone();
        let v = Some(Datum::num(33.0));
        l.adjust(&v, true);
        assert_eq!(l.total(), 4);
        l.adjust(&v, false);
        assert_eq!(l, before);
    }
}
