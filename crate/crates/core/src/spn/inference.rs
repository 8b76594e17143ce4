//! Bottom-up evaluation of probabilities, expectations and MPE.

use std::collections::{BTreeMap, BTreeSet};

use super::expr::{CmpOp, Condition, Conjunct, Predicate, TargetExpr, Term};
use super::{weights, NodeKind, Rspn};
use crate::error::{Error, Result};
use crate::value::Datum;

/// Largest joint candidate space enumerated exactly by `mpe`.
const MPE_EXACT_LIMIT: usize = 4096;

/// Conditions and target terms attached to one scope column.
#[derive(Debug, Clone, Default)]
pub(crate) struct ColumnQuery {
    pub conditions: Vec<Condition>,
    pub terms: Vec<Term>,
}

impl ColumnQuery {
    fn is_trivial(&self) -> bool {
        self.conditions.is_empty() && self.terms.is_empty()
    }
}

impl Rspn {
    /// Rewrite conjuncts on FD-dependent columns that the model omitted into
    /// IN-conjuncts on their determinants.
    pub fn translate_fd_predicate(&self, pred: &Predicate) -> Predicate {
        let mut out = Predicate::default();
        for c in &pred.conjuncts {
            if self.has_column(&c.column) {
                out.conjuncts.push(c.clone());
                continue;
            }
            let fd = self
                .fds
                .iter()
                .find(|fd| fd.dependent_column() == c.column && self.has_column(&fd.determinant_column()));
            match fd {
                Some(fd) => {
                    let set: BTreeSet<Datum> = fd
                        .dictionary
                        .iter()
                        .filter(|(_, b)| c.condition.matches(b))
                        .map(|(a, _)| a.clone())
                        .collect();
                    out.conjuncts
                        .push(Conjunct::new(fd.determinant_column(), Condition::In(set)));
                }
                None => out.conjuncts.push(c.clone()),
            }
        }
        out
    }

    pub(crate) fn compile(&self, target: &TargetExpr, pred: &Predicate) -> Result<Vec<ColumnQuery>> {
        let pred = self.translate_fd_predicate(pred);
        let mut q = vec![ColumnQuery::default(); self.columns.len()];
        let idx = |name: &str| {
            self.column_index(name).ok_or_else(|| Error::NotInScope {
                column: name.to_string(),
                model: self.id.clone(),
            })
        };
        for c in &pred.conjuncts {
            q[idx(&c.column)?].conditions.push(c.condition.clone());
        }
        for t in &target.terms {
            q[idx(&t.column)?].terms.push(t.clone());
        }
        Ok(q)
    }

    pub(crate) fn evaluate(&self, q: &[ColumnQuery]) -> f64 {
        let active: Vec<bool> = q.iter().map(|c| !c.is_trivial()).collect();
        if !active.iter().any(|&a| a) {
            return 1.0;
        }
        self.eval_node(self.root, q, &active)
    }

    fn eval_node(&self, n: usize, q: &[ColumnQuery], active: &[bool]) -> f64 {
        let node = &self.nodes[n];
        if !node.scope.iter().any(|&c| active[c]) {
            return 1.0;
        }
        match &node.kind {
            NodeKind::Leaf(l) => {
                let cq = &q[l.column];
                l.evaluate(&cq.conditions, &cq.terms)
            }
            NodeKind::Product { children, .. } => {
                let mut p = 1.0;
                for &c in children {
                    p *= self.eval_node(c, q, active);
                    if p == 0.0 {
                        break;
                    }
                }
                p
            }
            NodeKind::Sum {
                children,
                cluster_sizes,
                ..
            } => weights(cluster_sizes)
                .iter()
                .zip(children)
                .filter(|(w, _)| **w > 0.0)
                .map(|(w, &c)| w * self.eval_node(c, q, active))
                .sum(),
        }
    }

    /// Probability of a conjunctive predicate.
    pub fn probability(&self, pred: &Predicate) -> Result<f64> {
        Ok(self.evaluate(&self.compile(&TargetExpr::one(), pred)?))
    }

    /// Unnormalized `E[target · 1_pred]`.
    pub fn expectation(&self, target: &TargetExpr, pred: &Predicate) -> Result<f64> {
        Ok(self.evaluate(&self.compile(target, pred)?))
    }

    /// `E[target^2 · 1_pred]`.
    pub fn second_moment(&self, target: &TargetExpr, pred: &Predicate) -> Result<f64> {
        self.expectation(&target.pow(2), pred)
    }

    /// Predicate extended by non-NULL conditions on every target column.
    pub fn with_target_support(target: &TargetExpr, pred: &Predicate) -> Predicate {
        let mut out = pred.clone();
        let cols: BTreeSet<&str> = target.terms.iter().map(|t| t.column.as_str()).collect();
        for c in cols {
            out.conjuncts.push(Conjunct::new(c, Condition::NotNull));
        }
        out
    }

    /// `E[target | pred]`, excluding rows where a target column is NULL.
    pub fn conditional_expectation(&self, target: &TargetExpr, pred: &Predicate) -> Result<f64> {
        let den = self.probability(&Self::with_target_support(target, pred))?;
        if den <= 0.0 {
            return Err(Error::EmptyCondition);
        }
        Ok(self.expectation(target, pred)? / den)
    }

    /// Candidate non-NULL values of a column across its leaves.
    pub fn column_support(&self, column: usize, conditions: &[Condition]) -> Vec<Datum> {
        let mut out = BTreeSet::new();
        for l in self.leaves_of(column) {
            out.extend(l.support(conditions));
        }
        out.into_iter().collect()
    }

    /// Value of `target` in the most probable complete assignment
    /// consistent with the evidence. Small candidate spaces are searched
    /// exactly; otherwise max-product with backtracking is used.
    pub fn mpe(&self, evidence: &Predicate, target: &str) -> Result<Datum> {
        let t = self.column_index(target).ok_or_else(|| Error::NotInScope {
            column: target.to_string(),
            model: self.id.clone(),
        })?;
        let q = self.compile(&TargetExpr::one(), evidence)?;
        if self.evaluate(&q) <= 0.0 {
            return Err(Error::EmptyCondition);
        }
        if let Some(v) = self.mpe_exact(&q, t) {
            return Ok(v);
        }
        let (score, value) = self.max_product(self.root, &q, t);
        match value {
            Some(v) if score > 0.0 => Ok(v),
            _ => Err(Error::EmptyCondition),
        }
    }

    /// The maximizing complete assignment (values in scope order) and its
    /// probability, by enumeration; `None` when the candidate space is too
    /// large or a leaf is binned.
    pub fn mpe_assignment(&self, evidence: &Predicate) -> Result<Option<(Vec<Datum>, f64)>> {
        let q = self.compile(&TargetExpr::one(), evidence)?;
        Ok(self.enumerate_best(&q))
    }

    fn mpe_exact(&self, q: &[ColumnQuery], target: usize) -> Option<Datum> {
        self.enumerate_best(q).map(|(a, _)| a[target].clone())
    }

    fn enumerate_best(&self, q: &[ColumnQuery]) -> Option<(Vec<Datum>, f64)> {
        if self.nodes.iter().any(|n| matches!(&n.kind, NodeKind::Leaf(l) if l.is_binned())) {
            return None;
        }
        let candidates: Vec<Vec<Datum>> = (0..self.columns.len())
            .map(|c| self.column_support(c, &q[c].conditions))
            .collect();
        let mut space: usize = 1;
        for c in &candidates {
            if c.is_empty() {
                return None;
            }
            space = space.checked_mul(c.len())?;
            if space > MPE_EXACT_LIMIT {
                return None;
            }
        }
        let m = candidates.len();
        let mut best: Option<(Vec<Datum>, f64)> = None;
        let mut digits = vec![0usize; m];
        loop {
            let assignment: Vec<Datum> = (0..m).map(|c| candidates[c][digits[c]].clone()).collect();
            let point: Vec<ColumnQuery> = assignment
                .iter()
                .map(|d| ColumnQuery {
                    conditions: vec![Condition::Cmp(CmpOp::Eq, d.clone())],
                    terms: vec![],
                })
                .collect();
            let p = self.evaluate(&point);
            // enumeration is in increasing lexicographic order, so strict
            // improvement keeps the smallest tied assignment
            if best.as_ref().is_none_or(|(_, bp)| p > *bp) {
                best = Some((assignment, p));
            }
            let mut i = m;
            loop {
                if i == 0 {
                    return best.filter(|(_, p)| *p > 0.0);
                }
                i -= 1;
                digits[i] += 1;
                if digits[i] < candidates[i].len() {
                    break;
                }
                digits[i] = 0;
            }
        }
    }

    fn max_product(&self, n: usize, q: &[ColumnQuery], target: usize) -> (f64, Option<Datum>) {
        match &self.nodes[n].kind {
            NodeKind::Leaf(l) => match l.mode(&q[l.column].conditions) {
                Some((v, f)) => (f, (l.column == target).then_some(v)),
                None => (0.0, None),
            },
            NodeKind::Product { children, .. } => {
                let mut score = 1.0;
                let mut value = None;
                for &c in children {
                    let (s, v) = self.max_product(c, q, target);
                    score *= s;
                    if v.is_some() {
                        value = v;
                    }
                }
                (score, value)
            }
            NodeKind::Sum {
                children,
                cluster_sizes,
                ..
            } => {
                let mut best = (f64::NEG_INFINITY, None);
                for (w, &c) in weights(cluster_sizes).iter().zip(children) {
                    let (s, v) = self.max_product(c, q, target);
                    let s = w * s;
                    let better = s > best.0
                        || (s == best.0 && matches!((&v, &best.1), (Some(a), Some(b)) if a < b));
                    if better {
                        best = (s, v);
                    }
                }
                best
            }
        }
    }

    /// Leaf value frequencies of a column mixed over the model (the
    /// model-implied marginal), for group enumeration.
    pub fn marginal_values(&self, column: usize) -> BTreeMap<Datum, f64> {
        let mut out = BTreeMap::new();
        for v in self.column_support(column, &[]) {
            let mut q = vec![ColumnQuery::default(); self.columns.len()];
            q[column].conditions.push(Condition::Cmp(CmpOp::Eq, v.clone()));
            out.insert(v, self.evaluate(&q));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Leaf, Node, NodeKind, Rspn, SplitOrigin};
    use super::*;
    use crate::rdc::RdcMatrix;
    use crate::schema::ColumnMeta;
    use crate::spn::FeatureTransform;
    use crate::value::ColumnKind;

    fn leaf(col: usize, kind: ColumnKind, vals: &[(Datum, usize)]) -> Node {
        let values = vals
            .iter()
            .flat_map(|(d, n)| std::iter::repeat_n(Some(d.clone()), *n));
        Node {
            scope: vec![col],
            kind: NodeKind::Leaf(Leaf::fit(col, kind, values, 100_000)),
        }
    }

    /// Two clusters over (region, age) with weights .3/.7.
    pub(crate) fn fig2() -> Rspn {
        let eu = Datum::str("EUROPE");
        let asia = Datum::str("ASIA");
        let young = Datum::num(25.0);
        let old = Datum::num(50.0);
        let nodes = vec![
            Node {
                scope: vec![0, 1],
                kind: NodeKind::Sum {
                    children: vec![1, 4],
                    cluster_sizes: vec![300, 700],
                    centroids: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
                },
            },
            Node {
                scope: vec![0, 1],
                kind: NodeKind::Product {
                    children: vec![2, 3],
                    origin: SplitOrigin::Rdc,
                },
            },
            leaf(0, ColumnKind::Categorical, &[(eu.clone(), 240), (asia.clone(), 60)]),
            leaf(1, ColumnKind::Continuous, &[(young.clone(), 45), (old.clone(), 255)]),
            Node {
                scope: vec![0, 1],
                kind: NodeKind::Product {
                    children: vec![5, 6],
                    origin: SplitOrigin::Rdc,
                },
            },
            leaf(0, ColumnKind::Categorical, &[(eu, 70), (asia, 630)]),
            leaf(1, ColumnKind::Continuous, &[(young, 140), (old, 560)]),
        ];
        Rspn {
            id: "customer".into(),
            table_set: vec!["customer".into()],
            columns: vec![
                ColumnMeta::attribute("customer", "customer.c_region", ColumnKind::Categorical, false),
                ColumnMeta::attribute("customer", "customer.c_age", ColumnKind::Continuous, false),
            ],
            nodes,
            root: 0,
            n_samples: 1000,
            base_population: 1000,
            sampled_updates: 0,
            batch_updates: 0,
            sample_rate: 1.0,
            fds: vec![],
            rdc: RdcMatrix::identity(vec!["customer.c_region".into(), "customer.c_age".into()]),
            transform: FeatureTransform::default(),
        }
    }

    #[test]
    fn fig2_probability() {
        let m = fig2();
        m.validate().unwrap();
        let p = Predicate::default()
            .and(Conjunct::cmp("customer.c_region", CmpOp::Eq, Datum::str("EUROPE")))
            .and(Conjunct::cmp("customer.c_age", CmpOp::Lt, Datum::num(30.0)));
        let v = m.probability(&p).unwrap();
        assert!((v - 0.05).abs() < 1e-12, "{v}");
        assert_eq!(m.probability(&Predicate::default()).unwrap(), 1.0);
    }

    #[test]
    fn fig2_mpe() {
        let m = fig2();
        let v = m.mpe(&Predicate::default(), "customer.c_region").unwrap();
        assert_eq!(v, Datum::str("ASIA"));
        // max-product agrees on this model
        let q = m.compile(&TargetExpr::one(), &Predicate::default()).unwrap();
        assert_eq!(m.max_product(m.root, &q, 0).1, Some(Datum::str("ASIA")));
        let ev = Predicate::default().and(Conjunct::cmp("customer.c_age", CmpOp::Eq, Datum::num(25.0)));
        assert!(m.mpe(&ev, "customer.c_region").is_ok());
    }

    #[test]
    fn empty_condition_reported() {
        let m = fig2();
        let p = Predicate::default().and(Conjunct::cmp("customer.c_age", CmpOp::Gt, Datum::num(99.0)));
        assert!(matches!(
            m.conditional_expectation(&TargetExpr::column("customer.c_age"), &p),
            Err(Error::EmptyCondition)
        ));
        assert!(matches!(
            m.probability(&Predicate::default().and(Conjunct::cmp("x", CmpOp::Eq, Datum::num(1.0)))),
            Err(Error::NotInScope { .. })
        ));
    }
}
