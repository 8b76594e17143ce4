//! Relational sum-product networks: structure and inference.

mod expr;
mod inference;
mod leaf;
mod transform;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdc::RdcMatrix;
use crate::schema::{ColumnMeta, ColumnRole, FunctionalDependency};

pub use expr::{CmpOp, Condition, Conjunct, Predicate, TargetExpr, Term, Transform};
pub use leaf::{Bin, Leaf};
pub use transform::{FeatureTransform, RankMap};

/// Why a product node separates its children.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitOrigin {
    /// Column groups found independent by the dependence test.
    Rdc,
    /// Independence assumed because the row slice became too small.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Sum {
        children: Vec<usize>,
        cluster_sizes: Vec<u64>,
        /// Per child, one coordinate per scope column of this node.
        centroids: Vec<Vec<f64>>,
    },
    Product {
        children: Vec<usize>,
        origin: SplitOrigin,
    },
    Leaf(Leaf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Sorted scope column indices.
    pub scope: Vec<usize>,
    pub kind: NodeKind,
}

impl Node {
    pub fn children(&self) -> &[usize] {
        match &self.kind {
            NodeKind::Sum { children, .. } | NodeKind::Product { children, .. } => children,
            NodeKind::Leaf(_) => &[],
        }
    }
}

/// Sum-node weights derived from cluster sizes.
pub fn weights(cluster_sizes: &[u64]) -> Vec<f64> {
    let total: u64 = cluster_sizes.iter().sum();
    if total == 0 {
        let n = cluster_sizes.len().max(1) as f64;
        return vec![1.0 / n; cluster_sizes.len()];
    }
    cluster_sizes
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rspn {
    pub id: String,
    pub table_set: Vec<String>,
    pub columns: Vec<ColumnMeta>,
    pub nodes: Vec<Node>,
    pub root: usize,
    /// Rows currently represented by the model.
    pub n_samples: u64,
    /// Exact population size at learning time.
    pub base_population: u64,
    /// Net inserts minus deletes applied one tuple at a time.
    pub sampled_updates: i64,
    /// Net batch sizes applied with sampling.
    pub batch_updates: i64,
    pub sample_rate: f64,
    pub fds: Vec<FunctionalDependency>,
    pub rdc: RdcMatrix,
    pub transform: FeatureTransform,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub sum: usize,
    pub product: usize,
    pub leaf: usize,
    pub depth: usize,
}

impl Rspn {
    /// Population the model stands for: `|T|` or `|J|`, updated.
    pub fn population(&self) -> f64 {
        let p = self.base_population as f64
            + self.sampled_updates as f64 / self.sample_rate
            + self.batch_updates as f64;
        p.max(0.0)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    pub fn covers_table(&self, table: &str) -> bool {
        self.table_set.iter().any(|t| t == table)
    }

    pub fn factor_columns(&self) -> impl Iterator<Item = &ColumnMeta> {
        self.columns
            .iter()
            .filter(|c| matches!(c.role, ColumnRole::TupleFactor { .. }))
    }

    pub fn stats(&self) -> NodeStats {
        let mut s = NodeStats::default();
        let mut stack = vec![(self.root, 1usize)];
        while let Some((n, d)) = stack.pop() {
            s.depth = s.depth.max(d);
            match &self.nodes[n].kind {
                NodeKind::Sum { children, .. } => {
                    s.sum += 1;
                    stack.extend(children.iter().map(|&c| (c, d + 1)));
                }
                NodeKind::Product { children, .. } => {
                    s.product += 1;
                    stack.extend(children.iter().map(|&c| (c, d + 1)));
                }
                NodeKind::Leaf(_) => s.leaf += 1,
            }
        }
        s
    }

    /// Leaves of one scope column.
    pub fn leaves_of(&self, column: usize) -> impl Iterator<Item = &Leaf> {
        self.nodes.iter().filter_map(move |n| match &n.kind {
            NodeKind::Leaf(l) if l.column == column => Some(l),
            _ => None,
        })
    }

    /// Structural checks: completeness at sum nodes, decomposability at
    /// product nodes, leaf scopes, and scope coverage at the root.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invariant(format!("{}: {m}", self.id)));
        let root_scope: Vec<usize> = (0..self.columns.len()).collect();
        if self.nodes[self.root].scope != root_scope {
            return bad("root scope differs from model columns".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.kind {
                NodeKind::Leaf(l) => {
                    if n.scope != [l.column] {
                        return bad(format!("leaf {i} scope mismatch"));
                    }
                }
                NodeKind::Sum {
                    children,
                    cluster_sizes,
                    centroids,
                } => {
                    if children.len() < 2
                        || cluster_sizes.len() != children.len()
                        || centroids.len() != children.len()
                    {
                        return bad(format!("sum node {i} malformed"));
                    }
                    for &c in children {
                        if self.nodes[c].scope != n.scope {
                            return bad(format!("sum node {i} is not complete"));
                        }
                    }
                    let w: f64 = weights(cluster_sizes).iter().sum();
                    if (w - 1.0).abs() > 1e-9 {
                        return bad(format!("sum node {i} weights sum to {w}"));
                    }
                }
                NodeKind::Product { children, .. } => {
                    if children.len() < 2 {
                        return bad(format!("product node {i} has fewer than two children"));
                    }
                    let mut union = BTreeSet::new();
                    for &c in children {
                        for &s in &self.nodes[c].scope {
                            if !union.insert(s) {
                                return bad(format!("product node {i} is not decomposable"));
                            }
                        }
                    }
                    if union.into_iter().collect::<Vec<_>>() != n.scope {
                        return bad(format!("product node {i} scope mismatch"));
                    }
                }
            }
        }
        Ok(())
    }
}
