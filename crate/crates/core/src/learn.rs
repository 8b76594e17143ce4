//! Structure learning: dependence-based column splits, k-means row splits
//! and exact-count leaves.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rdc::{learnable_columns, mix_seed, pairwise_rdc_columns, RdcMatrix, RdcParams};
use crate::schema::{ColumnData, SampleTable};
use crate::spn::{FeatureTransform, Leaf, Node, NodeKind, RankMap, Rspn, SplitOrigin};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    pub rdc_threshold: f64,
    pub min_instance_fraction: f64,
    pub distinct_value_limit: usize,
    pub cluster_count: usize,
    pub seed: u64,
    pub rdc: RdcParams,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            rdc_threshold: 0.3,
            min_instance_fraction: 0.01,
            distinct_value_limit: 100_000,
            cluster_count: 2,
            seed: 42,
            rdc: RdcParams::default(),
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rdc_threshold > 0.0 && self.rdc_threshold < 1.0) {
            return Err(Error::Config("rdc threshold must lie in (0, 1)".into()));
        }
        if !(self.min_instance_fraction > 0.0 && self.min_instance_fraction < 1.0) {
            return Err(Error::Config("min instance fraction must lie in (0, 1)".into()));
        }
        if self.cluster_count < 2 {
            return Err(Error::Config("cluster count must be at least 2".into()));
        }
        if self.rdc.num_features == 0 || self.rdc.sample_cap < 2 {
            return Err(Error::Config("invalid rdc parameters".into()));
        }
        Ok(())
    }
}

/// Result of [`cluster_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, p);
        if d < bd {
            bd = d;
            best = i;
        }
    }
    best
}

/// k-means with k-means++ seeding. Points are rows of equal dimension.
/// Always returns nonempty clusters; fewer than `k` when the data does not
/// support them.
pub fn cluster_rows(points: &[Vec<f64>], k: usize, seed: u64) -> Clustering {
    let n = points.len();
    let single = || Clustering {
        assignments: vec![0; n],
        centroids: vec![mean_of(points, (0..n).collect::<Vec<_>>().as_slice())],
    };
    if n == 0 {
        return Clustering {
            assignments: vec![],
            centroids: vec![],
        };
    }
    // fewer distinct points than clusters: nothing to split
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k.max(2) {
        return single();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if t < d {
                    chosen = i;
                    break;
                }
                t -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids.last().expect("nonempty")));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut reseeded = false;
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let a = nearest(&centroids, p);
            if a != assignments[i] {
                assignments[i] = a;
                changed = true;
            }
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); centroids.len()];
        for (i, &a) in assignments.iter().enumerate() {
            members[a].push(i);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            if !reseeded {
                // re-seed with the point farthest from its centroid
                reseeded = true;
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centroids[assignments[a]])
                            .total_cmp(&dist2(&points[b], &centroids[assignments[b]]))
                    })
                    .expect("nonempty");
                centroids[empty] = points[far].clone();
                continue;
            }
            // merge: drop empty clusters
            let keep: Vec<usize> = (0..centroids.len()).filter(|&c| !members[c].is_empty()).collect();
            let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(i, &c)| (c, i)).collect();
            centroids = keep.iter().map(|&c| centroids[c].clone()).collect();
            for a in &mut assignments {
                *a = remap[a];
            }
            if centroids.len() < 2 {
                return single();
            }
            continue;
        }
        for (c, m) in members.iter().enumerate() {
            centroids[c] = mean_of(points, m);
        }
        if !changed {
            break;
        }
    }
    Clustering {
        assignments,
        centroids,
    }
}

fn mean_of(points: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let dim = points.first().map_or(0, |p| p.len());
    let mut m = vec![0.0; dim];
    for &i in idx {
        for (a, b) in m.iter_mut().zip(&points[i]) {
            *a += b;
        }
    }
    let n = idx.len().max(1) as f64;
    m.iter_mut().for_each(|x| *x /= n);
    m
}

/// Learning-time tree, flattened into the arena afterwards.
enum Tree {
    Leaf(Leaf),
    Product(Vec<Tree>, SplitOrigin),
    Sum(Vec<Tree>, Vec<u64>, Vec<Vec<f64>>),
}

struct Ctx<'a> {
    data: &'a SampleTable,
    /// Data column index per scope column.
    source: Vec<usize>,
    names: Vec<String>,
    transform: FeatureTransform,
    params: LearnParams,
    min_rows: usize,
    exec: Execution,
}

impl Ctx<'_> {
    fn column(&self, c: usize) -> &ColumnData {
        &self.data.data[self.source[c]]
    }

    fn leaf(&self, c: usize, rows: &[usize]) -> Tree {
        let col = self.column(c);
        Tree::Leaf(Leaf::fit(
            c,
            self.data.columns[self.source[c]].kind,
            rows.iter().map(|&r| col.get(r)),
            self.params.distinct_value_limit,
        ))
    }

    fn independent(&self, cols: &[usize], rows: &[usize], origin: SplitOrigin) -> Tree {
        Tree::Product(cols.iter().map(|&c| self.leaf(c, rows)).collect(), origin)
    }

    fn rdc(&self, cols: &[usize], rows: &[usize]) -> RdcMatrix {
        let names: Vec<String> = cols.iter().map(|&c| self.names[c].clone()).collect();
        let data: Vec<&ColumnData> = cols.iter().map(|&c| self.column(c)).collect();
        pairwise_rdc_columns(&names, &data, rows, &self.params.rdc, self.exec)
    }

    fn learn(&self, rows: Vec<usize>, cols: Vec<usize>, seed: u64, root_rdc: Option<&RdcMatrix>) -> Tree {
        if cols.len() == 1 {
            return self.leaf(cols[0], &rows);
        }
        if rows.len() < 2 {
            return self.independent(&cols, &rows, SplitOrigin::Fallback);
        }
        let computed;
        let m = match root_rdc {
            Some(m) => m,
            None => {
                computed = self.rdc(&cols, &rows);
                &computed
            }
        };
        let groups = components(m, self.params.rdc_threshold);
        if groups.len() > 1 {
            let specs: Vec<(usize, Vec<usize>)> = groups
                .into_iter()
                .enumerate()
                .map(|(i, g)| (i, g.into_iter().map(|j| cols[j]).collect()))
                .collect();
            let children = par::map(self.exec, &specs, |(i, g)| {
                self.learn(rows.clone(), g.clone(), mix_seed(seed, *i as u64 + 1), None)
            });
            return Tree::Product(children, SplitOrigin::Rdc);
        }
        if rows.len() < self.min_rows {
            return self.independent(&cols, &rows, SplitOrigin::Fallback);
        }
        let points: Vec<Vec<f64>> = rows
            .iter()
            .map(|&r| {
                cols.iter()
                    .map(|&c| self.transform.feature(c, self.column(c).get(r).as_ref()))
                    .collect()
            })
            .collect();
        let cl = cluster_rows(&points, self.params.cluster_count, seed);
        if cl.centroids.len() < 2 {
            return self.independent(&cols, &rows, SplitOrigin::Fallback);
        }
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); cl.centroids.len()];
        for (i, &a) in cl.assignments.iter().enumerate() {
            parts[a].push(rows[i]);
        }
        let sizes: Vec<u64> = parts.iter().map(|p| p.len() as u64).collect();
        let specs: Vec<(usize, Vec<usize>)> = parts.into_iter().enumerate().collect();
        let children = par::map(self.exec, &specs, |(i, part)| {
            self.learn(part.clone(), cols.clone(), mix_seed(seed, 1000 + *i as u64), None)
        });
        Tree::Sum(children, sizes, cl.centroids)
    }
}

/// Connected components of the graph joining columns with coefficient at
/// least `threshold`, as sorted index lists ordered by smallest member.
#[allow(clippy::needless_range_loop)]
fn components(m: &RdcMatrix, threshold: f64) -> Vec<Vec<usize>> {
    let n = m.len();
    let mut comp = vec![usize::MAX; n];
    let mut out = Vec::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut i = 0;
        while i < members.len() {
            let a = members[i];
            for b in 0..n {
                if comp[b] == usize::MAX && m.at(a, b) >= threshold {
                    comp[b] = id;
                    members.push(b);
                }
            }
            i += 1;
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

fn flatten(tree: Tree, nodes: &mut Vec<Node>) -> usize {
    let (scope, kind) = match tree {
        Tree::Leaf(l) => (vec![l.column], NodeKind::Leaf(l)),
        Tree::Product(children, origin) => {
            let ids: Vec<usize> = children.into_iter().map(|c| flatten(c, nodes)).collect();
            let mut scope: Vec<usize> = ids.iter().flat_map(|&i| nodes[i].scope.clone()).collect();
            scope.sort_unstable();
            (
                scope,
                NodeKind::Product {
                    children: ids,
                    origin,
                },
            )
        }
        Tree::Sum(children, cluster_sizes, centroids) => {
            let ids: Vec<usize> = children.into_iter().map(|c| flatten(c, nodes)).collect();
            let scope = nodes[ids[0]].scope.clone();
            (
                scope,
                NodeKind::Sum {
                    children: ids,
                    cluster_sizes,
                    centroids,
                },
            )
        }
    };
    nodes.push(Node { scope, kind });
    nodes.len() - 1
}

/// Frozen rank transform of every learnable column over all rows.
fn fit_transform(data: &SampleTable, source: &[usize]) -> FeatureTransform {
    FeatureTransform {
        columns: source
            .iter()
            .map(|&i| {
                let vals: Vec<Value> = (0..data.num_rows()).map(|r| data.data[i].get(r)).collect();
                RankMap::fit(&vals)
            })
            .collect(),
    }
}

fn model_shell(data: &SampleTable, id: &str, source: &[usize], rdc: RdcMatrix, transform: FeatureTransform) -> Rspn {
    Rspn {
        id: id.to_string(),
        table_set: data.origin_tables.clone(),
        columns: source.iter().map(|&i| data.columns[i].clone()).collect(),
        nodes: Vec::new(),
        root: 0,
        n_samples: data.num_rows() as u64,
        base_population: data.full_population_size,
        sampled_updates: 0,
        batch_updates: 0,
        sample_rate: data.sample_rate,
        fds: data.fds.clone(),
        rdc,
        transform,
    }
}

/// Learn a model over every non-key column of `data`.
pub fn learn_rspn(data: &SampleTable, id: &str, params: &LearnParams, exec: Execution) -> Result<Rspn> {
    params.validate()?;
    if data.num_rows() == 0 {
        return Err(Error::Empty(format!("no rows to learn {id} from")));
    }
    let source = learnable_columns(data);
    if source.is_empty() {
        return Err(Error::Empty(format!("no learnable columns for {id}")));
    }
    let transform = fit_transform(data, &source);
    let ctx = Ctx {
        data,
        names: source.iter().map(|&i| data.columns[i].name.clone()).collect(),
        source: source.clone(),
        transform,
        params: *params,
        min_rows: ((params.min_instance_fraction * data.num_rows() as f64).ceil() as usize).max(1),
        exec,
    };
    let cols: Vec<usize> = (0..source.len()).collect();
    let rows: Vec<usize> = (0..data.num_rows()).collect();
    let snapshot = ctx.rdc(&cols, &rows);
    let tree = ctx.learn(rows, cols, params.seed, Some(&snapshot));
    let mut model = model_shell(data, id, &source, snapshot, ctx.transform);
    let root = flatten(tree, &mut model.nodes);
    model.root = root;
    model.validate()?;
    Ok(model)
}

/// Exact model: a mixture over the distinct rows of `data`, each a product
/// of point leaves. Reproduces every scan aggregate of the table.
pub fn exact_rspn(data: &SampleTable, id: &str) -> Result<Rspn> {
    if data.num_rows() == 0 {
        return Err(Error::Empty(format!("no rows to build {id} from")));
    }
    let source = learnable_columns(data);
    if source.is_empty() {
        return Err(Error::Empty(format!("no learnable columns for {id}")));
    }
    let transform = fit_transform(data, &source);
    let m = source.len();
    let mut groups: BTreeMap<Vec<Value>, u64> = BTreeMap::new();
    for r in 0..data.num_rows() {
        let row: Vec<Value> = source.iter().map(|&i| data.data[i].get(r)).collect();
        *groups.entry(row).or_default() += 1;
    }
    let names: Vec<String> = source.iter().map(|&i| data.columns[i].name.clone()).collect();
    let leaf = |c: usize, v: &Value, n: u64| {
        Tree::Leaf(Leaf::fit(
            c,
            data.columns[source[c]].kind,
            std::iter::repeat_n(v.clone(), n as usize),
            usize::MAX,
        ))
    };
    let row_tree = |row: &Vec<Value>, n: u64| {
        if m == 1 {
            leaf(0, &row[0], n)
        } else {
            Tree::Product(
                (0..m).map(|c| leaf(c, &row[c], n)).collect(),
                SplitOrigin::Fallback,
            )
        }
    };
    let tree = if groups.len() == 1 {
        let (row, n) = groups.iter().next().expect("one group");
        row_tree(row, *n)
    } else if m == 1 {
        let all: Vec<Value> = (0..data.num_rows()).map(|r| data.data[source[0]].get(r)).collect();
        Tree::Leaf(Leaf::fit(0, data.columns[source[0]].kind, all, usize::MAX))
    } else {
        let mut children = Vec::new();
        let mut sizes = Vec::new();
        let mut centroids = Vec::new();
        for (row, &n) in &groups {
            centroids.push(
                (0..m)
                    .map(|c| transform.feature(c, row[c].as_ref()))
                    .collect(),
            );
            children.push(row_tree(row, n));
            sizes.push(n);
        }
        Tree::Sum(children, sizes, centroids)
    };
    let mut model = model_shell(data, id, &source, RdcMatrix::identity(names), transform);
    model.root = flatten(tree, &mut model.nodes);
    model.validate()?;
    Ok(model)
}
