//! Randomized dependence coefficient.
//!
//! Each column is copula-transformed to normalized ranks, lifted through
//! `k` random sine features and compared with its partner by the largest
//! canonical correlation between the two feature sets.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};
use crate::schema::{ColumnData, ColumnRole, SampleTable};
use crate::value::Value;

const RIDGE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdcParams {
    pub num_features: usize,
    /// Variance of the random projection weights.
    pub projection_scale: f64,
    pub seed: u64,
    pub sample_cap: usize,
}

impl Default for RdcParams {
    fn default() -> Self {
        RdcParams {
            num_features: 20,
            projection_scale: 1.0 / 6.0,
            seed: 0x5eed,
            sample_cap: 10_000,
        }
    }
}

/// Symmetric matrix of pairwise coefficients, diagonal 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RdcMatrix {
    pub columns: Vec<String>,
    /// Row-major `columns.len()²` values.
    pub values: Vec<f64>,
}

impl RdcMatrix {
    pub fn identity(columns: Vec<String>) -> Self {
        let m = columns.len();
        let mut values = vec![0.0; m * m];
        for i in 0..m {
            values[i * m + i] = 1.0;
        }
        RdcMatrix { columns, values }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.columns.len() + j]
    }

    /// Coefficient between two named columns, if both are present.
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.at(self.index(a)?, self.index(b)?))
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let m = self.columns.len();
        self.values[i * m + j] = v;
        self.values[j * m + i] = v;
    }
}

/// FNV-1a; stable across runs and platforms.
pub(crate) fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub(crate) fn mix_seed(seed: u64, key: u64) -> u64 {
    let mut z = seed.wrapping_add(key.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Normalized average ranks in (0, 1]. NULLs form the lowest tied group;
/// numbers order before strings.
pub fn copula_ranks(values: &[Value]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = avg / n as f64;
        }
        i = j;
    }
    ranks
}

fn is_constant(ranks: &[f64]) -> bool {
    ranks.windows(2).all(|w| w[0] == w[1])
}

/// Centered and whitened random features of one rank vector, or `None`
/// for a constant column.
fn whitened_features(ranks: &[f64], params: &RdcParams, stream: u64) -> Option<DMatrix<f64>> {
    if ranks.len() < 2 || is_constant(ranks) {
        return None;
    }
    let n = ranks.len();
    let k = params.num_features.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, stream));
    let normal = Normal::new(0.0, params.projection_scale.sqrt()).expect("positive scale");
    let weights: Vec<(f64, f64)> = (0..k)
        .map(|_| (normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    let mut f = DMatrix::from_fn(n, k, |r, j| {
        let (w, b) = weights[j];
        (w * ranks[r] + b).sin()
    });
    for j in 0..k {
        let mean = f.column(j).mean();
        f.column_mut(j).add_scalar_mut(-mean);
    }
    let mut cov = f.tr_mul(&f) / n as f64;
    for j in 0..k {
        cov[(j, j)] += RIDGE;
    }
    let chol = cov.cholesky()?;
    // Z = F L^{-T}, so that Z'Z/n = I
    let l = chol.l();
    let zt = l.solve_lower_triangular(&f.transpose())?;
    Some(zt.transpose())
}

fn top_canonical_correlation(zx: &DMatrix<f64>, zy: &DMatrix<f64>) -> f64 {
    let n = zx.nrows() as f64;
    let cross = zx.tr_mul(zy) / n;
    let sv = cross.singular_values();
    let top = sv.iter().cloned().fold(0.0f64, f64::max);
    if top.is_finite() {
        top.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Coefficient between two paired columns. Deterministic given the seed
/// and exactly symmetric in its arguments.
pub fn rdc(x: &[Value], y: &[Value], params: &RdcParams) -> f64 {
    assert_eq!(x.len(), y.len(), "rdc needs paired columns");
    let rx = copula_ranks(x);
    let ry = copula_ranks(y);
    rdc_ranks(&rx, &ry, params)
}

/// As [`rdc`] on precomputed ranks.
pub fn rdc_ranks(rx: &[f64], ry: &[f64], params: &RdcParams) -> f64 {
    // argument slots are assigned by rank order so swapping is a no-op
    let (a, b) = match rx.partial_cmp(ry) {
        Some(std::cmp::Ordering::Greater) => (ry, rx),
        _ => (rx, ry),
    };
    let (Some(za), Some(zb)) = (
        whitened_features(a, params, 1),
        whitened_features(b, params, 2),
    ) else {
        return 0.0;
    };
    top_canonical_correlation(&za, &zb)
}

fn sample_rows(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5a3b1e));
    let mut rows = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    rows.sort_unstable();
    rows
}

/// Pairwise coefficients over named columns for the given rows, sampled
/// down to `sample_cap`.
pub fn pairwise_rdc_columns(
    names: &[String],
    columns: &[&ColumnData],
    rows: &[usize],
    params: &RdcParams,
    exec: Execution,
) -> RdcMatrix {
    let mut out = RdcMatrix::identity(names.to_vec());
    let m = names.len();
    if m < 2 {
        return out;
    }
    let picked: Vec<usize> = sample_rows(rows.len(), params.sample_cap.max(2), params.seed)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    let features: Vec<Option<DMatrix<f64>>> = par::map_range(exec, m, |c| {
        let vals: Vec<Value> = picked.iter().map(|&r| columns[c].get(r)).collect();
        whitened_features(&copula_ranks(&vals), params, stable_hash(&names[c]))
    });
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .collect();
    let vals = par::map(exec, &pairs, |&(i, j)| match (&features[i], &features[j]) {
        (Some(a), Some(b)) => top_canonical_correlation(a, b),
        _ => 0.0,
    });
    for (&(i, j), v) in pairs.iter().zip(vals) {
        out.set(i, j, v);
    }
    out
}

/// Columns a model learns: everything except key columns.
pub fn learnable_columns(table: &SampleTable) -> Vec<usize> {
    (0..table.columns.len())
        .filter(|&i| !matches!(table.columns[i].role, ColumnRole::Key { .. }))
        .collect()
}

/// Pairwise coefficients over all learnable columns of a table.
pub fn pairwise_rdc(table: &SampleTable, params: &RdcParams, exec: Execution) -> RdcMatrix {
    let idx = learnable_columns(table);
    let names: Vec<String> = idx.iter().map(|&i| table.columns[i].name.clone()).collect();
    let cols: Vec<&ColumnData> = idx.iter().map(|&i| &table.data[i]).collect();
    let rows: Vec<usize> = (0..table.num_rows()).collect();
    pairwise_rdc_columns(&names, &cols, &rows, params, exec)
}

/// Dependency between two tables: the largest coefficient between an
/// attribute of `t1` and an attribute of `t2` on a joined sample.
pub fn table_dependency(
    t1: &str,
    t2: &str,
    joined: &SampleTable,
    params: &RdcParams,
    exec: Execution,
) -> f64 {
    if t1 == t2 {
        return 1.0;
    }
    let attrs = |t: &str| -> Vec<usize> {
        (0..joined.columns.len())
            .filter(|&i| matches!(&joined.columns[i].role, ColumnRole::Attribute { table } if table == t))
            .collect()
    };
    let (a, b) = (attrs(t1), attrs(t2));
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let all: Vec<usize> = a.iter().chain(&b).copied().collect();
    let names: Vec<String> = all.iter().map(|&i| joined.columns[i].name.clone()).collect();
    let cols: Vec<&ColumnData> = all.iter().map(|&i| &joined.data[i]).collect();
    let rows: Vec<usize> = (0..joined.num_rows()).collect();
    let m = pairwise_rdc_columns(&names, &cols, &rows, params, exec);
    let mut best = 0.0f64;
    for i in 0..a.len() {
        for j in a.len()..all.len() {
            best = best.max(m.at(i, j));
        }
    }
    best
}
