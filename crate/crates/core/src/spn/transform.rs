use serde::{Deserialize, Serialize};

use crate::rdc::copula_ranks;
use crate::value::{Datum, Value};

/// Frozen copula-rank map of one column: sorted distinct training values
/// and their normalized average ranks. NULL maps to 0.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankMap {
    pub knots: Vec<Datum>,
    pub ranks: Vec<f64>,
}

impl RankMap {
    pub fn fit(values: &[Value]) -> Self {
        let ranks = copula_ranks(values);
        let mut pairs: Vec<(Datum, f64)> = values
            .iter()
            .zip(ranks)
            .filter_map(|(v, r)| v.clone().map(|d| (d, r)))
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let (knots, ranks) = pairs.into_iter().unzip();
        RankMap { knots, ranks }
    }

    pub fn map(&self, v: Option<&Datum>) -> f64 {
        let Some(d) = v else { return 0.0 };
        if self.knots.is_empty() {
            return 0.0;
        }
        match self.knots.binary_search(d) {
            Ok(i) => self.ranks[i],
            Err(0) => self.ranks[0],
            Err(i) if i >= self.knots.len() => self.ranks[self.knots.len() - 1],
            Err(i) => {
                // interpolate between numeric neighbours
                match (self.knots[i - 1].as_f64(), self.knots[i].as_f64(), d.as_f64()) {
                    (Some(a), Some(b), Some(x)) if b > a => {
                        let t = (x - a) / (b - a);
                        self.ranks[i - 1] + t * (self.ranks[i] - self.ranks[i - 1])
                    }
                    _ => self.ranks[i - 1],
                }
            }
        }
    }
}

/// Rank maps for every scope column; the clustering feature space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub columns: Vec<RankMap>,
}

impl FeatureTransform {
    pub fn feature(&self, column: usize, v: Option<&Datum>) -> f64 {
        self.columns[column].map(v)
    }
}
