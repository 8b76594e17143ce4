//! Variance propagation and normal confidence intervals for products of
//! independent estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::spn::{Predicate, Rspn, TargetExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    Probability,
    ConditionalExpectation,
    Constant,
    /// Product of other factors.
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainFactor {
    pub mean: f64,
    pub variance: f64,
    pub kind: FactorKind,
}

impl UncertainFactor {
    pub fn constant(mean: f64) -> Self {
        UncertainFactor {
            mean,
            variance: 0.0,
            kind: FactorKind::Constant,
        }
    }

    pub fn probability(p: f64, n_samples: f64) -> Self {
        UncertainFactor {
            mean: p,
            variance: variance_of_probability(p, n_samples),
            kind: FactorKind::Probability,
        }
    }
}

/// Variance of a proportion estimated from `n_samples` draws.
pub fn variance_of_probability(p: f64, n_samples: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    p * (1.0 - p) / n_samples.max(1.0)
}

/// Variance of the estimated conditional mean `E[target | pred]`: the
/// conditional variance over the effective sample `n · P(pred)`.
pub fn variance_of_cond_expectation(rspn: &Rspn, target: &TargetExpr, pred: &Predicate) -> Result<f64> {
    let support = Rspn::with_target_support(target, pred);
    let p = rspn.probability(&support)?;
    if p <= 0.0 {
        return Err(Error::EmptyCondition);
    }
    let m1 = rspn.expectation(target, pred)? / p;
    let m2 = rspn.second_moment(target, pred)? / p;
    let v = (m2 - m1 * m1).max(0.0);
    Ok(v / (rspn.n_samples.max(1) as f64 * p))
}

/// `V(XY) = V(X)V(Y) + V(X)E(Y)^2 + V(Y)E(X)^2` for independent factors.
pub fn product(a: &UncertainFactor, b: &UncertainFactor) -> UncertainFactor {
    UncertainFactor {
        mean: a.mean * b.mean,
        variance: a.variance * b.variance + a.variance * b.mean * b.mean + b.variance * a.mean * a.mean,
        kind: FactorKind::Composite,
    }
}

/// Left fold of [`product`]; the empty product is the constant 1.
pub fn combine_product(factors: &[UncertainFactor]) -> UncertainFactor {
    let mut acc = UncertainFactor::constant(1.0);
    for (i, f) in factors.iter().enumerate() {
        acc = if i == 0 { *f } else { product(&acc, f) };
    }
    acc
}

/// First-order approximation `V(1/X) ≈ V(X) / E(X)^4`.
pub fn reciprocal(f: &UncertainFactor) -> Result<UncertainFactor> {
    if f.mean == 0.0 {
        return Err(Error::Invariant("reciprocal of a zero-mean factor".into()));
    }
    Ok(UncertainFactor {
        mean: 1.0 / f.mean,
        variance: f.variance / f.mean.powi(4),
        kind: f.kind,
    })
}

/// Two-sided standard normal quantile for `level`.
pub fn z_value(level: f64) -> f64 {
    let normal = Normal::standard();
    normal.inverse_cdf(0.5 + level / 2.0)
}

/// `mean ± z(level) · sqrt(variance)`.
pub fn confidence_interval(mean: f64, variance: f64, level: f64) -> (f64, f64) {
    let half = z_value(level) * variance.max(0.0).sqrt();
    (mean - half, mean + half)
}
