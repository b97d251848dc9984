//! Exact learning coefficients (real log canonical thresholds).
//!
//! Everything here is integer arithmetic in quarter units: every coefficient
//! for this model family is a positive rational with denominator 1, 2 or 4.
//! The closed form is
//!
//! ```text
//! lambda = (3r + H - 2)/4    for M = 1,
//! lambda = (Mr + H - 1)/2    for M > 1,
//! ```
//!
//! and the enumeration oracle reproduces it by minimizing the local
//! coefficient over all collapse partitions: in one dimension a partition
//! with true-group sizes `H_1..H_r` and ghost totals `G` scores
//! `r - 1/2 + (sum_j H_j - r)/4 + G/2`, while for `M > 1` every partition
//! scores the same `(Mr + H - 1)/2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vandermonde::{PartitionSpec, VarietyError};

/// Enumeration budget: number of model components beyond which
/// [`rlct_enumerate`] refuses to run.
pub const ENUMERATION_MAX_H: usize = 12;

#[derive(Debug, Error)]
pub enum RlctError {
    #[error("truth cannot exceed the model: r = {r} > H = {h}")]
    TruthExceedsModel { h: usize, r: usize },
    #[error("component counts and dimension must be at least 1")]
    ZeroSize,
    #[error("enumeration budget exceeded: H = {h} > {ENUMERATION_MAX_H}")]
    BudgetExceeded { h: usize },
    #[error("learning coefficient must be positive")]
    NonPositive,
    #[error(transparent)]
    Variety(#[from] VarietyError),
}

/// Where a coefficient value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RlctSource {
    ClosedForm,
    Enumerated,
    Combinator,
}

/// A positive learning coefficient, exact over denominator 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RlctValue {
    quarters: u64,
    source: RlctSource,
}

impl RlctValue {
    pub fn from_quarters(quarters: u64, source: RlctSource) -> Result<Self, RlctError> {
        if quarters == 0 {
            return Err(RlctError::NonPositive);
        }
        Ok(Self { quarters, source })
    }

    /// Numerator of the reduced fraction.
    pub fn numerator(&self) -> u64 {
        self.quarters >> self.quarters.trailing_zeros().min(2)
    }

    /// Denominator of the reduced fraction (1, 2 or 4).
    pub fn denominator(&self) -> u64 {
        4 >> self.quarters.trailing_zeros().min(2)
    }

    pub fn quarters(&self) -> u64 {
        self.quarters
    }

    pub fn source(&self) -> RlctSource {
        self.source
    }

    pub fn to_f64(&self) -> f64 {
        self.quarters as f64 / 4.0
    }
}

impl std::fmt::Display for RlctValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let den = self.denominator();
        if den == 1 {
            write!(f, "{}", self.numerator())
        } else {
            write!(f, "{}/{}", self.numerator(), den)
        }
    }
}

/// Model-family signature: data dimension `M`, model components `H`, true
/// components `r` with `1 <= r <= H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSignature")]
pub struct ModelSignature {
    m: usize,
    h: usize,
    r: usize,
}

#[derive(Deserialize)]
struct RawSignature {
    m: usize,
    h: usize,
    r: usize,
}

impl TryFrom<RawSignature> for ModelSignature {
    type Error = RlctError;
    fn try_from(raw: RawSignature) -> Result<Self, RlctError> {
        ModelSignature::new(raw.m, raw.h, raw.r)
    }
}

impl ModelSignature {
    pub fn new(m: usize, h: usize, r: usize) -> Result<Self, RlctError> {
        if m == 0 || h == 0 || r == 0 {
            return Err(RlctError::ZeroSize);
        }
        if r > h {
            return Err(RlctError::TruthExceedsModel { h, r });
        }
        Ok(Self { m, h, r })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn model_components(&self) -> usize {
        self.h
    }

    pub fn true_components(&self) -> usize {
        self.r
    }

    /// Parameter-space dimension `d = H - 1 + H M`.
    pub fn parameter_dim(&self) -> usize {
        self.h - 1 + self.h * self.m
    }
}

/// The closed-form learning coefficient of the family.
pub fn rlct_closed_form(sig: ModelSignature) -> RlctValue {
    let quarters = if sig.m == 1 {
        (3 * sig.r + sig.h - 2) as u64
    } else {
        2 * (sig.m * sig.r + sig.h - 1) as u64
    };
    debug_assert!(quarters <= 2 * sig.parameter_dim() as u64);
    RlctValue::from_quarters(quarters, RlctSource::ClosedForm).expect("positive by construction")
}

/// The regular-model reference `d/2`; every coefficient of the family is
/// bounded by it.
pub fn regular_reference(sig: ModelSignature) -> RlctValue {
    RlctValue::from_quarters(2 * sig.parameter_dim() as u64, RlctSource::ClosedForm)
        .expect("positive by construction")
}

fn local_lambda_quarters(m: usize, true_sizes_total: usize, r: usize, ghost_total: usize) -> u64 {
    if m == 1 {
        // r - 1/2 + (sum_j H_j - r)/4 + ghost_total/2, in quarters.
        (4 * r - 2 + (true_sizes_total - r) + 2 * ghost_total) as u64
    } else {
        let h = true_sizes_total + ghost_total;
        2 * (m * r + h - 1) as u64
    }
}

/// Local learning coefficient of one collapse partition.
pub fn local_lambda(spec: &PartitionSpec, m: usize) -> Result<RlctValue, RlctError> {
    if m == 0 {
        return Err(RlctError::ZeroSize);
    }
    let quarters = local_lambda_quarters(
        m,
        spec.true_sizes().iter().sum(),
        spec.true_component_count(),
        spec.ghost_sizes().iter().sum(),
    );
    RlctValue::from_quarters(quarters, RlctSource::ClosedForm)
}

/// One enumerated partition with its local coefficient.
#[derive(Debug, Clone, Serialize)]
pub struct EnumeratedPartition {
    pub true_sizes: Vec<usize>,
    pub ghost_sizes: Vec<usize>,
    pub lambda: RlctValue,
}

/// Partitions of `total` into exactly `parts` positive nonincreasing parts.
fn partitions_exact(total: usize, parts: usize, max_part: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    let hi = max_part.min(total.saturating_sub(parts - 1));
    for first in (1..=hi).rev() {
        for mut rest in partitions_exact(total - first, parts - 1, first) {
            let mut p = vec![first];
            p.append(&mut rest);
            out.push(p);
        }
    }
    out
}

/// Partitions of `total` into any number of positive nonincreasing parts
/// (including the empty partition of 0).
fn partitions_any(total: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for parts in 0..=total {
        out.extend(partitions_exact(total, parts, total));
    }
    out
}

/// Every collapse partition of the signature with its local coefficient:
/// true-group sizes are a partition of some `S >= r` into exactly `r` parts,
/// the remaining `H - S` components fill ghost groups. Group sizes are kept
/// nonincreasing; the coefficient depends only on the sizes.
pub fn enumerate_partitions(sig: ModelSignature) -> Result<Vec<EnumeratedPartition>, RlctError> {
    if sig.h > ENUMERATION_MAX_H {
        return Err(RlctError::BudgetExceeded { h: sig.h });
    }
    let mut rows = Vec::new();
    for s1 in (sig.r..=sig.h).rev() {
        let ghost_total = sig.h - s1;
        for true_sizes in partitions_exact(s1, sig.r, s1) {
            for ghost_sizes in partitions_any(ghost_total) {
                let quarters =
                    local_lambda_quarters(sig.m, s1, sig.r, ghost_total);
                rows.push(EnumeratedPartition {
                    true_sizes: true_sizes.clone(),
                    ghost_sizes,
                    lambda: RlctValue::from_quarters(quarters, RlctSource::Enumerated)?,
                });
            }
        }
    }
    Ok(rows)
}

/// Minimizes the local coefficient over all collapse partitions. The minimum
/// equals the closed form exactly; the argmin returned is the first partition
/// attaining it (ghost-free by the iteration order).
pub fn rlct_enumerate(
    sig: ModelSignature,
) -> Result<(RlctValue, EnumeratedPartition), RlctError> {
    let rows = enumerate_partitions(sig)?;
    let best = rows
        .into_iter()
        .min_by_key(|row| row.lambda.quarters())
        .expect("at least one partition exists");
    Ok((best.lambda, best))
}

/// Coefficient of a direct sum of problems: coefficients add.
pub fn combine_sum(l1: RlctValue, l2: RlctValue) -> Result<RlctValue, RlctError> {
    RlctValue::from_quarters(l1.quarters() + l2.quarters(), RlctSource::Combinator)
}

/// Coefficient of a product of problems: the smaller coefficient wins.
pub fn combine_product(l1: RlctValue, l2: RlctValue) -> Result<RlctValue, RlctError> {
    RlctValue::from_quarters(l1.quarters().min(l2.quarters()), RlctSource::Combinator)
}
