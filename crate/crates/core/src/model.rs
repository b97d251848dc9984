//! Poisson mixtures: densities, sampling, and divergence functionals.
//!
//! A mixture has `H` components on the `(H-1)`-simplex, each with an
//! `M`-dimensional vector of positive Poisson rates. All density math runs in
//! log space (log-sum-exp for mixtures), and the infinite count lattice is
//! truncated to a finite box whose discarded probability mass is bounded
//! explicitly.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;
use thiserror::Error;

use crate::lattice::LatticeBox;
use crate::rng::rng_from_seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Absolute tolerance on the weight-sum invariant.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Largest admissible lattice-truncation tolerance.
pub const MAX_TRUNCATION_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("Poisson rate must be strictly positive, got {0}")]
    NonPositiveRate(f64),
    #[error("rate vector needs at least one coordinate")]
    EmptyRates,
    #[error("mixture needs at least one component")]
    EmptyMixture,
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1 within {WEIGHT_SUM_TOL}")]
    WeightSum { sum: f64 },
    #[error("component dimensions disagree: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight/rate counts disagree: {weights} weights vs {rates} rate vectors")]
    ComponentMismatch { weights: usize, rates: usize },
    #[error("true-mixture weight {index} must be strictly positive")]
    ZeroTruthWeight { index: usize },
    #[error("true components {i} and {j} share the same rate vector")]
    DuplicateTruthRates { i: usize, j: usize },
    #[error("truncation tolerance must lie in (0, {MAX_TRUNCATION_TOL}], got {0}")]
    InvalidTolerance(f64),
    #[error("cannot embed a {truth}-component truth into {model} components")]
    EmbedTooSmall { truth: usize, model: usize },
}

/// An `M`-vector of strictly positive Poisson intensities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>")]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyRates);
        }
        for &v in &values {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ModelError::NonPositiveRate(v));
            }
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Largest coordinate-wise absolute difference to another rate vector.
    pub fn separation(&self, other: &RateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for RateVector {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, ModelError> {
        RateVector::new(v)
    }
}

/// One observation: an `M`-vector of counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Count(Vec<u64>);

impl Count {
    pub fn new(values: Vec<u64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[u64] {
        &self.0
    }
}

/// Parameters of an `H`-component Poisson mixture: simplex weights plus one
/// rate vector per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMixtureParams")]
pub struct MixtureParams {
    weights: Vec<f64>,
    rates: Vec<RateVector>,
}

#[derive(Deserialize)]
struct RawMixtureParams {
    weights: Vec<f64>,
    rates: Vec<Vec<f64>>,
}

impl TryFrom<RawMixtureParams> for MixtureParams {
    type Error = ModelError;
    fn try_from(raw: RawMixtureParams) -> Result<Self, ModelError> {
        let rates = raw
            .rates
            .into_iter()
            .map(RateVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        MixtureParams::new(raw.weights, rates)
    }
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, rates: Vec<RateVector>) -> Result<Self, ModelError> {
        if weights.is_empty() {
            return Err(ModelError::EmptyMixture);
        }
        if weights.len() != rates.len() {
            return Err(ModelError::ComponentMismatch {
                weights: weights.len(),
                rates: rates.len(),
            });
        }
        for (index, &w) in weights.iter().enumerate() {
            if w < 0.0 || !w.is_finite() {
                return Err(ModelError::NegativeWeight { index, value: w });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(ModelError::WeightSum { sum });
        }
        let dim = rates[0].dim();
        for r in &rates {
            if r.dim() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    found: r.dim(),
                });
            }
        }
        Ok(Self { weights, rates })
    }

    /// Number of mixture components `H`.
    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    /// Data dimension `M`.
    pub fn dim(&self) -> usize {
        self.rates[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rates(&self) -> &[RateVector] {
        &self.rates
    }

    /// Largest rate in coordinate `m` across components.
    pub fn max_rate(&self, m: usize) -> f64 {
        self.rates
            .iter()
            .map(|r| r.values()[m])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy with components relabeled by `perm` (new index i takes old
    /// component `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.component_count());
        Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
            rates: perm.iter().map(|&i| self.rates[i].clone()).collect(),
        }
    }
}

/// The data-generating mixture: strictly positive weights and pairwise
/// distinct rate vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureParams")]
pub struct TrueModel(MixtureParams);

impl TryFrom<MixtureParams> for TrueModel {
    type Error = ModelError;
    fn try_from(params: MixtureParams) -> Result<Self, ModelError> {
        TrueModel::new(params)
    }
}

impl TrueModel {
    pub fn new(params: MixtureParams) -> Result<Self, ModelError> {
        for (index, &w) in params.weights().iter().enumerate() {
            if w <= 0.0 {
                return Err(ModelError::ZeroTruthWeight { index });
            }
        }
        let rates = params.rates();
        for i in 0..rates.len() {
            for j in (i + 1)..rates.len() {
                if rates[i].separation(&rates[j]) == 0.0 {
                    return Err(ModelError::DuplicateTruthRates { i, j });
                }
            }
        }
        Ok(Self(params))
    }

    pub fn params(&self) -> &MixtureParams {
        &self.0
    }

    /// Number of true components `r`.
    pub fn component_count(&self) -> usize {
        self.0.component_count()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Smallest pairwise separation (max-coordinate metric) among the true
    /// rate vectors. Infinite for a single component.
    pub fn min_rate_separation(&self) -> f64 {
        let rates = self.0.rates();
        let mut sep = f64::INFINITY;
        for i in 0..rates.len() {
            for j in (i + 1)..rates.len() {
                sep = sep.min(rates[i].separation(&rates[j]));
            }
        }
        sep
    }

    /// Embeds the truth into an `h`-component parameter vector by zero-weight
    /// padding (padding components reuse the true rates cyclically). The
    /// result realizes the true distribution exactly.
    pub fn embed(&self, h: usize) -> Result<MixtureParams, ModelError> {
        let r = self.component_count();
        if h < r {
            return Err(ModelError::EmbedTooSmall { truth: r, model: h });
        }
        let mut weights = self.0.weights().to_vec();
        let mut rates = self.0.rates().to_vec();
        for k in r..h {
            weights.push(0.0);
            rates.push(self.0.rates()[k % r].clone());
        }
        MixtureParams::new(weights, rates)
    }
}

// ---------------------------------------------------------------------------
// Elementary densities
// ---------------------------------------------------------------------------

const LN_FACTORIAL_TABLE_LEN: usize = 4096;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACTORIAL_TABLE_LEN];
        for x in 2..LN_FACTORIAL_TABLE_LEN {
            t[x] = t[x - 1] + (x as f64).ln();
        }
        t
    })
}

/// `ln x!`, table-backed for small `x`, Stirling series above.
pub fn ln_factorial(x: u64) -> f64 {
    let table = ln_factorial_table();
    if (x as usize) < table.len() {
        return table[x as usize];
    }
    let n = x as f64;
    n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
        - 1.0 / (360.0 * n * n * n)
}

/// `ln Po(x | rate) = x ln rate - rate - ln x!`.
pub fn poisson_log_pmf(x: u64, rate: f64) -> Result<f64, ModelError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(ModelError::NonPositiveRate(rate));
    }
    Ok(x as f64 * rate.ln() - rate - ln_factorial(x))
}

/// `Po(x | rate)`, evaluated in log space and exponentiated.
pub fn poisson_pmf(x: u64, rate: f64) -> Result<f64, ModelError> {
    poisson_log_pmf(x, rate).map(f64::exp)
}

fn ln_poisson_unchecked(x: u64, rate: f64) -> f64 {
    x as f64 * rate.ln() - rate - ln_factorial(x)
}

/// Log density of the mixture at a raw count slice (log-sum-exp over
/// components; zero-weight components are skipped).
pub fn mixture_log_pmf_at(x: &[u64], params: &MixtureParams) -> f64 {
    debug_assert_eq!(x.len(), params.dim());
    let mut terms: Vec<f64> = Vec::with_capacity(params.component_count());
    for (k, rate) in params.rates().iter().enumerate() {
        let a = params.weights()[k];
        if a == 0.0 {
            continue;
        }
        let mut t = a.ln();
        for (m, &xm) in x.iter().enumerate() {
            t += ln_poisson_unchecked(xm, rate.values()[m]);
        }
        terms.push(t);
    }
    log_sum_exp(&terms)
}

/// Log density of the mixture at an observation.
pub fn mixture_log_pmf(x: &Count, params: &MixtureParams) -> f64 {
    mixture_log_pmf_at(x.values(), params)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + sum.ln()
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws `count` i.i.d. observations. Deterministic given `seed`: each draw
/// picks a component by its weight, then `M` independent Poisson variates.
pub fn sample(params: &MixtureParams, count: usize, seed: u64) -> Vec<Count> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let k = pick_component(&mut rng, params.weights());
        let rate = &params.rates()[k];
        let values = rate
            .values()
            .iter()
            .map(|&b| sample_poisson(&mut rng, b))
            .collect();
        out.push(Count::new(values));
    }
    out
}

fn pick_component(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // Falls through only on fp round-off at u ~ 1; take the last positive weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .expect("mixture has a positive weight")
}

/// One Poisson draw. CDF inversion by sequential search below rate 30,
/// transformed rejection (PTRS) above; both consume the stream
/// deterministically.
pub fn sample_poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate < 30.0 {
        poisson_inversion(rng, rate)
    } else {
        poisson_ptrs(rng, rate)
    }
}

fn poisson_inversion(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    let u: f64 = rng.gen();
    let mut p = (-rate).exp();
    let mut cdf = p;
    let mut x = 0u64;
    let cap = (rate + 12.0 * rate.sqrt() + 60.0) as u64;
    while u >= cdf && x < cap {
        x += 1;
        p *= rate / x as f64;
        cdf += p;
    }
    x
}

fn poisson_ptrs(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    let b = 0.931 + 2.53 * rate.sqrt();
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = (v * inv_alpha / (a / (us * us) + b)).ln();
        if lhs <= k * rate.ln() - rate - ln_factorial(k as u64) {
            return k as u64;
        }
    }
}

// ---------------------------------------------------------------------------
// Truncated lattice boxes
// ---------------------------------------------------------------------------

/// A truncation box together with a bound on the mixture probability mass it
/// discards.
#[derive(Debug, Clone)]
pub struct TruncatedLattice {
    pub bx: LatticeBox,
    /// Upper bound on the mass outside the box for any mixture whose rates
    /// are dominated coordinatewise by the ones the box was built for.
    pub tail_bound: f64,
}

fn check_tol(tol: f64) -> Result<(), ModelError> {
    if !(tol > 0.0 && tol <= MAX_TRUNCATION_TOL) {
        return Err(ModelError::InvalidTolerance(tol));
    }
    Ok(())
}

/// Smallest `x_max` with `P(Po(rate) > x_max) < tail`, plus the achieved tail.
fn poisson_tail_cutoff(rate: f64, tail: f64) -> (u64, f64) {
    let mut p = (-rate).exp();
    if p == 0.0 {
        // Rate too large for the cdf walk; use a crude far-tail bound.
        return ((rate + 12.0 * rate.sqrt() + 60.0).ceil() as u64, tail);
    }
    let mut cdf = p;
    let mut x = 0u64;
    while 1.0 - cdf >= tail && x < 200_000 {
        x += 1;
        p *= rate / x as f64;
        cdf += p;
    }
    (x, (1.0 - cdf).max(0.0))
}

fn box_for_rates(max_rate: &[f64], comp_count: usize, tol: f64) -> TruncatedLattice {
    let m = max_rate.len();
    let per_coord = tol / (comp_count as f64 * m as f64);
    let mut upper = Vec::with_capacity(m);
    let mut bound = 0.0;
    for &rate in max_rate {
        let (x_max, tail) = poisson_tail_cutoff(rate, per_coord);
        upper.push(x_max);
        bound += tail;
    }
    TruncatedLattice {
        bx: LatticeBox::new(upper),
        tail_bound: bound,
    }
}

/// Truncation box covering both the model and the truth: per coordinate, the
/// tail of the largest rate present in either is below `tol / (H * M)`.
pub fn joint_truncation_box(
    model: &MixtureParams,
    truth: &TrueModel,
    tol: f64,
) -> Result<TruncatedLattice, ModelError> {
    check_tol(tol)?;
    if model.dim() != truth.dim() {
        return Err(ModelError::DimensionMismatch {
            expected: truth.dim(),
            found: model.dim(),
        });
    }
    let m = model.dim();
    let max_rate: Vec<f64> = (0..m)
        .map(|i| model.max_rate(i).max(truth.params().max_rate(i)))
        .collect();
    let comp = model.component_count().max(truth.component_count());
    Ok(box_for_rates(&max_rate, comp, tol))
}

/// Truncation box for the truth alone (used when only `q`-expectations are
/// summed).
pub fn truth_truncation_box(truth: &TrueModel, tol: f64) -> Result<TruncatedLattice, ModelError> {
    check_tol(tol)?;
    let m = truth.dim();
    let max_rate: Vec<f64> = (0..m).map(|i| truth.params().max_rate(i)).collect();
    Ok(box_for_rates(&max_rate, truth.component_count(), tol))
}

// ---------------------------------------------------------------------------
// Divergence functionals
// ---------------------------------------------------------------------------

/// Log loss `-sum_x q(x) log p(x|w)` over the truncated lattice.
pub fn log_loss(w: &MixtureParams, truth: &TrueModel, tol: f64) -> Result<f64, ModelError> {
    let lattice = joint_truncation_box(w, truth, tol)?;
    let mut acc = 0.0;
    lattice.bx.for_each(|x| {
        let lq = mixture_log_pmf_at(x, truth.params());
        let lp = mixture_log_pmf_at(x, w);
        acc -= lq.exp() * lp;
    });
    Ok(acc)
}

/// Mean error function: the Kullback-Leibler divergence
/// `sum_x q(x) log(q(x)/p(x|w))` over the truncated lattice. Nonnegative up
/// to the truncation bound; zero exactly when `p(.|w)` realizes `q`.
pub fn kl_mean_error(w: &MixtureParams, truth: &TrueModel, tol: f64) -> Result<f64, ModelError> {
    let lattice = joint_truncation_box(w, truth, tol)?;
    let mut acc = 0.0;
    lattice.bx.for_each(|x| {
        let lq = mixture_log_pmf_at(x, truth.params());
        let lp = mixture_log_pmf_at(x, w);
        acc += lq.exp() * (lq - lp);
    });
    Ok(acc)
}

/// Squared-difference surrogate `sum_x (p(x|w) - q(x))^2` over the truncated
/// lattice. Shares its zero set (and its learning coefficient) with the mean
/// error function.
pub fn sq_surrogate(w: &MixtureParams, truth: &TrueModel, tol: f64) -> Result<f64, ModelError> {
    let lattice = joint_truncation_box(w, truth, tol)?;
    let mut acc = 0.0;
    lattice.bx.for_each(|x| {
        let p = mixture_log_pmf_at(x, w).exp();
        let q = mixture_log_pmf_at(x, truth.params()).exp();
        acc += (p - q) * (p - q);
    });
    Ok(acc)
}
