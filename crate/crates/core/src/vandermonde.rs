//! The simplex Vandermonde singularity function, its affine variety, and
//! numeric equivalence probes.
//!
//! For a model with `H` components and a truth with `r` components, the
//! singularity function is the finite sum
//!
//! ```text
//! H(w) = sum_{x in [0:H+r-1]^M} (sum_k a_k b_k^x - sum_k a*_k b*_k^x)^2 ,
//! ```
//!
//! whose zero set is the affine variety cut out by the moment differences.
//! Membership in that variety has a combinatorial characterization through
//! the `Inv` sets: which model components sit exactly on which true rate
//! vector. Points of the variety are built from collapse partitions
//! ([`PartitionSpec`]), and `=_RLCT` equivalences (mean error vs. singularity
//! function, global vs. per-group decomposition) are checked numerically by
//! bounded-ratio probes along random feasible directions.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::lattice::LatticeBox;
use crate::model::{MixtureParams, ModelError, RateVector, TrueModel};
use crate::rng::{mix_seed, rng_from_seed};

#[derive(Debug, Error)]
pub enum VarietyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model and truth disagree on data dimension ({model} vs {truth})")]
    DimensionMismatch { model: usize, truth: usize },
    #[error("model must have at least as many components as the truth ({h} < {r})")]
    ModelSmallerThanTruth { h: usize, r: usize },
    #[error("matching tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("true rates separated by {separation}, need more than {required} for tolerance-based matching")]
    TruthSeparationTooSmall { separation: f64, required: f64 },
    #[error("model component {component} matches true components {first} and {second} within tolerance")]
    AmbiguousMatch {
        component: usize,
        first: usize,
        second: usize,
    },
    #[error("partition sizes sum to {found}, model has {expected} components")]
    PartitionSizeMismatch { expected: usize, found: usize },
    #[error("partition lists {spec_r} true groups, truth has {truth_r} components")]
    PartitionTruthMismatch { spec_r: usize, truth_r: usize },
    #[error("every partition group needs at least one component")]
    EmptyGroup,
    #[error("ghost centers: got {centers} centers for {sizes} ghost groups")]
    GhostCenterCount { sizes: usize, centers: usize },
    #[error("could not place ghost centers away from the true rates")]
    GhostCenterPlacement,
    #[error("ghost centers must be distinct from each other and from all true rates")]
    GhostCenterCollision,
    #[error("probe base point is not on the zero set (f = {f_value}, g = {g_value})")]
    BaseNotOnZeroSet { f_value: f64, g_value: f64 },
}

/// A model/truth pair sharing the data dimension, with `H >= r`.
#[derive(Debug, Clone)]
pub struct VandermondeInstance {
    model: MixtureParams,
    truth: TrueModel,
}

impl VandermondeInstance {
    pub fn new(model: MixtureParams, truth: TrueModel) -> Result<Self, VarietyError> {
        if model.dim() != truth.dim() {
            return Err(VarietyError::DimensionMismatch {
                model: model.dim(),
                truth: truth.dim(),
            });
        }
        if model.component_count() < truth.component_count() {
            return Err(VarietyError::ModelSmallerThanTruth {
                h: model.component_count(),
                r: truth.component_count(),
            });
        }
        Ok(Self { model, truth })
    }

    pub fn model(&self) -> &MixtureParams {
        &self.model
    }

    pub fn truth(&self) -> &TrueModel {
        &self.truth
    }

    /// Exponent box `[0 : H+r-1]^M`.
    pub fn exponent_box(&self) -> LatticeBox {
        let upper = (self.model.component_count() + self.truth.component_count() - 1) as u64;
        LatticeBox::cube(self.model.dim(), upper)
    }
}

/// `prod_m base[m]^{exp[m]}` for a multi-exponent.
fn multi_pow(base: &[f64], exp: &[u64]) -> f64 {
    base.iter()
        .zip(exp)
        .map(|(&b, &e)| b.powi(e as i32))
        .product()
}

/// Moment difference `sum_k a_k b_k^x - sum_k a*_k b*_k^x` at one exponent.
fn moment_difference(model: &MixtureParams, truth: &TrueModel, x: &[u64]) -> f64 {
    let mut s = 0.0;
    for (k, rate) in model.rates().iter().enumerate() {
        s += model.weights()[k] * multi_pow(rate.values(), x);
    }
    for (k, rate) in truth.params().rates().iter().enumerate() {
        s -= truth.params().weights()[k] * multi_pow(rate.values(), x);
    }
    s
}

/// The singularity function: sum of squared moment differences over the
/// exponent box. Exact finite sum; zero exactly on the variety.
pub fn h_function(inst: &VandermondeInstance) -> f64 {
    let mut acc = 0.0;
    inst.exponent_box().for_each(|x| {
        let d = moment_difference(&inst.model, &inst.truth, x);
        acc += d * d;
    });
    acc
}

/// Which model components sit on which true rate vector (within a matching
/// tolerance), and which sit on none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InvSets {
    /// `matched[i]`: model components whose rate vector equals the i-th true
    /// rate vector in every coordinate.
    pub matched: Vec<BTreeSet<usize>>,
    /// Model components matching no true component.
    pub unmatched: BTreeSet<usize>,
}

/// Computes the `Inv` sets by coordinatewise matching within `tol`.
///
/// Requires the true rates to be separated by more than `100 * tol` so that
/// matches are unambiguous; a component matching two distinct true rates is
/// reported as an error.
pub fn compute_inv_sets(inst: &VandermondeInstance, tol: f64) -> Result<InvSets, VarietyError> {
    if !(tol > 0.0) {
        return Err(VarietyError::InvalidTolerance(tol));
    }
    let sep = inst.truth.min_rate_separation();
    if sep <= 100.0 * tol {
        return Err(VarietyError::TruthSeparationTooSmall {
            separation: sep,
            required: 100.0 * tol,
        });
    }
    let r = inst.truth.component_count();
    let mut matched = vec![BTreeSet::new(); r];
    let mut unmatched = BTreeSet::new();
    for (kp, rate) in inst.model.rates().iter().enumerate() {
        let mut hit: Option<usize> = None;
        for (k, true_rate) in inst.truth.params().rates().iter().enumerate() {
            if rate.separation(true_rate) <= tol {
                if let Some(first) = hit {
                    return Err(VarietyError::AmbiguousMatch {
                        component: kp,
                        first,
                        second: k,
                    });
                }
                hit = Some(k);
            }
        }
        match hit {
            Some(k) => {
                matched[k].insert(kp);
            }
            None => {
                unmatched.insert(kp);
            }
        }
    }
    Ok(InvSets { matched, unmatched })
}

/// One violated clause of the variety-membership condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum MembershipViolation {
    /// No model component sits on true component `truth_index`.
    EmptyInvSet { truth_index: usize },
    /// The weights on true component `truth_index` do not add up to its true
    /// weight.
    WeightSumMismatch {
        truth_index: usize,
        sum: f64,
        target: f64,
    },
    /// A component away from every true rate carries positive weight.
    UnmatchedWeight { component: usize, weight: f64 },
}

/// Membership decision plus the certificate of violated clauses.
#[derive(Debug, Clone, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    pub violations: Vec<MembershipViolation>,
    pub inv: InvSets,
}

/// Decides membership of the model parameters in the affine variety: every
/// true component must be covered, covering weights must sum to the true
/// weight, and uncovered components must carry no weight (all within `tol`).
pub fn variety_membership(
    inst: &VandermondeInstance,
    tol: f64,
) -> Result<MembershipReport, VarietyError> {
    let inv = compute_inv_sets(inst, tol)?;
    let mut violations = Vec::new();
    let weights = inst.model.weights();
    for (i, set) in inv.matched.iter().enumerate() {
        if set.is_empty() {
            violations.push(MembershipViolation::EmptyInvSet { truth_index: i });
            continue;
        }
        let sum: f64 = set.iter().map(|&k| weights[k]).sum();
        let target = inst.truth.params().weights()[i];
        if (sum - target).abs() > tol {
            violations.push(MembershipViolation::WeightSumMismatch {
                truth_index: i,
                sum,
                target,
            });
        }
    }
    for &k in &inv.unmatched {
        if weights[k] > tol {
            violations.push(MembershipViolation::UnmatchedWeight {
                component: k,
                weight: weights[k],
            });
        }
    }
    Ok(MembershipReport {
        member: violations.is_empty(),
        violations,
        inv,
    })
}

/// A local collapse pattern: how many model components sit on each true rate
/// vector, plus ghost groups parked on rate vectors away from the truth with
/// zero weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionSpec {
    true_sizes: Vec<usize>,
    ghost_sizes: Vec<usize>,
    ghost_centers: Vec<RateVector>,
}

impl PartitionSpec {
    pub fn new(
        true_sizes: Vec<usize>,
        ghost_sizes: Vec<usize>,
        ghost_centers: Vec<RateVector>,
    ) -> Result<Self, VarietyError> {
        if true_sizes.is_empty()
            || true_sizes.iter().any(|&s| s == 0)
            || ghost_sizes.iter().any(|&s| s == 0)
        {
            return Err(VarietyError::EmptyGroup);
        }
        if ghost_centers.len() != ghost_sizes.len() {
            return Err(VarietyError::GhostCenterCount {
                sizes: ghost_sizes.len(),
                centers: ghost_centers.len(),
            });
        }
        for i in 0..ghost_centers.len() {
            for j in (i + 1)..ghost_centers.len() {
                if ghost_centers[i].separation(&ghost_centers[j]) == 0.0 {
                    return Err(VarietyError::GhostCenterCollision);
                }
            }
        }
        Ok(Self {
            true_sizes,
            ghost_sizes,
            ghost_centers,
        })
    }

    /// Partition with every model component on a true rate vector.
    pub fn no_ghosts(true_sizes: Vec<usize>) -> Result<Self, VarietyError> {
        Self::new(true_sizes, Vec::new(), Vec::new())
    }

    /// Partition with ghost centers drawn uniformly from `[0.5, b_max]^M`,
    /// rejected until they keep distance 0.1 from the true rates and from
    /// each other.
    pub fn with_random_ghost_centers(
        true_sizes: Vec<usize>,
        ghost_sizes: Vec<usize>,
        truth: &TrueModel,
        b_max: f64,
        seed: u64,
    ) -> Result<Self, VarietyError> {
        let m = truth.dim();
        let mut rng = rng_from_seed(mix_seed(seed, &[0x6705]));
        let mut centers: Vec<RateVector> = Vec::with_capacity(ghost_sizes.len());
        for _ in 0..ghost_sizes.len() {
            let mut placed = None;
            for _ in 0..1000 {
                let cand = RateVector::new(
                    (0..m).map(|_| rng.gen_range(0.5..=b_max)).collect(),
                )?;
                let clear_of_truth = truth
                    .params()
                    .rates()
                    .iter()
                    .all(|b| cand.separation(b) >= 0.1);
                let clear_of_centers = centers.iter().all(|c| cand.separation(c) >= 0.1);
                if clear_of_truth && clear_of_centers {
                    placed = Some(cand);
                    break;
                }
            }
            centers.push(placed.ok_or(VarietyError::GhostCenterPlacement)?);
        }
        Self::new(true_sizes, ghost_sizes, centers)
    }

    /// Number of true components `r`.
    pub fn true_component_count(&self) -> usize {
        self.true_sizes.len()
    }

    /// Number of groups `r'` (true plus ghost).
    pub fn group_count(&self) -> usize {
        self.true_sizes.len() + self.ghost_sizes.len()
    }

    /// Total components `H = sum_j H_j`.
    pub fn total_components(&self) -> usize {
        self.true_sizes.iter().sum::<usize>() + self.ghost_sizes.iter().sum::<usize>()
    }

    pub fn true_sizes(&self) -> &[usize] {
        &self.true_sizes
    }

    pub fn ghost_sizes(&self) -> &[usize] {
        &self.ghost_sizes
    }

    pub fn ghost_centers(&self) -> &[RateVector] {
        &self.ghost_centers
    }
}

/// Builds a point of the variety for a collapse partition: group `j <= r`
/// places `H_j` components exactly on the j-th true rate with random positive
/// weights summing to the true weight; ghost groups sit on their center with
/// weight zero. Components are ordered by group.
pub fn sample_variety_point(
    spec: &PartitionSpec,
    truth: &TrueModel,
    seed: u64,
) -> Result<MixtureParams, VarietyError> {
    let r = truth.component_count();
    if spec.true_component_count() != r {
        return Err(VarietyError::PartitionTruthMismatch {
            spec_r: spec.true_component_count(),
            truth_r: r,
        });
    }
    for center in spec.ghost_centers() {
        if center.dim() != truth.dim() {
            return Err(VarietyError::DimensionMismatch {
                model: center.dim(),
                truth: truth.dim(),
            });
        }
        if truth
            .params()
            .rates()
            .iter()
            .any(|b| center.separation(b) == 0.0)
        {
            return Err(VarietyError::GhostCenterCollision);
        }
    }
    let mut rng = rng_from_seed(mix_seed(seed, &[0x9e1]));
    let mut weights = Vec::with_capacity(spec.total_components());
    let mut rates = Vec::with_capacity(spec.total_components());
    for (j, &size) in spec.true_sizes().iter().enumerate() {
        let target = truth.params().weights()[j];
        let fracs: Vec<f64> = (0..size).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = fracs.iter().sum();
        let mut placed = 0.0;
        for (i, &f) in fracs.iter().enumerate() {
            // Last component takes the exact remainder so the group sum is
            // bit-exact.
            let w = if i + 1 == size {
                target - placed
            } else {
                target * (f / total)
            };
            placed += w;
            weights.push(w);
            rates.push(truth.params().rates()[j].clone());
        }
    }
    for (g, &size) in spec.ghost_sizes().iter().enumerate() {
        for _ in 0..size {
            weights.push(0.0);
            rates.push(spec.ghost_centers()[g].clone());
        }
    }
    Ok(MixtureParams::new(weights, rates)?)
}

/// Per-group values of the local decomposition: group `j <= r` sums squared
/// moment differences against its own true component over `[0:H_j]^M`
/// (including the `-a*_j` entry), ghost groups sum their own squared moments
/// over `[0:H_j-1]^M`. Model components must be ordered by group, as
/// [`sample_variety_point`] produces them.
pub fn aoyagi_local_split(
    inst: &VandermondeInstance,
    spec: &PartitionSpec,
) -> Result<Vec<f64>, VarietyError> {
    let h = inst.model().component_count();
    if spec.total_components() != h {
        return Err(VarietyError::PartitionSizeMismatch {
            expected: h,
            found: spec.total_components(),
        });
    }
    let r = inst.truth().component_count();
    if spec.true_component_count() != r {
        return Err(VarietyError::PartitionTruthMismatch {
            spec_r: spec.true_component_count(),
            truth_r: r,
        });
    }
    let m = inst.model().dim();
    let weights = inst.model().weights();
    let rates = inst.model().rates();
    let mut values = Vec::with_capacity(spec.group_count());
    let mut offset = 0usize;
    for (j, &size) in spec.true_sizes().iter().enumerate() {
        let a_true = inst.truth().params().weights()[j];
        let b_true = inst.truth().params().rates()[j].values();
        let bx = LatticeBox::cube(m, size as u64);
        let mut acc = 0.0;
        bx.for_each(|l| {
            let mut d = -a_true * multi_pow(b_true, l);
            for i in offset..offset + size {
                d += weights[i] * multi_pow(rates[i].values(), l);
            }
            acc += d * d;
        });
        values.push(acc);
        offset += size;
    }
    for &size in spec.ghost_sizes() {
        let bx = LatticeBox::cube(m, size as u64 - 1);
        let mut acc = 0.0;
        bx.for_each(|l| {
            let mut d = 0.0;
            for i in offset..offset + size {
                d += weights[i] * multi_pow(rates[i].values(), l);
            }
            acc += d * d;
        });
        values.push(acc);
        offset += size;
    }
    Ok(values)
}

/// Ratio statistics of `g^2 / f^2` at one probe scale.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleInterval {
    pub scale: f64,
    pub min: f64,
    pub max: f64,
    pub used: usize,
    pub skipped: usize,
}

impl ScaleInterval {
    pub fn spread(&self) -> f64 {
        self.max / self.min
    }
}

/// Result of a bounded-ratio probe around a zero of both functions.
#[derive(Debug, Clone, Serialize)]
pub struct RatioProbeReport {
    pub per_scale: Vec<ScaleInterval>,
    pub overall_min: f64,
    pub overall_max: f64,
}

impl RatioProbeReport {
    /// Spread at the last scale over spread at the first scale. With scales
    /// ordered largest to smallest this measures how much the ratio interval
    /// widens as the probe closes in on the singular point.
    pub fn spread_growth(&self) -> f64 {
        let first = self.per_scale.first().map(ScaleInterval::spread).unwrap_or(1.0);
        let last = self.per_scale.last().map(ScaleInterval::spread).unwrap_or(1.0);
        last / first
    }
}

/// Probes the bounded-ratio relation between two functions vanishing at
/// `w_star`: for random feasible directions `delta` and each scale `eps`,
/// evaluates `g(w + eps delta)^2 / f(w + eps delta)^2` and reports the
/// min/max interval per scale.
///
/// Directions are unit Gaussian vectors projected so weights stay on the
/// simplex (zero-sum, nonnegative at zero-weight components) and shrunk when
/// needed so the largest scale stays inside the parameter region. Probe
/// points where both values vanish below 1e-300 are skipped.
pub fn ratio_bound_probe<F, G>(
    f: F,
    g: G,
    w_star: &MixtureParams,
    directions: usize,
    scales: &[f64],
    seed: u64,
) -> Result<RatioProbeReport, VarietyError>
where
    F: Fn(&MixtureParams) -> f64,
    G: Fn(&MixtureParams) -> f64,
{
    let f0 = f(w_star);
    let g0 = g(w_star);
    if f0.abs() > 1e-8 || g0.abs() > 1e-8 {
        return Err(VarietyError::BaseNotOnZeroSet {
            f_value: f0,
            g_value: g0,
        });
    }
    let h = w_star.component_count();
    let m = w_star.dim();
    let max_scale = scales.iter().copied().fold(0.0f64, f64::max);
    let mut per_scale: Vec<ScaleInterval> = scales
        .iter()
        .map(|&s| ScaleInterval {
            scale: s,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            used: 0,
            skipped: 0,
        })
        .collect();
    for d in 0..directions {
        let mut rng = rng_from_seed(mix_seed(seed, &[0xd1, d as u64]));
        let mut dw: Vec<f64> = (0..h).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut db: Vec<f64> = (0..h * m).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Zero-weight components may only gain weight.
        let free: Vec<usize> = (0..h).filter(|&k| w_star.weights()[k] > 0.0).collect();
        for k in 0..h {
            if w_star.weights()[k] == 0.0 {
                dw[k] = dw[k].abs();
            }
        }
        // Project onto the simplex tangent plane by adjusting free components.
        let excess: f64 = dw.iter().sum::<f64>() / free.len() as f64;
        for &k in &free {
            dw[k] -= excess;
        }
        let norm = (dw.iter().map(|v| v * v).sum::<f64>()
            + db.iter().map(|v| v * v).sum::<f64>())
        .sqrt();
        dw.iter_mut().for_each(|v| *v /= norm);
        db.iter_mut().for_each(|v| *v /= norm);
        // Shrink so that the largest step keeps weights nonnegative and rates
        // positive.
        let mut t_max = f64::INFINITY;
        for k in 0..h {
            if dw[k] < 0.0 {
                t_max = t_max.min(w_star.weights()[k] / -dw[k]);
            }
            for mm in 0..m {
                let db_km = db[k * m + mm];
                if db_km < 0.0 {
                    t_max = t_max.min(0.5 * w_star.rates()[k].values()[mm] / -db_km);
                }
            }
        }
        if max_scale > 0.999 * t_max {
            let shrink = 0.999 * t_max / max_scale;
            dw.iter_mut().for_each(|v| *v *= shrink);
            db.iter_mut().for_each(|v| *v *= shrink);
        }
        for (si, &eps) in scales.iter().enumerate() {
            let weights: Vec<f64> = (0..h)
                .map(|k| (w_star.weights()[k] + eps * dw[k]).max(0.0))
                .collect();
            let rates: Vec<RateVector> = (0..h)
                .map(|k| {
                    RateVector::new(
                        (0..m)
                            .map(|mm| w_star.rates()[k].values()[mm] + eps * db[k * m + mm])
                            .collect(),
                    )
                })
                .collect::<Result<_, _>>()?;
            let point = MixtureParams::new(weights, rates)?;
            let fv = f(&point);
            let gv = g(&point);
            let stat = &mut per_scale[si];
            if fv.abs() < 1e-300 && gv.abs() < 1e-300 {
                stat.skipped += 1;
                continue;
            }
            let ratio = (gv / fv) * (gv / fv);
            stat.min = stat.min.min(ratio);
            stat.max = stat.max.max(ratio);
            stat.used += 1;
        }
    }
    let overall_min = per_scale.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    let overall_max = per_scale
        .iter()
        .map(|s| s.max)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RatioProbeReport {
        per_scale,
        overall_min,
        overall_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kl_mean_error, sq_surrogate};

    fn rv(values: &[f64]) -> RateVector {
        RateVector::new(values.to_vec()).unwrap()
    }

    fn truth_1d(weights: &[f64], rates: &[f64]) -> TrueModel {
        TrueModel::new(
            MixtureParams::new(
                weights.to_vec(),
                rates.iter().map(|&b| rv(&[b])).collect(),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn h_function_hand_example() {
        // H=1, r=1, a=1, b=2, b*=1, box [0:1]: (1-1)^2 + (2-1)^2 = 1
        let truth = truth_1d(&[1.0], &[1.0]);
        let model = MixtureParams::new(vec![1.0], vec![rv(&[2.0])]).unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        assert_eq!(inst.exponent_box().upper(), &[1]);
        assert!((h_function(&inst) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn h_function_zero_at_realizing_point() {
        let truth = truth_1d(&[0.3, 0.7], &[1.0, 2.0]);
        let model = MixtureParams::new(
            vec![0.1, 0.2, 0.7],
            vec![rv(&[1.0]), rv(&[1.0]), rv(&[2.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        assert!(h_function(&inst) < 1e-24);
    }

    #[test]
    fn h_function_permutation_invariant() {
        let truth = truth_1d(&[0.4, 0.6], &[1.0, 3.0]);
        let model = MixtureParams::new(
            vec![0.2, 0.3, 0.5],
            vec![rv(&[1.2]), rv(&[2.4]), rv(&[3.0])],
        )
        .unwrap();
        let a = VandermondeInstance::new(model.clone(), truth.clone()).unwrap();
        let b = VandermondeInstance::new(model.permuted(&[2, 0, 1]), truth).unwrap();
        assert!((h_function(&a) - h_function(&b)).abs() < 1e-12 * h_function(&a).abs().max(1.0));
    }

    #[test]
    fn inv_sets_all_on_first_truth() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(
            vec![0.5, 0.5],
            vec![rv(&[2.0]), rv(&[2.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let inv = compute_inv_sets(&inst, 1e-9).unwrap();
        assert_eq!(inv.matched[0], BTreeSet::from([0, 1]));
        assert!(inv.unmatched.is_empty());
    }

    #[test]
    fn inv_sets_none_matching() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(
            vec![0.5, 0.5],
            vec![rv(&[1.0]), rv(&[3.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let inv = compute_inv_sets(&inst, 1e-9).unwrap();
        assert!(inv.matched[0].is_empty());
        assert_eq!(inv.unmatched, BTreeSet::from([0, 1]));
    }

    #[test]
    fn inv_sets_mixed_example() {
        // H=3, r=2, rows (b*_1, b*_1, c): Inv_1 = {1,2}, Inv_2 = {}, Inv_0 = {3}
        let truth = truth_1d(&[0.5, 0.5], &[1.0, 2.0]);
        let model = MixtureParams::new(
            vec![0.3, 0.3, 0.4],
            vec![rv(&[1.0]), rv(&[1.0]), rv(&[5.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let inv = compute_inv_sets(&inst, 1e-9).unwrap();
        assert_eq!(inv.matched[0], BTreeSet::from([0, 1]));
        assert!(inv.matched[1].is_empty());
        assert_eq!(inv.unmatched, BTreeSet::from([2]));
    }

    #[test]
    fn inv_sets_require_separated_truth() {
        let truth = truth_1d(&[0.5, 0.5], &[1.0, 1.0 + 1e-8]);
        let model = MixtureParams::new(vec![0.5, 0.5], vec![rv(&[1.0]), rv(&[2.0])]).unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        assert!(matches!(
            compute_inv_sets(&inst, 1e-9),
            Err(VarietyError::TruthSeparationTooSmall { .. })
        ));
    }

    #[test]
    fn membership_split_weights_is_member() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(
            vec![0.3, 0.7],
            vec![rv(&[2.0]), rv(&[2.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let report = variety_membership(&inst, 1e-9).unwrap();
        assert!(report.member, "{:?}", report.violations);
    }

    #[test]
    fn membership_detects_weighted_stray_component() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(
            vec![0.5, 0.5],
            vec![rv(&[2.0]), rv(&[3.0])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let report = variety_membership(&inst, 1e-9).unwrap();
        assert!(!report.member);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, MembershipViolation::UnmatchedWeight { component: 1, .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, MembershipViolation::WeightSumMismatch { truth_index: 0, .. })));
    }

    #[test]
    fn membership_agrees_with_divergences_on_constructed_point() {
        let truth = truth_1d(&[0.4, 0.6], &[1.0, 2.5]);
        let spec = PartitionSpec::no_ghosts(vec![2, 1]).unwrap();
        let point = sample_variety_point(&spec, &truth, 77).unwrap();
        let inst = VandermondeInstance::new(point.clone(), truth.clone()).unwrap();
        assert!(variety_membership(&inst, 1e-12).unwrap().member);
        assert!(h_function(&inst) <= 1e-20);
        assert!(kl_mean_error(&point, &truth, 1e-9).unwrap().abs() <= 1e-10);
        assert!(sq_surrogate(&point, &truth, 1e-9).unwrap() <= 1e-12);
    }

    #[test]
    fn trivial_partition_recovers_truth() {
        let truth = truth_1d(&[0.4, 0.6], &[1.0, 2.5]);
        let spec = PartitionSpec::no_ghosts(vec![1, 1]).unwrap();
        let point = sample_variety_point(&spec, &truth, 5).unwrap();
        assert_eq!(point.weights(), truth.params().weights());
        assert_eq!(point.rates(), truth.params().rates());
    }

    #[test]
    fn ghost_groups_carry_zero_weight() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let spec = PartitionSpec::with_random_ghost_centers(
            vec![2],
            vec![1, 1],
            &truth,
            5.0,
            99,
        )
        .unwrap();
        let point = sample_variety_point(&spec, &truth, 42).unwrap();
        assert_eq!(point.component_count(), 4);
        assert_eq!(point.weights()[2], 0.0);
        assert_eq!(point.weights()[3], 0.0);
        let inst = VandermondeInstance::new(point, truth).unwrap();
        assert!(h_function(&inst) <= 1e-20);
        assert!(variety_membership(&inst, 1e-12).unwrap().member);
    }

    #[test]
    fn aoyagi_split_zero_at_variety_point() {
        let truth = truth_1d(&[0.5, 0.5], &[1.0, 3.0]);
        let spec = PartitionSpec::with_random_ghost_centers(
            vec![2, 1],
            vec![1],
            &truth,
            5.0,
            3,
        )
        .unwrap();
        let point = sample_variety_point(&spec, &truth, 8).unwrap();
        let inst = VandermondeInstance::new(point, truth).unwrap();
        let values = aoyagi_local_split(&inst, &spec).unwrap();
        assert_eq!(values.len(), 3);
        for v in values {
            assert!(v <= 1e-20, "group value {v}");
        }
    }

    #[test]
    fn aoyagi_single_group_matches_h_function() {
        // r'=r=1, H_1=H: group box [0:H]^M equals the full box [0:H+r-1]^M.
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(
            vec![0.6, 0.4],
            vec![rv(&[1.8]), rv(&[2.3])],
        )
        .unwrap();
        let inst = VandermondeInstance::new(model, truth).unwrap();
        let spec = PartitionSpec::no_ghosts(vec![2]).unwrap();
        let values = aoyagi_local_split(&inst, &spec).unwrap();
        assert_eq!(values.len(), 1);
        assert!((values[0] - h_function(&inst)).abs() < 1e-12 * values[0].max(1.0));
    }

    #[test]
    fn ratio_probe_identity_and_constant_factor() {
        let truth = truth_1d(&[0.5, 0.5], &[1.0, 3.0]);
        let spec = PartitionSpec::no_ghosts(vec![1, 2]).unwrap();
        let point = sample_variety_point(&spec, &truth, 21).unwrap();
        let t = truth.clone();
        let f = move |w: &MixtureParams| {
            h_function(&VandermondeInstance::new(w.clone(), t.clone()).unwrap())
        };
        let report =
            ratio_bound_probe(&f, &f, &point, 8, &[1e-1, 1e-2, 1e-3], 4).unwrap();
        assert!((report.overall_min - 1.0).abs() < 1e-9);
        assert!((report.overall_max - 1.0).abs() < 1e-9);

        let t2 = truth.clone();
        let f2 = move |w: &MixtureParams| {
            h_function(&VandermondeInstance::new(w.clone(), t2.clone()).unwrap())
        };
        let g2 = {
            let t3 = truth.clone();
            move |w: &MixtureParams| {
                2.0 * h_function(&VandermondeInstance::new(w.clone(), t3.clone()).unwrap())
            }
        };
        let report = ratio_bound_probe(&f2, &g2, &point, 8, &[1e-1, 1e-2], 4).unwrap();
        assert!((report.overall_min - 4.0).abs() < 1e-9);
        assert!((report.overall_max - 4.0).abs() < 1e-9);
    }

    #[test]
    fn ratio_probe_rejects_nonzero_base() {
        let truth = truth_1d(&[1.0], &[2.0]);
        let model = MixtureParams::new(vec![1.0], vec![rv(&[3.0])]).unwrap();
        let t = truth.clone();
        let f = move |w: &MixtureParams| {
            h_function(&VandermondeInstance::new(w.clone(), t.clone()).unwrap())
        };
        let err = ratio_bound_probe(&f, &f, &model, 4, &[1e-2], 1);
        assert!(matches!(err, Err(VarietyError::BaseNotOnZeroSet { .. })));
    }
}
