//! Reusable verification suites: polynomial identities, variety
//! characterization, and bounded-ratio probes.
//!
//! The CLI `verify` subcommand and the acceptance tests both run these, so
//! the checks and their tolerances live in one place. Every suite is a pure
//! function of its seed.

use rand::Rng;
use serde::Serialize;

use crate::model::{kl_mean_error, sq_surrogate, MixtureParams, RateVector, TrueModel};
use crate::rng::{mix_seed, rng_from_seed};
use crate::sympoly::{annihilation_residual, annihilation_scale, f_coeffs, f_coeffs_multi};
use crate::vandermonde::{
    aoyagi_local_split, h_function, ratio_bound_probe, sample_variety_point, variety_membership,
    PartitionSpec, VandermondeInstance,
};

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed value against the check's threshold (residual, ratio
    /// spread growth, ...).
    pub worst: f64,
    pub detail: String,
}

/// Outcome of a whole suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    fn from_checks(suite: &str, checks: Vec<CheckResult>) -> Self {
        Self {
            suite: suite.to_string(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }
}

// ---------------------------------------------------------------------------
// Polynomial identities
// ---------------------------------------------------------------------------

const POLY_INSTANCES: usize = 500;
const POLY_TOL: f64 = 1e-8;

/// 500 random instances each of the annihilation identity, the
/// one-dimensional moment reconstruction, and its multidimensional version
/// (H <= 6, M <= 3, n <= 20, base points in (0, 3]); scaled residuals must
/// stay below 1e-8.
pub fn polynomial_suite(seed: u64) -> SuiteReport {
    let mut rng = rng_from_seed(mix_seed(seed, &[0x901]));
    let mut worst_ann: f64 = 0.0;
    for _ in 0..POLY_INSTANCES {
        let h = 1 + rng.gen_range(0..6);
        let n = h + 1 + rng.gen_range(0..(20 - h).max(1));
        let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..h).map(|_| rng.gen_range(0.001..3.0)).collect();
        let res = annihilation_residual(&a, &b, n).unwrap();
        let scale = annihilation_scale(&a, &b, n).unwrap().max(1e-300);
        worst_ann = worst_ann.max(res.abs() / scale);
    }

    let mut worst_rec: f64 = 0.0;
    for _ in 0..POLY_INSTANCES {
        let h = 1 + rng.gen_range(0..6);
        let n = 1 + rng.gen_range(0..20);
        let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..h).map(|_| rng.gen_range(0.001..3.0)).collect();
        let lhs: f64 = a
            .iter()
            .zip(&b)
            .map(|(&ai, &bi)| ai * bi.powi(n as i32))
            .sum();
        let row = f_coeffs(&b, n).unwrap();
        let mut rhs = 0.0;
        let mut scale = lhs.abs();
        for i in 1..=h {
            let moment: f64 = a
                .iter()
                .zip(&b)
                .map(|(&aj, &bj)| aj * bj.powi(i as i32))
                .sum();
            rhs += row[i - 1] * moment;
            scale += (row[i - 1] * moment).abs();
        }
        worst_rec = worst_rec.max((lhs - rhs).abs() / scale.max(1e-300));
    }

    let mut worst_multi: f64 = 0.0;
    for _ in 0..POLY_INSTANCES {
        let h = 1 + rng.gen_range(0..6);
        let m = 1 + rng.gen_range(0..3);
        let n: Vec<usize> = (0..m).map(|_| 1 + rng.gen_range(0..20)).collect();
        let a: Vec<f64> = (0..h).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let rows: Vec<Vec<f64>> = (0..h)
            .map(|_| (0..m).map(|_| rng.gen_range(0.001..3.0)).collect())
            .collect();
        let columns: Vec<Vec<f64>> = (0..m)
            .map(|j| rows.iter().map(|row| row[j]).collect())
            .collect();
        let lhs: f64 = a
            .iter()
            .zip(&rows)
            .map(|(&ai, row)| {
                ai * row
                    .iter()
                    .zip(&n)
                    .map(|(&b, &nm)| b.powi(nm as i32))
                    .product::<f64>()
            })
            .sum();
        let sparse = f_coeffs_multi(&columns, &n).unwrap();
        let mut rhs = 0.0;
        let mut scale = lhs.abs();
        for (rvec, coeff) in &sparse {
            let moment: f64 = a
                .iter()
                .zip(&rows)
                .map(|(&aj, row)| {
                    aj * row
                        .iter()
                        .zip(rvec)
                        .map(|(&b, &rm)| b.powi(rm as i32))
                        .product::<f64>()
                })
                .sum();
            rhs += coeff * moment;
            scale += (coeff * moment).abs();
        }
        worst_multi = worst_multi.max((lhs - rhs).abs() / scale.max(1e-300));
    }

    let mk = |name: &str, worst: f64| CheckResult {
        name: name.to_string(),
        passed: worst < POLY_TOL,
        worst,
        detail: format!("worst scaled residual {worst:.3e} over {POLY_INSTANCES} instances"),
    };
    SuiteReport::from_checks(
        "polynomials",
        vec![
            mk("annihilation", worst_ann),
            mk("moment-reconstruction", worst_rec),
            mk("moment-reconstruction-multidim", worst_multi),
        ],
    )
}

// ---------------------------------------------------------------------------
// Variety characterization
// ---------------------------------------------------------------------------

const VARIETY_POINTS: usize = 200;
/// Members of the variety must push the singularity function below this.
const H_MEMBER_TOL: f64 = 1e-12;
/// Points perturbed off the variety must push it above this.
const H_OFF_FLOOR: f64 = 1e-10;
const SQ_MEMBER_TOL: f64 = 1e-12;
const SQ_OFF_FLOOR: f64 = 1e-11;
const PERTURBATION: f64 = 1e-3;

fn random_truth(rng: &mut rand_chacha::ChaCha8Rng, r: usize, m: usize) -> TrueModel {
    let weights: Vec<f64> = if r == 1 {
        vec![1.0]
    } else {
        let w0 = rng.gen_range(0.3..0.7);
        vec![w0, 1.0 - w0]
    };
    loop {
        let rates: Vec<RateVector> = (0..r)
            .map(|_| {
                RateVector::new((0..m).map(|_| rng.gen_range(0.5..4.0)).collect()).unwrap()
            })
            .collect();
        let ok = (0..r).all(|i| (0..i).all(|j| rates[i].separation(&rates[j]) >= 0.3));
        if ok {
            if let Ok(t) = TrueModel::new(MixtureParams::new(weights.clone(), rates).unwrap()) {
                return t;
            }
        }
    }
}

fn random_partition(
    rng: &mut rand_chacha::ChaCha8Rng,
    truth: &TrueModel,
    h: usize,
    seed: u64,
) -> PartitionSpec {
    let r = truth.component_count();
    let mut true_sizes = vec![1usize; r];
    let ghosts = if h > r && rng.gen_bool(0.3) { 1usize } else { 0 };
    let mut spare = h - r - ghosts;
    while spare > 0 {
        let j = rng.gen_range(0..r);
        true_sizes[j] += 1;
        spare -= 1;
    }
    if ghosts > 0 {
        PartitionSpec::with_random_ghost_centers(true_sizes, vec![1], truth, 5.0, seed).unwrap()
    } else {
        PartitionSpec::no_ghosts(true_sizes).unwrap()
    }
}

/// Perturbs a variety point off the variety by `eps`: either shift one rate
/// coordinate of a weighted component, or move weight between components
/// sitting on different rate vectors.
fn perturb_off_variety(
    rng: &mut rand_chacha::ChaCha8Rng,
    point: &MixtureParams,
    eps: f64,
) -> MixtureParams {
    let h = point.component_count();
    let m = point.dim();
    let weighted: Vec<usize> = (0..h).filter(|&k| point.weights()[k] > 10.0 * eps).collect();
    let move_weight = h > 1 && rng.gen_bool(0.5);
    if move_weight {
        // Donate eps of weight to a component with a different rate vector.
        let from = weighted[rng.gen_range(0..weighted.len())];
        let candidates: Vec<usize> = (0..h)
            .filter(|&k| point.rates()[k].separation(&point.rates()[from]) > 0.1)
            .collect();
        if let Some(&to) = candidates.first() {
            let mut weights = point.weights().to_vec();
            weights[from] -= eps;
            weights[to] += eps;
            return MixtureParams::new(weights, point.rates().to_vec()).unwrap();
        }
    }
    let k = weighted[rng.gen_range(0..weighted.len())];
    let mm = rng.gen_range(0..m);
    let mut rates: Vec<RateVector> = point.rates().to_vec();
    let mut values = rates[k].values().to_vec();
    values[mm] += eps;
    rates[k] = RateVector::new(values).unwrap();
    MixtureParams::new(point.weights().to_vec(), rates).unwrap()
}

/// 200 parameter points, half constructed on the variety and half perturbed
/// off it by 1e-3: the membership decision must agree with small-value
/// predicates on the singularity function and the squared-difference
/// surrogate in every case.
pub fn variety_suite(seed: u64) -> SuiteReport {
    let mut rng = rng_from_seed(mix_seed(seed, &[0x902]));
    let mut ok = 0usize;
    let mut worst_member_h: f64 = 0.0;
    let mut worst_off_h = f64::INFINITY;
    let mut failures = Vec::new();
    for i in 0..VARIETY_POINTS {
        let m = 1 + rng.gen_range(0..2);
        let r = 1 + rng.gen_range(0..2);
        let h = r + rng.gen_range(0..3);
        let truth = random_truth(&mut rng, r, m);
        let spec = random_partition(&mut rng, &truth, h, mix_seed(seed, &[0x903, i as u64]));
        let on_point = sample_variety_point(&spec, &truth, mix_seed(seed, &[0x904, i as u64]))
            .expect("partition matches truth");
        let off = i % 2 == 1;
        let point = if off {
            perturb_off_variety(&mut rng, &on_point, PERTURBATION)
        } else {
            on_point
        };
        let inst = VandermondeInstance::new(point.clone(), truth.clone()).unwrap();
        let member = variety_membership(&inst, 1e-9).unwrap().member;
        let hv = h_function(&inst);
        let sq = sq_surrogate(&point, &truth, 1e-9).unwrap();
        let agree = if member {
            hv < H_MEMBER_TOL && sq < SQ_MEMBER_TOL && !off
        } else {
            hv > H_OFF_FLOOR && sq > SQ_OFF_FLOOR && off
        };
        if member {
            worst_member_h = worst_member_h.max(hv);
        } else {
            worst_off_h = worst_off_h.min(hv);
        }
        if agree {
            ok += 1;
        } else if failures.len() < 5 {
            failures.push(format!(
                "point {i}: off={off} member={member} H={hv:.3e} sq={sq:.3e}"
            ));
        }
    }
    let passed = ok == VARIETY_POINTS;
    SuiteReport::from_checks(
        "variety",
        vec![CheckResult {
            name: "membership-vs-small-value".into(),
            passed,
            worst: (VARIETY_POINTS - ok) as f64,
            detail: if passed {
                format!(
                    "{ok}/{VARIETY_POINTS} agree; member H <= {worst_member_h:.3e}, off-variety H >= {worst_off_h:.3e}"
                )
            } else {
                format!("{ok}/{VARIETY_POINTS} agree; first failures: {failures:?}")
            },
        }],
    )
}

// ---------------------------------------------------------------------------
// Bounded-ratio probes
// ---------------------------------------------------------------------------

/// Standard probe configuration grid: (M, H, r) triples.
pub const RATIO_CONFIGS: [(usize, usize, usize); 3] = [(1, 3, 1), (1, 3, 2), (2, 2, 1)];
pub const RATIO_SCALES: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
const RATIO_POINTS: usize = 5;
const RATIO_DIRECTIONS: usize = 20;
/// Allowed growth of the ratio interval spread from the largest scale to the
/// smallest.
const SPREAD_GROWTH_LIMIT: f64 = 10.0;

fn probe_truth(m: usize, r: usize) -> TrueModel {
    let rates: Vec<RateVector> = match (m, r) {
        (1, 1) => vec![RateVector::new(vec![2.0]).unwrap()],
        (1, 2) => vec![
            RateVector::new(vec![1.0]).unwrap(),
            RateVector::new(vec![3.0]).unwrap(),
        ],
        (2, 1) => vec![RateVector::new(vec![2.0, 3.0]).unwrap()],
        _ => panic!("unsupported probe configuration"),
    };
    let weights = if r == 1 { vec![1.0] } else { vec![0.4, 0.6] };
    TrueModel::new(MixtureParams::new(weights, rates).unwrap()).unwrap()
}

/// All collapse partitions of `h` components over this truth, cycled to pick
/// variety points for the probes.
fn probe_partitions(truth: &TrueModel, h: usize, seed: u64) -> Vec<PartitionSpec> {
    let r = truth.component_count();
    let mut specs = Vec::new();
    // Ghost-free: distribute the extras over true groups.
    let extras = h - r;
    for lead in 0..=extras {
        let mut true_sizes = vec![1usize; r];
        true_sizes[0] += lead;
        if r > 1 {
            true_sizes[r - 1] += extras - lead;
        } else if lead != extras {
            continue;
        }
        specs.push(PartitionSpec::no_ghosts(true_sizes).unwrap());
    }
    // One ghost group holding one component, when there is room.
    if extras >= 1 {
        let true_sizes = {
            let mut s = vec![1usize; r];
            s[0] += extras - 1;
            s
        };
        specs.push(
            PartitionSpec::with_random_ghost_centers(true_sizes, vec![1], truth, 5.0, seed)
                .unwrap(),
        );
    }
    specs
}

/// Ratio probes for the standard configurations: the mean error function
/// against the singularity function, and the singularity function against the
/// sum of its per-group decomposition. Each probe's ratio interval must stay
/// finite with spread growth below 10x across the scale ladder.
pub fn ratio_suite(seed: u64) -> SuiteReport {
    let mut checks = Vec::new();
    for (ci, &(m, h, r)) in RATIO_CONFIGS.iter().enumerate() {
        let truth = probe_truth(m, r);
        let specs = probe_partitions(&truth, h, mix_seed(seed, &[0x905, ci as u64]));
        let mut worst_growth_kh: f64 = 0.0;
        let mut worst_growth_split: f64 = 0.0;
        let mut interval_kh = (f64::INFINITY, 0.0f64);
        let mut interval_split = (f64::INFINITY, 0.0f64);
        let mut finite = true;
        for p in 0..RATIO_POINTS {
            let spec = &specs[p % specs.len()];
            let point = sample_variety_point(
                spec,
                &truth,
                mix_seed(seed, &[0x906, ci as u64, p as u64]),
            )
            .unwrap();
            let t1 = truth.clone();
            let kl = move |w: &MixtureParams| kl_mean_error(w, &t1, 1e-12).unwrap();
            let t2 = truth.clone();
            let hfun = move |w: &MixtureParams| {
                h_function(&VandermondeInstance::new(w.clone(), t2.clone()).unwrap())
            };
            let report_kh = ratio_bound_probe(
                &kl,
                &hfun,
                &point,
                RATIO_DIRECTIONS,
                &RATIO_SCALES,
                mix_seed(seed, &[0x907, ci as u64, p as u64]),
            )
            .unwrap();
            let t3 = truth.clone();
            let spec_c = spec.clone();
            let split_sum = move |w: &MixtureParams| {
                let inst = VandermondeInstance::new(w.clone(), t3.clone()).unwrap();
                aoyagi_local_split(&inst, &spec_c).unwrap().iter().sum::<f64>()
            };
            let report_split = ratio_bound_probe(
                &hfun,
                &split_sum,
                &point,
                RATIO_DIRECTIONS,
                &RATIO_SCALES,
                mix_seed(seed, &[0x908, ci as u64, p as u64]),
            )
            .unwrap();
            for report in [&report_kh, &report_split] {
                if !(report.overall_min.is_finite()
                    && report.overall_max.is_finite()
                    && report.overall_min > 0.0)
                {
                    finite = false;
                }
            }
            worst_growth_kh = worst_growth_kh.max(report_kh.spread_growth());
            worst_growth_split = worst_growth_split.max(report_split.spread_growth());
            interval_kh = (
                interval_kh.0.min(report_kh.overall_min),
                interval_kh.1.max(report_kh.overall_max),
            );
            interval_split = (
                interval_split.0.min(report_split.overall_min),
                interval_split.1.max(report_split.overall_max),
            );
        }
        checks.push(CheckResult {
            name: format!("mean-error-vs-singularity M={m} H={h} r={r}"),
            passed: finite && worst_growth_kh < SPREAD_GROWTH_LIMIT,
            worst: worst_growth_kh,
            detail: format!(
                "ratio in [{:.3e}, {:.3e}], spread growth {:.2}",
                interval_kh.0, interval_kh.1, worst_growth_kh
            ),
        });
        checks.push(CheckResult {
            name: format!("singularity-vs-group-split M={m} H={h} r={r}"),
            passed: finite && worst_growth_split < SPREAD_GROWTH_LIMIT,
            worst: worst_growth_split,
            detail: format!(
                "ratio in [{:.3e}, {:.3e}], spread growth {:.2}",
                interval_split.0, interval_split.1, worst_growth_split
            ),
        });
    }
    SuiteReport::from_checks("ratio", checks)
}

/// Runs all suites.
pub fn all_suites(seed: u64) -> Vec<SuiteReport> {
    vec![polynomial_suite(seed), variety_suite(seed), ratio_suite(seed)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_suite_passes() {
        let report = polynomial_suite(0);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn suites_are_deterministic() {
        let a = polynomial_suite(123);
        let b = polynomial_suite(123);
        assert_eq!(a.checks[0].worst, b.checks[0].worst);
    }
}
