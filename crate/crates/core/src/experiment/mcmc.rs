//! Random-walk Metropolis-within-Gibbs for Poisson-mixture posteriors.
//!
//! The sampler works on transformed coordinates: weights through a softmax
//! with the last component pinned (Jacobian `prod_k a_k`), rates through logs
//! (Jacobian `b`). One block proposes all weight coordinates jointly, one
//! block per component proposes its log-rates. Proposal scales are tuned
//! during burn-in towards 20-40% acceptance and frozen afterwards.
//!
//! Data enter through their sufficient summary for repeated counts: the
//! distinct observed vectors with multiplicities. Log-likelihood terms
//! independent of the parameters (the `ln x!` parts) are kept separately so
//! Metropolis ratios avoid them.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma as GammaDist, StandardNormal};

use crate::model::{
    ln_factorial, mixture_log_pmf_at, truth_truncation_box, Count, MixtureParams, RateVector,
    TrueModel,
};
use crate::rlct::ModelSignature;
use crate::rng::{mix_seed, rng_from_seed};

use super::{ExperimentError, PriorSpec, SamplerSettings};

/// Distinct observed count vectors with multiplicities.
#[derive(Debug, Clone)]
pub struct CompressedData {
    values: Vec<Vec<u64>>,
    multiplicities: Vec<f64>,
    n: usize,
    /// `sum_i sum_m ln(x_im!)`, the parameter-free part of the log-likelihood.
    ln_fact_sum: f64,
}

impl CompressedData {
    pub fn from_counts(data: &[Count]) -> Result<Self, ExperimentError> {
        if data.is_empty() {
            return Err(ExperimentError::EmptyData);
        }
        let mut table: BTreeMap<Vec<u64>, u64> = BTreeMap::new();
        for c in data {
            *table.entry(c.values().to_vec()).or_insert(0) += 1;
        }
        let mut values = Vec::with_capacity(table.len());
        let mut multiplicities = Vec::with_capacity(table.len());
        let mut ln_fact_sum = 0.0;
        for (v, count) in table {
            ln_fact_sum += count as f64 * v.iter().map(|&x| ln_factorial(x)).sum::<f64>();
            values.push(v);
            multiplicities.push(count as f64);
        }
        Ok(Self {
            values,
            multiplicities,
            n: data.len(),
            ln_fact_sum,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    pub fn distinct(&self) -> usize {
        self.values.len()
    }
}

/// Posterior draws plus sampler diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub draws: Vec<MixtureParams>,
    /// Full log-likelihood (including `ln x!` terms) of each kept draw.
    pub loglik: Vec<f64>,
    /// Acceptance rate of the weight block after burn-in (NaN when `H = 1`).
    pub accept_weights: f64,
    /// Mean acceptance rate of the rate blocks after burn-in.
    pub accept_rates: f64,
    /// Autocorrelation-adjusted effective sample size of the log-likelihood
    /// trace, summed over chains.
    pub ess_proxy: f64,
}

struct ChainState {
    /// Softmax coordinates for components `0..H-1`; empty when `H = 1`.
    y: Vec<f64>,
    /// Log-rates, component-major (`H x M`).
    u: Vec<f64>,
    weights: Vec<f64>,
    rates: Vec<f64>,
    /// Per-component Poisson part `sum_m (x_m ln b_km - b_km)` per distinct value.
    pois: Vec<Vec<f64>>,
    log_post: f64,
}

struct Target<'a> {
    data: &'a CompressedData,
    prior: &'a PriorSpec,
    beta: f64,
    h: usize,
    m: usize,
}

impl<'a> Target<'a> {
    fn weights_from_y(&self, y: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = y.to_vec();
        z.push(0.0);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut e: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= s);
        e
    }

    fn pois_row(&self, rates: &[f64], k: usize, out: &mut Vec<f64>) {
        out.clear();
        let ln_b: Vec<f64> = (0..self.m).map(|mm| rates[k * self.m + mm].ln()).collect();
        let b_sum: f64 = (0..self.m).map(|mm| rates[k * self.m + mm]).sum();
        for v in &self.data.values {
            let mut t = -b_sum;
            for (mm, &x) in v.iter().enumerate() {
                t += x as f64 * ln_b[mm];
            }
            out.push(t);
        }
    }

    /// Unnormalized log-likelihood (no `ln x!` terms) from cached rows.
    fn loglik_unnorm(&self, weights: &[f64], pois: &[Vec<f64>]) -> f64 {
        let ln_w: Vec<f64> = weights
            .iter()
            .map(|&a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY })
            .collect();
        let mut total = 0.0;
        for (vi, &mult) in self.data.multiplicities.iter().enumerate() {
            let mut max = f64::NEG_INFINITY;
            for k in 0..self.h {
                let t = ln_w[k] + pois[k][vi];
                if t > max {
                    max = t;
                }
            }
            let mut s = 0.0;
            for k in 0..self.h {
                s += (ln_w[k] + pois[k][vi] - max).exp();
            }
            total += mult * (max + s.ln());
        }
        total
    }

    fn log_prior_weights(&self, weights: &[f64]) -> f64 {
        // Dirichlet(alpha) density plus the softmax Jacobian prod_k a_k.
        let alpha = self.prior.weight_concentration;
        weights.iter().map(|&a| alpha * a.ln()).sum()
    }

    fn log_prior_rates(&self, u: &[f64], rates: &[f64]) -> f64 {
        // Gamma(shape, rate) density on b plus the log Jacobian b = e^u,
        // truncated to the support box.
        let mut acc = 0.0;
        for (&ui, &b) in u.iter().zip(rates) {
            if b < self.prior.rate_lo || b > self.prior.rate_hi {
                return f64::NEG_INFINITY;
            }
            acc += self.prior.rate_shape * ui - self.prior.rate_rate * b;
        }
        acc
    }

    fn log_post(&self, weights: &[f64], u: &[f64], rates: &[f64], pois: &[Vec<f64>]) -> f64 {
        let pr = self.log_prior_rates(u, rates);
        if pr == f64::NEG_INFINITY {
            return pr;
        }
        let pw = if self.h > 1 {
            self.log_prior_weights(weights)
        } else {
            0.0
        };
        self.beta * self.loglik_unnorm(weights, pois) + pw + pr
    }
}

/// Samples the (optionally tempered) posterior. `beta` is the likelihood
/// inverse temperature; `beta = 1` is the ordinary posterior.
pub fn tempered_posterior_mcmc(
    data: &[Count],
    sig: ModelSignature,
    prior: &PriorSpec,
    settings: &SamplerSettings,
    beta: f64,
) -> Result<PosteriorSamples, ExperimentError> {
    prior.validate()?;
    settings.validate()?;
    let compressed = CompressedData::from_counts(data)?;
    let h = sig.model_components();
    let m = sig.dim();
    for c in data {
        if c.dim() != m {
            return Err(ExperimentError::InvalidConfig(format!(
                "observation dimension {} does not match signature M = {}",
                c.dim(),
                m
            )));
        }
    }
    let target = Target {
        data: &compressed,
        prior,
        beta,
        h,
        m,
    };

    let mut draws = Vec::new();
    let mut loglik = Vec::new();
    let mut acc_w_num = 0.0;
    let mut acc_w_den = 0.0;
    let mut acc_b_num = 0.0;
    let mut acc_b_den = 0.0;
    let mut ess_total = 0.0;

    for chain in 0..settings.chains {
        let mut rng = rng_from_seed(mix_seed(settings.seed, &[0x5ca1e, chain as u64]));
        let mut state = init_state(&target, prior, &mut rng)?;
        let mut scale_w = settings.proposal_scale_weights;
        let mut scale_b = vec![settings.proposal_scale_rates; h];
        // Tuning windows during burn-in.
        let mut win_w = (0usize, 0usize);
        let mut win_b = vec![(0usize, 0usize); h];
        // Stall window after burn-in.
        const STALL_WINDOW: usize = 500;
        let mut stall_w = (0usize, 0usize);
        let mut stall_b = vec![(0usize, 0usize); h];
        let mut chain_loglik = Vec::new();

        for it in 0..settings.iterations {
            let tuning = it < settings.burn_in;
            if h > 1 {
                let accepted = propose_weights(&target, &mut state, scale_w, &mut rng);
                if tuning {
                    win_w.0 += 1;
                    win_w.1 += accepted as usize;
                    if win_w.0 == 50 {
                        scale_w = retune(scale_w, win_w.1 as f64 / 50.0);
                        win_w = (0, 0);
                    }
                } else {
                    acc_w_den += 1.0;
                    acc_w_num += accepted as usize as f64;
                    stall_w.0 += 1;
                    stall_w.1 += accepted as usize;
                    if stall_w.0 == STALL_WINDOW {
                        if stall_w.1 == 0 {
                            return Err(ExperimentError::ChainStalled {
                                chain,
                                block: "weights".into(),
                                window: STALL_WINDOW,
                            });
                        }
                        stall_w = (0, 0);
                    }
                }
            }
            for k in 0..h {
                let accepted = propose_rates(&target, &mut state, k, scale_b[k], &mut rng);
                if tuning {
                    win_b[k].0 += 1;
                    win_b[k].1 += accepted as usize;
                    if win_b[k].0 == 50 {
                        scale_b[k] = retune(scale_b[k], win_b[k].1 as f64 / 50.0);
                        win_b[k] = (0, 0);
                    }
                } else {
                    acc_b_den += 1.0;
                    acc_b_num += accepted as usize as f64;
                    stall_b[k].0 += 1;
                    stall_b[k].1 += accepted as usize;
                    if stall_b[k].0 == STALL_WINDOW {
                        if stall_b[k].1 == 0 {
                            return Err(ExperimentError::ChainStalled {
                                chain,
                                block: format!("rates[{k}]"),
                                window: STALL_WINDOW,
                            });
                        }
                        stall_b[k] = (0, 0);
                    }
                }
            }
            if it >= settings.burn_in && (it - settings.burn_in) % settings.thinning == 0 {
                let params = state_to_params(&state, h, m);
                let ll = target.loglik_unnorm(&state.weights, &state.pois) - compressed.ln_fact_sum;
                chain_loglik.push(ll);
                loglik.push(ll);
                draws.push(params);
            }
        }
        ess_total += effective_sample_size(&chain_loglik);
    }

    Ok(PosteriorSamples {
        draws,
        loglik,
        accept_weights: if h > 1 { acc_w_num / acc_w_den } else { f64::NAN },
        accept_rates: acc_b_num / acc_b_den,
        ess_proxy: ess_total,
    })
}

/// Samples the ordinary posterior (`beta = 1`).
pub fn posterior_mcmc(
    data: &[Count],
    sig: ModelSignature,
    prior: &PriorSpec,
    settings: &SamplerSettings,
) -> Result<PosteriorSamples, ExperimentError> {
    tempered_posterior_mcmc(data, sig, prior, settings, 1.0)
}

fn std_normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Small-step component of the proposal mixture. Scales are tuned during
/// burn-in and then frozen; if the chain later crosses into a much tighter
/// region of the posterior (a component's weight leaving zero, say), a frozen
/// wide scale would reject everything. One proposal in ten therefore takes a
/// small fixed step, which keeps a positive acceptance floor in any regime.
/// The mixture of symmetric kernels stays symmetric.
const FLOOR_SCALE: f64 = 0.05;
const FLOOR_PROB: f64 = 0.1;

fn mixed_scale(scale: f64, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    if rng.gen::<f64>() < FLOOR_PROB {
        FLOOR_SCALE.min(scale)
    } else {
        scale
    }
}

fn retune(scale: f64, acc: f64) -> f64 {
    let next = if acc < 0.20 {
        scale * 0.7
    } else if acc > 0.40 {
        scale * 1.4
    } else {
        scale
    };
    next.clamp(1e-3, 2.0)
}

fn init_state(
    target: &Target,
    prior: &PriorSpec,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ChainState, ExperimentError> {
    let h = target.h;
    let m = target.m;
    // Weights from Dirichlet(alpha) via normalized Gamma draws.
    let gamma_w = GammaDist::new(prior.weight_concentration, 1.0)
        .map_err(|e| ExperimentError::InvalidPrior(e.to_string()))?;
    let raw: Vec<f64> = (0..h).map(|_| gamma_w.sample(rng).max(1e-12)).collect();
    let s: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|v| v / s).collect();
    let y: Vec<f64> = if h > 1 {
        (0..h - 1)
            .map(|k| (weights[k] / weights[h - 1]).ln())
            .collect()
    } else {
        Vec::new()
    };
    // Rates from the truncated Gamma prior; rejection with a midpoint fallback.
    let gamma_b = GammaDist::new(prior.rate_shape, 1.0 / prior.rate_rate)
        .map_err(|e| ExperimentError::InvalidPrior(e.to_string()))?;
    let mut rates = Vec::with_capacity(h * m);
    for _ in 0..h * m {
        let mut b = (prior.rate_lo * prior.rate_hi).sqrt();
        for _ in 0..100 {
            let cand = gamma_b.sample(rng);
            if cand >= prior.rate_lo && cand <= prior.rate_hi {
                b = cand;
                break;
            }
        }
        rates.push(b);
    }
    let u: Vec<f64> = rates.iter().map(|&b| b.ln()).collect();
    let mut pois = vec![Vec::new(); h];
    for k in 0..h {
        let mut row = Vec::new();
        target.pois_row(&rates, k, &mut row);
        pois[k] = row;
    }
    let log_post = target.log_post(&weights, &u, &rates, &pois);
    Ok(ChainState {
        y,
        u,
        weights,
        rates,
        pois,
        log_post,
    })
}

fn propose_weights(
    target: &Target,
    state: &mut ChainState,
    scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> bool {
    let scale = mixed_scale(scale, rng);
    let y_new: Vec<f64> = state
        .y
        .iter()
        .map(|&y| y + scale * std_normal(rng))
        .collect();
    let w_new = target.weights_from_y(&y_new);
    let lp_new = target.log_post(&w_new, &state.u, &state.rates, &state.pois);
    let log_u: f64 = rng.gen::<f64>().ln();
    if lp_new - state.log_post > log_u {
        state.y = y_new;
        state.weights = w_new;
        state.log_post = lp_new;
        true
    } else {
        false
    }
}

fn propose_rates(
    target: &Target,
    state: &mut ChainState,
    k: usize,
    scale: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> bool {
    let m = target.m;
    let scale = mixed_scale(scale, rng);
    let mut u_new = state.u.clone();
    for mm in 0..m {
        u_new[k * m + mm] += scale * std_normal(rng);
    }
    let mut rates_new = state.rates.clone();
    for mm in 0..m {
        rates_new[k * m + mm] = u_new[k * m + mm].exp();
    }
    let mut pois_k = Vec::new();
    target.pois_row(&rates_new, k, &mut pois_k);
    let mut pois_new = state.pois.clone();
    pois_new[k] = pois_k;
    let lp_new = target.log_post(&state.weights, &u_new, &rates_new, &pois_new);
    let log_u: f64 = rng.gen::<f64>().ln();
    if lp_new - state.log_post > log_u {
        state.u = u_new;
        state.rates = rates_new;
        state.pois = pois_new;
        state.log_post = lp_new;
        true
    } else {
        false
    }
}

fn state_to_params(state: &ChainState, h: usize, m: usize) -> MixtureParams {
    let weights = if h > 1 {
        // Renormalize: the softmax is exact up to rounding.
        let s: f64 = state.weights.iter().sum();
        state.weights.iter().map(|&w| w / s).collect()
    } else {
        vec![1.0]
    };
    let rates: Vec<RateVector> = (0..h)
        .map(|k| {
            RateVector::new(state.rates[k * m..(k + 1) * m].to_vec())
                .expect("rates stay positive inside the support box")
        })
        .collect();
    MixtureParams::new(weights, rates).expect("sampler state is a valid parameter")
}

/// Autocorrelation-adjusted effective sample size of a scalar trace:
/// `len / (1 + 2 sum rho_k)`, summing autocorrelations until they drop below
/// 0.05 (or lag 200).
pub fn effective_sample_size(trace: &[f64]) -> f64 {
    let n = trace.len();
    if n < 4 {
        return n as f64;
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let var: f64 = trace.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return n as f64;
    }
    let mut rho_sum = 0.0;
    for lag in 1..=(n / 2).min(200) {
        let mut c = 0.0;
        for i in 0..n - lag {
            c += (trace[i] - mean) * (trace[i + lag] - mean);
        }
        let rho = c / (n as f64 * var);
        if rho < 0.05 {
            break;
        }
        rho_sum += rho;
    }
    n as f64 / (1.0 + 2.0 * rho_sum)
}

// ---------------------------------------------------------------------------
// Predictive distribution and generalization error
// ---------------------------------------------------------------------------

/// Precomputed per-draw quantities for fast predictive evaluation.
struct PredictiveEvaluator {
    /// Per draw and component: `ln a_k` (NEG_INFINITY for zero weight).
    ln_w: Vec<Vec<f64>>,
    /// Per draw and component: `ln b_km` and the rate sum.
    ln_b: Vec<Vec<f64>>,
    b_sum: Vec<Vec<f64>>,
    m: usize,
}

impl PredictiveEvaluator {
    fn new(draws: &[MixtureParams]) -> Self {
        let m = draws[0].dim();
        let mut ln_w = Vec::with_capacity(draws.len());
        let mut ln_b = Vec::with_capacity(draws.len());
        let mut b_sum = Vec::with_capacity(draws.len());
        for d in draws {
            ln_w.push(
                d.weights()
                    .iter()
                    .map(|&a| if a > 0.0 { a.ln() } else { f64::NEG_INFINITY })
                    .collect(),
            );
            let mut lb = Vec::with_capacity(d.component_count() * m);
            let mut bs = Vec::with_capacity(d.component_count());
            for r in d.rates() {
                bs.push(r.values().iter().sum());
                for &b in r.values() {
                    lb.push(b.ln());
                }
            }
            ln_b.push(lb);
            b_sum.push(bs);
        }
        Self {
            ln_w,
            ln_b,
            b_sum,
            m,
        }
    }

    /// `ln p(x | w_s)` for draw `s` (without the `ln x!` terms).
    fn log_pmf_unnorm(&self, s: usize, x: &[u64]) -> f64 {
        let h = self.ln_w[s].len();
        let mut max = f64::NEG_INFINITY;
        let mut vals = Vec::with_capacity(h);
        for k in 0..h {
            let mut t = self.ln_w[s][k] - self.b_sum[s][k];
            for (mm, &xm) in x.iter().enumerate() {
                t += xm as f64 * self.ln_b[s][k * self.m + mm];
            }
            if t > max {
                max = t;
            }
            vals.push(t);
        }
        if !max.is_finite() {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = vals.iter().map(|&t| (t - max).exp()).sum();
        max + sum.ln()
    }
}

/// Log of the Bayesian predictive density at `x`: the log of the Monte Carlo
/// average of `p(x|w)` over posterior draws.
pub fn log_predictive_density(samples: &PosteriorSamples, x: &Count) -> f64 {
    assert!(!samples.draws.is_empty(), "empty posterior sample set");
    let terms: Vec<f64> = samples
        .draws
        .iter()
        .map(|w| mixture_log_pmf_at(x.values(), w))
        .collect();
    crate::model::log_sum_exp(&terms) - (terms.len() as f64).ln()
}

/// Bayesian predictive density at `x`.
pub fn predictive_density(samples: &PosteriorSamples, x: &Count) -> f64 {
    log_predictive_density(samples, x).exp()
}

/// Generalization error estimate: `-sum_x q(x) log E_w[p(x|w)]` over the
/// truth-truncated lattice. Fails if the predictive vanishes at a point
/// carrying more than `tol` of true mass.
pub fn estimate_generalization(
    samples: &PosteriorSamples,
    truth: &TrueModel,
    tol: f64,
) -> Result<f64, ExperimentError> {
    if samples.draws.is_empty() {
        return Err(ExperimentError::EmptyData);
    }
    let lattice = truth_truncation_box(truth, tol)?;
    let eval = PredictiveEvaluator::new(&samples.draws);
    let s_count = samples.draws.len();
    let ln_s = (s_count as f64).ln();
    let mut gn = 0.0;
    let mut failure: Option<ExperimentError> = None;
    let mut terms = vec![0.0f64; s_count];
    lattice.bx.for_each(|x| {
        if failure.is_some() {
            return;
        }
        let q = mixture_log_pmf_at(x, truth.params()).exp();
        let mut max = f64::NEG_INFINITY;
        for s in 0..s_count {
            let t = eval.log_pmf_unnorm(s, x);
            terms[s] = t;
            if t > max {
                max = t;
            }
        }
        let ln_fact: f64 = x.iter().map(|&xm| ln_factorial(xm)).sum();
        if !max.is_finite() {
            if q > tol {
                failure = Some(ExperimentError::PredictiveUnderflow {
                    point: x.to_vec(),
                    q_mass: q,
                });
            }
            return;
        }
        let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
        let log_pred = max + sum.ln() - ln_s - ln_fact;
        gn -= q * log_pred;
    });
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(gn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample, MixtureParams, RateVector, TrueModel};
    use crate::rlct::ModelSignature;

    fn settings(seed: u64) -> SamplerSettings {
        SamplerSettings {
            chains: 2,
            iterations: 3000,
            burn_in: 1000,
            thinning: 4,
            proposal_scale_weights: 0.8,
            proposal_scale_rates: 0.4,
            seed,
        }
    }

    fn truth_po(b: f64) -> TrueModel {
        TrueModel::new(
            MixtureParams::new(vec![1.0], vec![RateVector::new(vec![b]).unwrap()]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn compression_preserves_counts() {
        let truth = truth_po(2.0);
        let data = sample(truth.params(), 500, 3);
        let c = CompressedData::from_counts(&data).unwrap();
        assert_eq!(c.sample_size(), 500);
        assert!(c.distinct() < 20);
        let total: f64 = c.multiplicities.iter().sum();
        assert_eq!(total, 500.0);
    }

    #[test]
    fn empty_data_rejected() {
        assert!(matches!(
            CompressedData::from_counts(&[]),
            Err(ExperimentError::EmptyData)
        ));
    }

    #[test]
    fn mcmc_is_deterministic_given_seed() {
        let truth = truth_po(2.0);
        let data = sample(truth.params(), 120, 5);
        let sig = ModelSignature::new(1, 2, 1).unwrap();
        let prior = PriorSpec::default();
        let a = posterior_mcmc(&data, sig, &prior, &settings(11)).unwrap();
        let b = posterior_mcmc(&data, sig, &prior, &settings(11)).unwrap();
        assert_eq!(a.draws.len(), b.draws.len());
        assert_eq!(a.loglik, b.loglik);
        let c = posterior_mcmc(&data, sig, &prior, &settings(12)).unwrap();
        assert_ne!(a.loglik, c.loglik);
    }

    #[test]
    fn mcmc_draw_count_contract() {
        let truth = truth_po(2.0);
        let data = sample(truth.params(), 80, 5);
        let sig = ModelSignature::new(1, 2, 1).unwrap();
        let s = settings(1);
        let out = posterior_mcmc(&data, sig, &PriorSpec::default(), &s).unwrap();
        let min_draws = (s.iterations - s.burn_in) / s.thinning * s.chains;
        assert!(out.draws.len() >= min_draws);
        assert!(out.accept_rates > 0.05 && out.accept_rates < 0.9);
    }

    #[test]
    fn conjugate_posterior_mean_single_component() {
        // H=1, M=1: posterior of b is Gamma(shape + sum x, rate + n).
        let truth = truth_po(2.0);
        let n = 200;
        let data = sample(truth.params(), n, 42);
        let sig = ModelSignature::new(1, 1, 1).unwrap();
        let prior = PriorSpec::default();
        let out = posterior_mcmc(&data, sig, &prior, &settings(7)).unwrap();
        let sum_x: u64 = data.iter().map(|c| c.values()[0]).sum();
        let expect = (prior.rate_shape + sum_x as f64) / (prior.rate_rate + n as f64);
        let bs: Vec<f64> = out.draws.iter().map(|w| w.rates()[0].values()[0]).collect();
        let mean = bs.iter().sum::<f64>() / bs.len() as f64;
        let sd = (bs.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / bs.len() as f64)
            .sqrt();
        let ess = effective_sample_size(&bs).max(4.0);
        let mcse = sd / ess.sqrt();
        assert!(
            (mean - expect).abs() < 3.0 * mcse,
            "mean {mean} vs conjugate {expect} (mcse {mcse})"
        );
    }

    #[test]
    fn predictive_single_draw_equals_pmf() {
        let params = MixtureParams::new(
            vec![0.5, 0.5],
            vec![
                RateVector::new(vec![1.0]).unwrap(),
                RateVector::new(vec![2.5]).unwrap(),
            ],
        )
        .unwrap();
        let samples = PosteriorSamples {
            draws: vec![params.clone()],
            loglik: vec![0.0],
            accept_weights: 0.3,
            accept_rates: 0.3,
            ess_proxy: 1.0,
        };
        let x = Count::new(vec![2]);
        let direct = crate::model::mixture_log_pmf(&x, &params).exp();
        assert!((predictive_density(&samples, &x) - direct).abs() < 1e-14);
    }

    #[test]
    fn predictive_between_extremes() {
        let p1 = MixtureParams::new(vec![1.0], vec![RateVector::new(vec![1.0]).unwrap()]).unwrap();
        let p2 = MixtureParams::new(vec![1.0], vec![RateVector::new(vec![4.0]).unwrap()]).unwrap();
        let samples = PosteriorSamples {
            draws: vec![p1.clone(), p2.clone()],
            loglik: vec![0.0, 0.0],
            accept_weights: 0.3,
            accept_rates: 0.3,
            ess_proxy: 2.0,
        };
        for x in 0..8 {
            let c = Count::new(vec![x]);
            let v1 = crate::model::mixture_log_pmf(&c, &p1).exp();
            let v2 = crate::model::mixture_log_pmf(&c, &p2).exp();
            let pred = predictive_density(&samples, &c);
            assert!(pred >= v1.min(v2) - 1e-15 && pred <= v1.max(v2) + 1e-15);
        }
    }

    #[test]
    fn degenerate_samples_recover_log_loss() {
        let truth = truth_po(2.0);
        let w0 = truth.embed(2).unwrap();
        let samples = PosteriorSamples {
            draws: vec![w0.clone(); 5],
            loglik: vec![0.0; 5],
            accept_weights: 0.3,
            accept_rates: 0.3,
            ess_proxy: 5.0,
        };
        let gn = estimate_generalization(&samples, &truth, 1e-9).unwrap();
        let l0 = crate::model::log_loss(&w0, &truth, 1e-9).unwrap();
        assert!((gn - l0).abs() < 1e-6, "gn {gn} vs l0 {l0}");
    }

    #[test]
    fn ess_of_iid_trace_near_length() {
        let mut rng = crate::rng::rng_from_seed(4);
        let trace: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let ess = effective_sample_size(&trace);
        assert!(ess > 1000.0, "ess {ess}");
        let constant = vec![1.0; 100];
        assert_eq!(effective_sample_size(&constant), 100.0);
    }
}
