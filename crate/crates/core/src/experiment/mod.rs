//! End-to-end verification of the generalization-error law
//! `E[G_n] = L(w0) + lambda/n`.
//!
//! A run fills an `n x replication` grid of independent cells. Each cell
//! draws data from the truth, samples the posterior by MCMC, estimates the
//! generalization error against the truth on a truncated lattice, and appends
//! one CSV row. Cells are seeded as `mix(seed, n, rep)`, so the whole table
//! is a pure function of the configuration; completed cells found on disk
//! are skipped, making runs resumable.

mod mcmc;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{log_loss, sample, Count, ModelError, TrueModel};
use crate::rlct::{ModelSignature, RlctError};
use crate::rng::mix_seed;

pub use mcmc::{
    effective_sample_size, estimate_generalization, log_predictive_density, posterior_mcmc,
    predictive_density, tempered_posterior_mcmc, CompressedData, PosteriorSamples,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rlct(#[from] RlctError),
    #[error("data set is empty")]
    EmptyData,
    #[error("need n >= {min} observations, got {n}")]
    DataTooSmall { n: usize, min: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("invalid sampler settings: {0}")]
    InvalidSampler(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain} block {block} accepted nothing over a window of {window} proposals; retune proposal scales")]
    ChainStalled {
        chain: usize,
        block: String,
        window: usize,
    },
    #[error("predictive density vanished at lattice point {point:?} carrying true mass {q_mass}")]
    PredictiveUnderflow { point: Vec<u64>, q_mass: f64 },
    #[error("lambda fit needs at least 3 distinct sample sizes, got {found}")]
    TooFewSampleSizes { found: usize },
    #[error("lambda fit needs at least 2 replications per sample size (n = {n} has {found})")]
    TooFewReplications { n: usize, found: usize },
    #[error("degenerate records: zero replication variance at n = {n}")]
    ZeroVariance { n: usize },
    #[error("output file belongs to a different configuration (hash {found}, expected {expected})")]
    ForeignOutputFile { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Prior on mixture parameters: a shared Dirichlet concentration on the
/// weights and an independent Gamma(shape, rate) on every rate coordinate,
/// truncated to a compact support box. Strictly positive on the whole
/// parameter region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub weight_concentration: f64,
    pub rate_shape: f64,
    pub rate_rate: f64,
    pub rate_lo: f64,
    pub rate_hi: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            weight_concentration: 1.0,
            rate_shape: 2.0,
            rate_rate: 1.0,
            rate_lo: 0.05,
            rate_hi: 30.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.weight_concentration > 0.0) {
            return Err(ExperimentError::InvalidPrior(
                "weight concentration must be positive".into(),
            ));
        }
        if !(self.rate_shape > 0.0 && self.rate_rate > 0.0) {
            return Err(ExperimentError::InvalidPrior(
                "rate shape and rate must be positive".into(),
            ));
        }
        if !(self.rate_lo > 0.0 && self.rate_lo < self.rate_hi && self.rate_hi.is_finite()) {
            return Err(ExperimentError::InvalidPrior(
                "support box must satisfy 0 < lo < hi < inf".into(),
            ));
        }
        Ok(())
    }
}

/// Metropolis-within-Gibbs settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub proposal_scale_weights: f64,
    pub proposal_scale_rates: f64,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 6000,
            burn_in: 2000,
            thinning: 4,
            proposal_scale_weights: 0.8,
            proposal_scale_rates: 0.4,
            seed: 20240809,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.chains == 0 || self.iterations == 0 || self.thinning == 0 {
            return Err(ExperimentError::InvalidSampler(
                "chains, iterations and thinning must be at least 1".into(),
            ));
        }
        if self.burn_in >= self.iterations {
            return Err(ExperimentError::InvalidSampler(
                "burn-in must be smaller than the iteration count".into(),
            ));
        }
        if !(self.proposal_scale_weights > 0.0 && self.proposal_scale_rates > 0.0) {
            return Err(ExperimentError::InvalidSampler(
                "proposal scales must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Full description of one simulation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sig: ModelSignature,
    pub truth: TrueModel,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub prior: PriorSpec,
    pub sampler: SamplerSettings,
    pub truncation_tol: f64,
    pub output_path: PathBuf,
    #[serde(default)]
    pub wbic: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.prior.validate()?;
        self.sampler.validate()?;
        if self.n_grid.is_empty() {
            return Err(ExperimentError::InvalidConfig("empty n grid".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::InvalidConfig(
                "n grid must be strictly increasing".into(),
            ));
        }
        if self.replications < 2 {
            return Err(ExperimentError::InvalidConfig(
                "need at least 2 replications".into(),
            ));
        }
        if self.truth.dim() != self.sig.dim() {
            return Err(ExperimentError::InvalidConfig(format!(
                "truth dimension {} does not match signature M = {}",
                self.truth.dim(),
                self.sig.dim()
            )));
        }
        if self.truth.component_count() != self.sig.true_components() {
            return Err(ExperimentError::InvalidConfig(format!(
                "truth has {} components, signature says r = {}",
                self.truth.component_count(),
                self.sig.true_components()
            )));
        }
        if !(self.truncation_tol > 0.0 && self.truncation_tol <= crate::model::MAX_TRUNCATION_TOL)
        {
            return Err(ExperimentError::InvalidConfig(format!(
                "truncation tolerance {} out of range",
                self.truncation_tol
            )));
        }
        Ok(())
    }

    /// Stable hash of everything that determines the table contents (the
    /// output path is excluded).
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "sig": self.sig,
            "truth": self.truth,
            "n_grid": self.n_grid,
            "replications": self.replications,
            "prior": self.prior,
            "sampler": self.sampler,
            "truncation_tol": self.truncation_tol,
            "wbic": self.wbic,
        });
        format!("{:016x}", fnv1a64(key.to_string().as_bytes()))
    }

    /// `L(w0)`: log loss at the exact realizing parameter (the truth padded
    /// with zero-weight components); equals the entropy of the truth.
    pub fn reference_log_loss(&self) -> Result<f64, ExperimentError> {
        let w0 = self.truth.embed(self.sig.model_components())?;
        Ok(log_loss(&w0, &self.truth, self.truncation_tol)?)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One grid cell: the unit of persistence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub r: usize,
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    #[serde(rename = "Gn")]
    pub gn: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
    pub wbic_lambda: Option<f64>,
    pub accept_w: f64,
    pub accept_b: f64,
    pub ess_proxy: f64,
    pub wall_ms: u64,
}

/// A cell that failed; the grid keeps going.
#[derive(Debug, Clone)]
pub struct CellFailure {
    pub n: usize,
    pub rep: usize,
    pub message: String,
}

/// Result of a grid run: all completed records (previous and new) in
/// `(n, rep)` order, plus any failed cells.
#[derive(Debug)]
pub struct RunOutcome {
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<CellFailure>,
}

/// Reads previously written records from a CSV table.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, ExperimentError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Runs the grid described by `cfg`, appending rows as sample sizes finish.
/// Already-completed cells (matching rows on disk) are skipped. Cell
/// failures are collected, not fatal. Grid parallelism uses rayon; the
/// `RLCT_LAB_THREADS` environment variable caps the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let l0 = cfg.reference_log_loss()?;

    let mut done: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut records: Vec<ExperimentRecord> = Vec::new();
    let file_exists = cfg.output_path.exists();
    if file_exists {
        for rec in read_records(&cfg.output_path)? {
            if rec.config_hash != hash {
                return Err(ExperimentError::ForeignOutputFile {
                    expected: hash,
                    found: rec.config_hash,
                });
            }
            done.insert((rec.n, rec.rep));
            records.push(rec);
        }
    }

    let pool = thread_pool()?;
    let mut failures = Vec::new();
    let mut writer: Option<csv::Writer<BufWriter<std::fs::File>>> = None;

    for &n in &cfg.n_grid {
        let pending: Vec<usize> = (0..cfg.replications)
            .filter(|&rep| !done.contains(&(n, rep)))
            .collect();
        if pending.is_empty() {
            continue;
        }
        let results: Vec<Result<ExperimentRecord, CellFailure>> = pool.install(|| {
            pending
                .par_iter()
                .map(|&rep| {
                    run_cell(cfg, &hash, l0, n, rep).map_err(|e| CellFailure {
                        n,
                        rep,
                        message: e.to_string(),
                    })
                })
                .collect()
        });
        let writer = match &mut writer {
            Some(w) => w,
            None => {
                let had_rows = !records.is_empty();
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&cfg.output_path)?;
                writer.insert(
                    csv::WriterBuilder::new()
                        .has_headers(!file_exists || !had_rows)
                        .from_writer(BufWriter::new(file)),
                )
            }
        };
        let mut new_rows: Vec<ExperimentRecord> = Vec::new();
        for res in results {
            match res {
                Ok(rec) => new_rows.push(rec),
                Err(fail) => failures.push(fail),
            }
        }
        new_rows.sort_by_key(|r| r.rep);
        for rec in new_rows {
            writer.serialize(&rec)?;
            records.push(rec);
        }
        writer.flush()?;
    }
    if let Some(mut w) = writer {
        w.flush()?;
        w.into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?
            .flush()?;
    }
    records.sort_by_key(|r| (r.n, r.rep));
    Ok(RunOutcome { records, failures })
}

fn thread_pool() -> Result<rayon::ThreadPool, ExperimentError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(threads) = std::env::var("RLCT_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t > 0)
    {
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
}

fn run_cell(
    cfg: &ExperimentConfig,
    hash: &str,
    l0: f64,
    n: usize,
    rep: usize,
) -> Result<ExperimentRecord, ExperimentError> {
    let start = Instant::now();
    let cell_seed = mix_seed(cfg.sampler.seed, &[n as u64, rep as u64]);
    let data = sample(cfg.truth.params(), n, mix_seed(cell_seed, &[1]));
    let samples = posterior_mcmc(
        &data,
        cfg.sig,
        &cfg.prior,
        &cfg.sampler.with_seed(mix_seed(cell_seed, &[2])),
    )?;
    let gn = estimate_generalization(&samples, &cfg.truth, cfg.truncation_tol)?;
    if !gn.is_finite() {
        return Err(ExperimentError::InvalidConfig(format!(
            "non-finite generalization estimate at n = {n}, rep = {rep}"
        )));
    }
    let wbic = if cfg.wbic {
        Some(wbic_lambda(
            &data,
            cfg.sig,
            &cfg.prior,
            &cfg.sampler.with_seed(mix_seed(cell_seed, &[3])),
        )?)
    } else {
        None
    };
    Ok(ExperimentRecord {
        config_hash: hash.to_string(),
        m: cfg.sig.dim(),
        h: cfg.sig.model_components(),
        r: cfg.sig.true_components(),
        n,
        rep,
        seed: cell_seed,
        gn,
        l0,
        wbic_lambda: wbic,
        accept_w: samples.accept_weights,
        accept_b: samples.accept_rates,
        ess_proxy: samples.ess_proxy,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Tempered-posterior estimate of the learning coefficient at inverse
/// temperature `beta = 1/log n`:
///
/// ```text
/// lambda_hat = ( E^beta[ n L_n(w) ] - n L_n(w_best) ) / log n,
/// ```
///
/// where `n L_n(w)` is the negative log-likelihood of the data and `w_best`
/// is the draw with the smallest one. The free-energy asymptotics
/// `E[F_n] = n L(w0) + lambda log n + o(log n)` make this consistent for
/// `lambda` as `n` grows.
pub fn wbic_lambda(
    data: &[Count],
    sig: ModelSignature,
    prior: &PriorSpec,
    settings: &SamplerSettings,
) -> Result<f64, ExperimentError> {
    let n = data.len();
    if n < 30 {
        return Err(ExperimentError::DataTooSmall { n, min: 30 });
    }
    let log_n = (n as f64).ln();
    let samples = tempered_posterior_mcmc(data, sig, prior, settings, 1.0 / log_n)?;
    let nll: Vec<f64> = samples.loglik.iter().map(|&l| -l).collect();
    let mean = nll.iter().sum::<f64>() / nll.len() as f64;
    let best = nll.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((mean - best) / log_n)
}

/// One aggregated point of the lambda fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitPoint {
    pub n: usize,
    pub inv_n: f64,
    pub mean_dgn: f64,
    pub variance_of_mean: f64,
    pub reps: usize,
}

/// Weighted least-squares fit of `mean(G_n) - L0` against `1/n` through the
/// origin.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaFit {
    pub lambda_hat: f64,
    pub std_error: f64,
    pub points: Vec<FitPoint>,
}

/// Fits the leading `lambda/n` coefficient from experiment records. Points
/// are weighted by the inverse variance of the replication mean; an exact
/// (zero-variance) table falls back to an unweighted fit with zero reported
/// error.
pub fn fit_lambda(records: &[ExperimentRecord]) -> Result<LambdaFit, ExperimentError> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for rec in records {
        groups.entry(rec.n).or_default().push(rec.gn - rec.l0);
    }
    if groups.len() < 3 {
        return Err(ExperimentError::TooFewSampleSizes { found: groups.len() });
    }
    let mut points = Vec::with_capacity(groups.len());
    for (&n, vals) in &groups {
        let reps = vals.len();
        if reps < 2 {
            return Err(ExperimentError::TooFewReplications { n, found: reps });
        }
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps as f64 - 1.0);
        points.push(FitPoint {
            n,
            inv_n: 1.0 / n as f64,
            mean_dgn: mean,
            variance_of_mean: var / reps as f64,
            reps,
        });
    }
    let zero_var: Vec<bool> = points.iter().map(|p| p.variance_of_mean == 0.0).collect();
    if zero_var.iter().any(|&z| z) {
        if !zero_var.iter().all(|&z| z) {
            let n = points[zero_var.iter().position(|&z| z).unwrap()].n;
            return Err(ExperimentError::ZeroVariance { n });
        }
        // Exact table: ordinary least squares through the origin.
        let sxy: f64 = points.iter().map(|p| p.inv_n * p.mean_dgn).sum();
        let sxx: f64 = points.iter().map(|p| p.inv_n * p.inv_n).sum();
        let slope = sxy / sxx;
        let scale: f64 = points
            .iter()
            .map(|p| p.mean_dgn.abs())
            .fold(0.0, f64::max)
            .max(1e-300);
        let rss: f64 = points
            .iter()
            .map(|p| {
                let r = p.mean_dgn - slope * p.inv_n;
                r * r
            })
            .sum();
        if rss > (1e-9 * scale) * (1e-9 * scale) * points.len() as f64 {
            return Err(ExperimentError::ZeroVariance { n: points[0].n });
        }
        return Ok(LambdaFit {
            lambda_hat: slope,
            std_error: 0.0,
            points,
        });
    }
    let mut swxy = 0.0;
    let mut swxx = 0.0;
    for p in &points {
        let w = 1.0 / p.variance_of_mean;
        swxy += w * p.inv_n * p.mean_dgn;
        swxx += w * p.inv_n * p.inv_n;
    }
    Ok(LambdaFit {
        lambda_hat: swxy / swxx,
        std_error: (1.0 / swxx).sqrt(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MixtureParams, RateVector};

    fn record(n: usize, rep: usize, gn: f64, l0: f64) -> ExperimentRecord {
        ExperimentRecord {
            config_hash: "test".into(),
            m: 1,
            h: 2,
            r: 1,
            n,
            rep,
            seed: 0,
            gn,
            l0,
            wbic_lambda: None,
            accept_w: 0.3,
            accept_b: 0.3,
            ess_proxy: 100.0,
            wall_ms: 1,
        }
    }

    #[test]
    fn fit_exact_slope() {
        let l0 = 1.5;
        let mut records = Vec::new();
        for &n in &[100usize, 200, 400, 800] {
            for rep in 0..2 {
                records.push(record(n, rep, l0 + 2.0 / n as f64, l0));
            }
        }
        let fit = fit_lambda(&records).unwrap();
        assert!((fit.lambda_hat - 2.0).abs() < 1e-12);
        assert_eq!(fit.std_error, 0.0);
    }

    #[test]
    fn fit_rejects_single_sample_size() {
        let records: Vec<_> = (0..4).map(|rep| record(100, rep, 1.0, 0.5)).collect();
        assert!(matches!(
            fit_lambda(&records),
            Err(ExperimentError::TooFewSampleSizes { .. })
        ));
    }

    #[test]
    fn fit_rejects_partial_zero_variance() {
        let mut records = vec![
            record(100, 0, 1.0, 0.0),
            record(100, 1, 1.0, 0.0),
            record(200, 0, 0.6, 0.0),
            record(200, 1, 0.4, 0.0),
            record(400, 0, 0.3, 0.0),
            record(400, 1, 0.2, 0.0),
        ];
        assert!(matches!(
            fit_lambda(&records),
            Err(ExperimentError::ZeroVariance { n: 100 })
        ));
        // Inconsistent all-zero-variance table is degenerate too.
        records = vec![
            record(100, 0, 1.0, 0.0),
            record(100, 1, 1.0, 0.0),
            record(200, 0, 0.9, 0.0),
            record(200, 1, 0.9, 0.0),
            record(400, 0, 0.9, 0.0),
            record(400, 1, 0.9, 0.0),
        ];
        assert!(matches!(
            fit_lambda(&records),
            Err(ExperimentError::ZeroVariance { .. })
        ));
    }

    #[test]
    fn fit_recovers_noisy_slope() {
        use rand::Rng;
        use rand_distr::{Distribution, StandardNormal};
        // The fitter itself: inject lambda/n plus i.i.d. noise and check
        // coverage of the 3-sigma band over repeated synthetic tables.
        let lambda = 2.0;
        let mut hits = 0;
        let trials = 100;
        for trial in 0..trials {
            let mut rng = crate::rng::rng_from_seed(800 + trial);
            let mut records = Vec::new();
            for &n in &[100usize, 200, 400, 800] {
                for rep in 0..40 {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let gn = lambda / n as f64 + noise * 0.5 / n as f64;
                    records.push(record(n, rep, gn, 0.0));
                }
            }
            let fit = fit_lambda(&records).unwrap();
            if (fit.lambda_hat - lambda).abs() <= 3.0 * fit.std_error {
                hits += 1;
            }
            let _ = rng.gen::<f64>();
        }
        assert!(hits >= 95, "only {hits}/{trials} inside the 3-sigma band");
    }

    #[test]
    fn config_hash_stable_and_sensitive() {
        let truth = TrueModel::new(
            MixtureParams::new(vec![1.0], vec![RateVector::new(vec![2.0]).unwrap()]).unwrap(),
        )
        .unwrap();
        let cfg = ExperimentConfig {
            sig: ModelSignature::new(1, 2, 1).unwrap(),
            truth,
            n_grid: vec![100, 200, 400],
            replications: 4,
            prior: PriorSpec::default(),
            sampler: SamplerSettings::default(),
            truncation_tol: 1e-8,
            output_path: PathBuf::from("a.csv"),
            wbic: false,
        };
        let h1 = cfg.config_hash();
        let mut cfg2 = cfg.clone();
        cfg2.output_path = PathBuf::from("b.csv");
        assert_eq!(h1, cfg2.config_hash());
        let mut cfg3 = cfg.clone();
        cfg3.replications = 5;
        assert_ne!(h1, cfg3.config_hash());
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let truth = TrueModel::new(
            MixtureParams::new(vec![1.0], vec![RateVector::new(vec![2.0]).unwrap()]).unwrap(),
        )
        .unwrap();
        let good = ExperimentConfig {
            sig: ModelSignature::new(1, 2, 1).unwrap(),
            truth,
            n_grid: vec![100, 200],
            replications: 2,
            prior: PriorSpec::default(),
            sampler: SamplerSettings::default(),
            truncation_tol: 1e-8,
            output_path: PathBuf::from("x.csv"),
            wbic: false,
        };
        assert!(good.validate().is_ok());
        let mut bad = good.clone();
        bad.n_grid = vec![200, 100];
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.replications = 1;
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.truncation_tol = 0.5;
        assert!(bad.validate().is_err());
    }
}
