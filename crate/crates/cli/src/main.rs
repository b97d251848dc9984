//! Command-line front end: exact learning coefficients, partition tables,
//! verification suites, variety-point certificates, simulation grids, and
//! lambda fits. Every subcommand prints a single JSON document on stdout.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error, 3 enumeration budget exceeded, 4 simulation finished with failed
//! cells. `RLCT_LAB_THREADS` caps grid parallelism.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rlct_lab::checks;
use rlct_lab::experiment::{
    fit_lambda, read_records, run_experiment, ExperimentConfig, ExperimentError,
};
use rlct_lab::rlct::{
    enumerate_partitions, regular_reference, rlct_closed_form, rlct_enumerate, ModelSignature,
    RlctError, RlctValue,
};
use rlct_lab::vandermonde::{
    h_function, sample_variety_point, variety_membership, PartitionSpec, VandermondeInstance,
};
use rlct_lab::{kl_mean_error, sq_surrogate, MixtureParams, RateVector, TrueModel};

#[derive(Parser)]
#[command(
    name = "rlct-lab",
    version,
    about = "Learning coefficients of Poisson mixtures: exact values, identity suites, and Bayesian simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print progress notes to stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form learning coefficient for a (M, H, r) signature.
    Rlct {
        /// Data dimension.
        #[arg(long = "M")]
        m: usize,
        /// Model components.
        #[arg(long = "H")]
        h: usize,
        /// True components.
        #[arg(long)]
        r: usize,
    },
    /// All collapse partitions with their local coefficients; the minimum
    /// must equal the closed form.
    Enumerate {
        #[arg(long = "M")]
        m: usize,
        #[arg(long = "H")]
        h: usize,
        #[arg(long)]
        r: usize,
    },
    /// Run verification suites (polynomial identities, variety
    /// characterization, bounded-ratio probes).
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Construct a variety point for a collapse partition and report its
    /// membership certificate and divergence values.
    Variety {
        #[arg(long = "M")]
        m: usize,
        #[arg(long = "H")]
        h: usize,
        #[arg(long)]
        r: usize,
        /// Comma-separated sizes of the true groups (default: all extras on
        /// the first group).
        #[arg(long)]
        sizes: Option<String>,
        /// Comma-separated sizes of ghost groups.
        #[arg(long)]
        ghost_sizes: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a simulation grid described by a JSON configuration file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Override the configured base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the leading lambda/n coefficient from a results table and emit
    /// plot data.
    Fit {
        #[arg(long)]
        csv: PathBuf,
        /// Write (1/n, mean dGn) pairs to this CSV (fitted line parameters go
        /// to the same path with extension .fit.json).
        #[arg(long)]
        plot_out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Suite {
    Polynomials,
    Variety,
    Ratio,
    All,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Rlct { m, h, r } => cmd_rlct(m, h, r),
        Command::Enumerate { m, h, r } => cmd_enumerate(m, h, r),
        Command::Verify { suite, seed } => cmd_verify(suite, seed),
        Command::Variety {
            m,
            h,
            r,
            sizes,
            ghost_sizes,
            seed,
        } => cmd_variety(m, h, r, sizes, ghost_sizes, seed),
        Command::Simulate {
            config,
            output,
            seed,
        } => cmd_simulate(config, output, seed, cli.verbose),
        Command::Fit { csv, plot_out } => cmd_fit(csv, plot_out),
    }
}

fn signature(m: usize, h: usize, r: usize) -> Result<ModelSignature, Failure> {
    ModelSignature::new(m, h, r).map_err(|e| Failure::new(2, e.to_string()))
}

fn lambda_json(v: RlctValue) -> serde_json::Value {
    json!({
        "lambda_num": v.numerator(),
        "lambda_den": v.denominator(),
        "lambda": v.to_f64(),
    })
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn cmd_rlct(m: usize, h: usize, r: usize) -> Result<(), Failure> {
    let sig = signature(m, h, r)?;
    let lambda = rlct_closed_form(sig);
    let mut out = lambda_json(lambda);
    out["d_half"] = json!(regular_reference(sig).to_f64());
    out["branch"] = json!(if m == 1 { "M=1" } else { "M>1" });
    emit(&out);
    Ok(())
}

fn cmd_enumerate(m: usize, h: usize, r: usize) -> Result<(), Failure> {
    let sig = signature(m, h, r)?;
    let rows = enumerate_partitions(sig).map_err(|e| match e {
        RlctError::BudgetExceeded { .. } => Failure::new(3, e.to_string()),
        _ => Failure::new(2, e.to_string()),
    })?;
    let (min, argmin) = rlct_enumerate(sig).map_err(|e| Failure::new(2, e.to_string()))?;
    let closed = rlct_closed_form(sig);
    let rows_json: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            let mut v = lambda_json(row.lambda);
            v["true_sizes"] = json!(row.true_sizes);
            v["ghost_sizes"] = json!(row.ghost_sizes);
            v["is_min"] = json!(row.lambda.quarters() == min.quarters());
            v
        })
        .collect();
    let consistent = min.quarters() == closed.quarters();
    let out = json!({
        "sig": { "m": m, "h": h, "r": r },
        "rows": rows_json,
        "min": {
            "lambda_num": min.numerator(),
            "lambda_den": min.denominator(),
            "lambda": min.to_f64(),
            "true_sizes": argmin.true_sizes,
            "ghost_sizes": argmin.ghost_sizes,
        },
        "closed_form": lambda_json(closed),
        "consistent": consistent,
    });
    emit(&out);
    if consistent {
        Ok(())
    } else {
        Err(Failure::new(1, "enumeration disagrees with the closed form"))
    }
}

fn cmd_verify(suite: Suite, seed: u64) -> Result<(), Failure> {
    let reports = match suite {
        Suite::Polynomials => vec![checks::polynomial_suite(seed)],
        Suite::Variety => vec![checks::variety_suite(seed)],
        Suite::Ratio => vec![checks::ratio_suite(seed)],
        Suite::All => checks::all_suites(seed),
    };
    let passed = reports.iter().all(|r| r.passed);
    let out = json!({
        "seed": seed,
        "passed": passed,
        "suites": reports,
    });
    emit(&out);
    if passed {
        Ok(())
    } else {
        Err(Failure::new(1, "verification failed"))
    }
}

fn parse_sizes(text: &str) -> Result<Vec<usize>, Failure> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| Failure::new(2, format!("bad size list: {e}")))
        })
        .collect()
}

/// Deterministic default truth for a signature: uniform weights and spread-out
/// rate vectors.
fn default_truth(m: usize, r: usize) -> Result<TrueModel, Failure> {
    let weights = vec![1.0 / r as f64; r];
    let rates: Vec<RateVector> = (0..r)
        .map(|j| {
            RateVector::new(
                (0..m)
                    .map(|mm| 1.0 + 1.5 * j as f64 + 0.3 * mm as f64)
                    .collect(),
            )
            .map_err(|e| Failure::new(2, e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let params =
        MixtureParams::new(weights, rates).map_err(|e| Failure::new(2, e.to_string()))?;
    TrueModel::new(params).map_err(|e| Failure::new(2, e.to_string()))
}

fn cmd_variety(
    m: usize,
    h: usize,
    r: usize,
    sizes: Option<String>,
    ghost_sizes: Option<String>,
    seed: u64,
) -> Result<(), Failure> {
    let sig = signature(m, h, r)?;
    let truth = default_truth(m, r)?;
    let ghost_sizes = match ghost_sizes {
        Some(text) => parse_sizes(&text)?,
        None => Vec::new(),
    };
    let ghost_total: usize = ghost_sizes.iter().sum();
    let true_sizes = match sizes {
        Some(text) => parse_sizes(&text)?,
        None => {
            let mut s = vec![1usize; r];
            let spare = h
                .checked_sub(r + ghost_total)
                .ok_or_else(|| Failure::new(2, "sizes exceed H"))?;
            s[0] += spare;
            s
        }
    };
    if true_sizes.iter().sum::<usize>() + ghost_total != h {
        return Err(Failure::new(2, "group sizes must sum to H"));
    }
    let spec = if ghost_sizes.is_empty() {
        PartitionSpec::no_ghosts(true_sizes)
    } else {
        PartitionSpec::with_random_ghost_centers(true_sizes, ghost_sizes, &truth, 6.0, seed)
    }
    .map_err(|e| Failure::new(2, e.to_string()))?;
    let point =
        sample_variety_point(&spec, &truth, seed).map_err(|e| Failure::new(2, e.to_string()))?;
    let inst = VandermondeInstance::new(point.clone(), truth.clone())
        .map_err(|e| Failure::new(2, e.to_string()))?;
    let membership = variety_membership(&inst, 1e-9).map_err(|e| Failure::new(2, e.to_string()))?;
    let kl = kl_mean_error(&point, &truth, 1e-9).map_err(|e| Failure::new(2, e.to_string()))?;
    let sq = sq_surrogate(&point, &truth, 1e-9).map_err(|e| Failure::new(2, e.to_string()))?;
    let out = json!({
        "sig": { "m": sig.dim(), "h": sig.model_components(), "r": sig.true_components() },
        "truth": truth,
        "partition": spec,
        "point": point,
        "h_function": h_function(&inst),
        "kl_mean_error": kl,
        "sq_surrogate": sq,
        "membership": membership,
    });
    emit(&out);
    Ok(())
}

fn cmd_simulate(
    config_path: PathBuf,
    output: Option<PathBuf>,
    seed: Option<u64>,
    verbose: bool,
) -> Result<(), Failure> {
    let file = File::open(&config_path)
        .map_err(|e| Failure::new(2, format!("{}: {e}", config_path.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Failure::new(2, format!("config schema violation: {e}")))?;
    if let Some(path) = output {
        cfg.output_path = path;
    }
    if let Some(s) = seed {
        cfg.sampler.seed = s;
    }
    cfg.validate().map_err(|e| Failure::new(2, e.to_string()))?;
    if verbose {
        eprintln!(
            "grid: {} sample sizes x {} replications -> {}",
            cfg.n_grid.len(),
            cfg.replications,
            cfg.output_path.display()
        );
    }
    let outcome = run_experiment(&cfg).map_err(|e| match e {
        ExperimentError::InvalidConfig(_)
        | ExperimentError::InvalidPrior(_)
        | ExperimentError::InvalidSampler(_)
        | ExperimentError::ForeignOutputFile { .. } => Failure::new(2, e.to_string()),
        other => Failure::new(4, other.to_string()),
    })?;
    for fail in &outcome.failures {
        eprintln!(
            "cell failure at n = {}, rep = {}: {}",
            fail.n, fail.rep, fail.message
        );
    }
    let out = json!({
        "config_hash": cfg.config_hash(),
        "output": cfg.output_path,
        "cells": outcome.records.len(),
        "failures": outcome.failures.iter().map(|f| json!({
            "n": f.n, "rep": f.rep, "message": f.message,
        })).collect::<Vec<_>>(),
    });
    emit(&out);
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(4, "some grid cells failed"))
    }
}

fn cmd_fit(csv: PathBuf, plot_out: Option<PathBuf>) -> Result<(), Failure> {
    let records =
        read_records(&csv).map_err(|e| Failure::new(2, format!("{}: {e}", csv.display())))?;
    if records.is_empty() {
        return Err(Failure::new(2, "results table is empty"));
    }
    let sig = (records[0].m, records[0].h, records[0].r);
    if records.iter().any(|r| (r.m, r.h, r.r) != sig) {
        return Err(Failure::new(
            2,
            "results table mixes model signatures; fit one configuration at a time",
        ));
    }
    let theory = rlct_closed_form(
        ModelSignature::new(sig.0, sig.1, sig.2).map_err(|e| Failure::new(2, e.to_string()))?,
    );
    let fit = fit_lambda(&records).map_err(|e| Failure::new(2, e.to_string()))?;
    let z_score = if fit.std_error == 0.0 {
        if (fit.lambda_hat - theory.to_f64()).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY * (fit.lambda_hat - theory.to_f64()).signum()
        }
    } else {
        (fit.lambda_hat - theory.to_f64()) / fit.std_error
    };
    if let Some(path) = &plot_out {
        let mut f = File::create(path)
            .map_err(|e| Failure::new(2, format!("{}: {e}", path.display())))?;
        writeln!(f, "inv_n,mean_dgn").map_err(|e| Failure::new(2, e.to_string()))?;
        for p in &fit.points {
            writeln!(f, "{},{}", p.inv_n, p.mean_dgn)
                .map_err(|e| Failure::new(2, e.to_string()))?;
        }
        let fit_path = path.with_extension("fit.json");
        let params = json!({
            "lambda_hat": fit.lambda_hat,
            "se": fit.std_error,
            "lambda_theory": theory.to_f64(),
            "line": "mean_dgn = lambda_hat * inv_n",
        });
        std::fs::write(&fit_path, serde_json::to_string_pretty(&params).unwrap())
            .map_err(|e| Failure::new(2, e.to_string()))?;
    }
    let out = json!({
        "lambda_hat": fit.lambda_hat,
        "se": fit.std_error,
        "lambda_theory": theory.to_f64(),
        "z_score": z_score,
        "points": fit.points,
    });
    emit(&out);
    Ok(())
}
