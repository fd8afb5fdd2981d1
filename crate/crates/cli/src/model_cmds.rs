//! Commands driven by the synthetic linear model: simulate, decompose,
//! rates and identify.

use std::path::PathBuf;

use clap::Args;
use conceptlab::estimators::{block_decompose_noisy, ridge_ambient};
use conceptlab::identify::{
    estimate_moments, recover_from_pooled, recover_subspace_with, sample_ambient_demos, MomentPanel, Whitening,
};
use conceptlab::io::{write_bytes_atomic, write_tensor, Report, Tensor};
use conceptlab::linalg::haar_basis;
use conceptlab::model::{
    make_cov, sample_basis, sample_demos, sample_inputs, sample_task, ConceptBasis, CovSpec, EigenProfile, Regime,
};
use conceptlab::rates::{sweep_nbd, sweep_noisy, sweep_rates, RateSweepConfig};
use conceptlab::rng::{derive_seed, derived_rng, rng_from_seed, tag};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, set, set_opt, usage, CliResult, Inputs};
use crate::output::to_value;
use crate::Global;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d: usize,
    pub r: usize,
    pub regime: Regime,
    pub rho: f64,
    pub profile: EigenProfile,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 16,
            r: 2,
            regime: Regime::Bd,
            rho: 0.0,
            profile: EigenProfile::Identity,
            m: 64,
            sigma: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    /// Demonstrations per draw.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Cross-block coupling; any positive value selects the near block-diagonal regime.
    #[arg(long)]
    rho: Option<f64>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut ModelConfig) {
        set(&mut cfg.d, self.d);
        set(&mut cfg.r, self.r);
        set(&mut cfg.m, self.m);
        set(&mut cfg.sigma, self.sigma);
        if let Some(rho) = self.rho {
            cfg.rho = rho;
            cfg.regime = if rho > 0.0 { Regime::Nbd } else { Regime::Bd };
        }
    }
}

struct Instance {
    basis: ConceptBasis,
    cov: CovSpec,
    task: conceptlab::model::Task,
    demos: conceptlab::model::DemoSet,
}

fn instance(cfg: &ModelConfig) -> CliResult<Instance> {
    let s = cfg.seed;
    let basis = sample_basis(cfg.d, cfg.r, derive_seed(s, &[tag::BASIS]))?;
    let cov = make_cov(cfg.d, cfg.r, cfg.regime, cfg.rho, &cfg.profile, derive_seed(s, &[tag::COV]))?;
    let task = sample_task(&basis, derive_seed(s, &[tag::TASK]));
    let demos = sample_demos(&cov, &basis, &task, cfg.m, cfg.sigma, derive_seed(s, &[tag::DEMOS]))?;
    Ok(Instance { basis, cov, task, demos })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Write the demonstrations as an M × (d+1) tensor, labels in the last column.
    #[arg(long)]
    demos: Option<PathBuf>,
}

pub fn simulate(g: &Global, args: &SimulateArgs, _inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: ModelConfig = config::load_or_default(g.config.as_deref())?;
    args.model.apply(&mut cfg);
    set(&mut cfg.seed, g.seed);
    let inst = instance(&cfg)?;
    let (m, d) = inst.demos.x.shape();
    if let Some(path) = &args.demos {
        let joined = DMatrix::from_fn(m, d + 1, |i, j| if j < d { inst.demos.x[(i, j)] } else { inst.demos.y[i] });
        write_tensor(path, &Tensor::from_matrix(&joined), None)?;
    }
    let y = &inst.demos.y;
    let mean = y.mean();
    let results = json!({
        "cov": to_value(&inst.cov),
        "cross_operator_norm": inst.cov.cross_operator_norm(),
        "basis": to_value(&inst.basis),
        "task": to_value(&inst.task),
        "demos": {
            "m": m,
            "d": d,
            "label_mean": mean,
            "label_variance": y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m.max(2).saturating_sub(1) as f64,
            "path": args.demos.as_ref().map(|p| p.display().to_string()),
        },
    });
    Ok(Report::new("simulate", Some(cfg.seed), to_value(&cfg), results))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposeConfig {
    pub model: ModelConfig,
    pub lambda: f64,
    pub queries: usize,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig { model: ModelConfig::default(), lambda: 0.1, queries: 8 }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of query inputs to split into concept term and leakage.
    #[arg(long)]
    queries: Option<usize>,
}

pub fn decompose(g: &Global, args: &DecomposeArgs, _inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: DecomposeConfig = config::load_or_default(g.config.as_deref())?;
    args.model.apply(&mut cfg.model);
    set(&mut cfg.lambda, args.lambda);
    set(&mut cfg.queries, args.queries);
    set(&mut cfg.model.seed, g.seed);
    let inst = instance(&cfg.model)?;
    let fit = block_decompose_noisy(&inst.demos, &inst.basis, cfg.lambda)?;
    let direct = ridge_ambient(&inst.demos, cfg.lambda)?;
    let queries = if cfg.queries > 0 {
        let mut rng = derived_rng(cfg.model.seed, &[tag::QUERY]);
        sample_inputs(&inst.cov, &inst.basis, cfg.queries, &mut rng)?
    } else {
        DMatrix::zeros(0, cfg.model.d)
    };
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..queries.nrows() {
        let x: DVector<f64> = queries.row(i).transpose();
        let p = fit.predict(&inst.basis, &x)?;
        let residual = p.f - p.concept_term - p.leakage;
        worst = worst.max(residual.abs());
        rows.push(json!({ "f": p.f, "concept_term": p.concept_term, "leakage": p.leakage, "residual": residual }));
    }
    let results = json!({
        "beta": inst.task.beta.as_slice(),
        "beta_hat": fit.beta_hat.as_slice(),
        "gamma": fit.gamma.as_slice(),
        "concept_error": (&fit.beta_hat - &inst.task.beta).norm(),
        "schur_min_eigenvalue": fit.schur_min_eigenvalue(),
        "max_ridge_gap": (&fit.w_hat - direct).amax(),
        "max_identity_residual": worst,
        "queries": rows,
    });
    Ok(Report::new("decompose", Some(cfg.model.seed), to_value(&cfg), results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Plain,
    Noisy,
    Coupled,
}

#[derive(Debug, Args)]
pub struct RatesArgs {
    /// Per-cell CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
}

pub fn rates(g: &Global, args: &RatesArgs, kind: RateKind, _inputs: &mut Inputs) -> CliResult<Report> {
    let Some(path) = g.config.as_deref() else {
        return usage("rate sweeps need --config with the m, r, d and lambda0 grids");
    };
    let mut cfg: RateSweepConfig = config::load(path)?;
    set(&mut cfg.seed, g.seed);
    set(&mut cfg.trials, args.trials);
    let result = match kind {
        RateKind::Plain => sweep_rates(&cfg)?,
        RateKind::Noisy => sweep_noisy(&cfg)?,
        RateKind::Coupled => sweep_nbd(&cfg)?,
    };
    if let Some(csv) = &args.csv {
        write_bytes_atomic(csv, result.to_csv().as_bytes())?;
    }
    let name = match kind {
        RateKind::Plain => "rates",
        RateKind::Noisy => "rates-noisy",
        RateKind::Coupled => "rates-nbd",
    };
    let results = json!({
        "slopes": to_value(&result.slopes),
        "rho_curves": to_value(&result.rho_curves),
        "cells": to_value(&result.cells),
        "csv": args.csv.as_ref().map(|p| p.display().to_string()),
    });
    Ok(Report::new(name, Some(cfg.seed), to_value(&cfg), results))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub d: usize,
    pub r: usize,
    pub tasks: usize,
    /// Demonstrations per task; absent means exact population moments.
    pub samples: Option<usize>,
    pub sigma: f64,
    /// Condition number of the input covariance (1 = identity).
    pub condition: f64,
    pub whitening: Whitening,
    pub seed: u64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            d: 32,
            r: 4,
            tasks: 16,
            samples: None,
            sigma: 0.0,
            condition: 1.0,
            whitening: Whitening::Known,
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    condition: Option<f64>,
    #[arg(long, value_enum)]
    whitening: Option<WhiteningArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum WhiteningArg {
    Known,
    Empirical,
    Skip,
}

pub fn identify(g: &Global, args: &IdentifyArgs, _inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: IdentifyConfig = config::load_or_default(g.config.as_deref())?;
    set(&mut cfg.d, args.d);
    set(&mut cfg.r, args.r);
    set(&mut cfg.tasks, args.tasks);
    set_opt(&mut cfg.samples, args.samples);
    set(&mut cfg.condition, args.condition);
    if let Some(w) = args.whitening {
        cfg.whitening = match w {
            WhiteningArg::Known => Whitening::Known,
            WhiteningArg::Empirical => Whitening::Empirical,
            WhiteningArg::Skip => Whitening::Skip,
        };
    }
    set(&mut cfg.seed, g.seed);
    if !(cfg.condition >= 1.0) {
        return usage(format!("condition must be >= 1, got {}", cfg.condition));
    }
    let s = cfg.seed;
    let basis = sample_basis(cfg.d, cfg.r, derive_seed(s, &[tag::BASIS]))?;
    let lambda = if cfg.condition == 1.0 {
        DMatrix::identity(cfg.d, cfg.d)
    } else {
        let q = haar_basis(cfg.d, cfg.d, &mut rng_from_seed(derive_seed(s, &[tag::COV])));
        let denom = (cfg.d.max(2) - 1) as f64;
        let eig = DVector::from_fn(cfg.d, |i, _| cfg.condition.powf(-(i as f64) / denom));
        &q * DMatrix::from_diagonal(&eig) * q.transpose()
    };
    let tasks: Vec<_> = (0..cfg.tasks).map(|i| sample_task(&basis, derive_seed(s, &[tag::TASK, i as u64]))).collect();
    let panel = match cfg.samples {
        None => MomentPanel::population(lambda, &tasks)?,
        Some(n) => {
            let demos = tasks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    sample_ambient_demos(&lambda, &t.w, n, cfg.sigma, &mut derived_rng(s, &[tag::DEMOS, i as u64]))
                })
                .collect::<conceptlab::Result<Vec<_>>>()?;
            estimate_moments(&demos, lambda)?
        }
    };
    let mut rec = recover_subspace_with(&panel, cfg.r, cfg.whitening)?;
    rec.compare(&basis.u)?;
    let pooled = recover_from_pooled(&panel, cfg.r, Some(&basis.u))?;
    let mut report = Report::new(
        "identify",
        Some(s),
        to_value(&cfg),
        json!({
            "angles": rec.angles,
            "max_angle": rec.max_angle(),
            "singular_values": rec.singular_values,
            "gap": rec.gap,
            "pooled": {
                "norm": pooled.pooled_norm,
                "angles": pooled.angles,
                "max_angle": pooled.max_angle(),
            },
        }),
    );
    report.notices.extend(rec.rank_warning.clone());
    Ok(report)
}
