//! Commands over stored activations: subspace estimation, rank sweeps,
//! geometry diagnostics and report merging.

use std::path::PathBuf;

use clap::Args;
use conceptlab::activations::{ActivationSet, Condition};
use conceptlab::diagnostics::{
    centroid_shifts, concentration, debiased_displacements, entanglement, silhouette, LabeledEmbedding, Space,
};
use conceptlab::io::Report;
use conceptlab::subspace::{estimate_subspace_with, probe_equivalence_angles, rank_stability_sweep, Projector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, require, set, set_opt, usage, CliResult, Inputs};
use crate::output::{self, to_value};
use crate::Global;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub input: Option<PathBuf>,
    pub threshold: f64,
    pub center: bool,
    pub basis_out: Option<PathBuf>,
    /// Also compare with the least-squares probe's directions.
    pub probe: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig { input: None, threshold: 0.98, center: false, basis_out: None, probe: false }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Cumulative cross-variance to retain, in (0, 1].
    #[arg(long)]
    threshold: Option<f64>,
    /// Remove column means before forming the cross-covariance.
    #[arg(long)]
    center: bool,
    /// Write the d × rank basis here.
    #[arg(long)]
    basis_out: Option<PathBuf>,
    #[arg(long)]
    probe: bool,
}

pub fn estimate(g: &Global, args: &EstimateArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: EstimateConfig = config::load_or_default(g.config.as_deref())?;
    set_opt(&mut cfg.input, args.input.clone());
    set(&mut cfg.threshold, args.threshold);
    cfg.center |= args.center;
    cfg.probe |= args.probe;
    set_opt(&mut cfg.basis_out, args.basis_out.clone());
    let acts = output::activations(require(&cfg.input, "input")?, inputs)?;
    let est = estimate_subspace_with(&acts, cfg.threshold, cfg.center)?;
    if let Some(path) = &cfg.basis_out {
        output::write_matrix(path, &est.u_hat)?;
    }
    let probe = if cfg.probe { Some(probe_equivalence_angles(&acts, &est)?) } else { None };
    let results = json!({
        "rank": est.rank,
        "dim": est.dim(),
        "rows": acts.len(),
        "nonzero_directions": est.nonzero_count(),
        "singular_values": est.singular_values,
        "ratios": est.ratios,
        "probe_angles": probe,
        "basis": cfg.basis_out.as_ref().map(|p| p.display().to_string()),
    });
    Ok(Report::new("estimate-subspace", g.seed, to_value(&cfg), results))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankSweepConfig {
    pub input: Option<PathBuf>,
    pub threshold: f64,
    pub n_grid: Vec<usize>,
    pub shots_grid: Vec<u32>,
}

impl Default for RankSweepConfig {
    fn default() -> Self {
        RankSweepConfig { input: None, threshold: 0.98, n_grid: Vec::new(), shots_grid: Vec::new() }
    }
}

#[derive(Debug, Args)]
pub struct RankSweepArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Row counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Shot counts, comma separated; omit to ignore shot labels.
    #[arg(long, value_delimiter = ',')]
    shots_grid: Option<Vec<u32>>,
}

pub fn rank_sweep(g: &Global, args: &RankSweepArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: RankSweepConfig = config::load_or_default(g.config.as_deref())?;
    set_opt(&mut cfg.input, args.input.clone());
    set(&mut cfg.threshold, args.threshold);
    set(&mut cfg.n_grid, args.n_grid.clone());
    set(&mut cfg.shots_grid, args.shots_grid.clone());
    let acts = output::activations(require(&cfg.input, "input")?, inputs)?;
    if cfg.n_grid.is_empty() {
        cfg.n_grid = vec![acts.len()];
    }
    let sweep = rank_stability_sweep(&acts, &cfg.n_grid, &cfg.shots_grid, cfg.threshold)?;
    let mut report = Report::new("rank-sweep", g.seed, to_value(&cfg), to_value(&sweep));
    report.notices.extend(sweep.cells.iter().filter_map(|c| c.notice.clone()));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    Task,
    Format,
    Target,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagConfig {
    pub input: Option<PathBuf>,
    /// Basis file; estimated from the input when absent.
    pub basis: Option<PathBuf>,
    pub threshold: f64,
    pub labels: LabelKey,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig { input: None, basis: None, threshold: 0.98, labels: LabelKey::Task }
    }
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Row label used as the cluster id for silhouettes.
    #[arg(long, value_enum)]
    labels: Option<LabelKey>,
}

fn cluster_labels(acts: &ActivationSet, key: LabelKey) -> Vec<String> {
    acts.rows
        .iter()
        .map(|r| match key {
            LabelKey::Task => r.task_id.clone(),
            LabelKey::Format => r.format_id.clone(),
            LabelKey::Target => r.target.map_or_else(|| "none".into(), |t| t.to_string()),
        })
        .collect()
}

fn or_notice<T: Serialize>(what: &str, r: conceptlab::Result<T>, notices: &mut Vec<String>) -> Value {
    match r {
        Ok(v) => to_value(&v),
        Err(e) => {
            notices.push(format!("{what}: {e}"));
            Value::Null
        }
    }
}

pub fn diag(g: &Global, args: &DiagArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let mut cfg: DiagConfig = config::load_or_default(g.config.as_deref())?;
    set_opt(&mut cfg.input, args.input.clone());
    set_opt(&mut cfg.basis, args.basis.clone());
    set(&mut cfg.threshold, args.threshold);
    set(&mut cfg.labels, args.labels);
    let acts = output::activations(require(&cfg.input, "input")?, inputs)?;
    let p: Projector = match &cfg.basis {
        Some(path) => output::projector(path, inputs)?,
        None => estimate_subspace_with(&acts, cfg.threshold, false)?.projector(),
    };
    let mut notices = Vec::new();
    let labels = cluster_labels(&acts, cfg.labels);
    let mut sil = serde_json::Map::new();
    for (name, space) in [("full", Space::Full), ("concept", Space::Concept), ("complement", Space::Complement)] {
        let emb = LabeledEmbedding::from_activations(&acts, &p, space, labels.clone())?;
        sil.insert(name.into(), json!(silhouette(&emb)));
    }
    let ent = or_notice("entanglement", entanglement(&acts, &p), &mut notices);
    let conc = concentration(&acts, &p)?;
    let has_zero_shot = acts.rows.iter().any(|r| r.condition == Condition::ZeroShot);
    let displacements = if has_zero_shot {
        let d = debiased_displacements(&acts, &p.basis)?;
        let shifts: Vec<Value> = centroid_shifts(&d)
            .into_iter()
            .map(|(rel, from, to, dist)| json!({ "relation": rel, "from": from, "to": to, "distance": dist }))
            .collect();
        json!({ "clouds": to_value(&d.clouds), "unmatched": d.unmatched, "centroid_shifts": shifts })
    } else {
        notices.push("no zero-shot rows; displacement clouds skipped".into());
        Value::Null
    };
    let results = json!({
        "rank": p.rank(),
        "silhouette": sil,
        "entanglement": ent,
        "concentration": to_value(&conc),
        "displacements": displacements,
    });
    let mut report = Report::new("diag", g.seed, to_value(&cfg), results);
    report.notices = notices;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Report files to merge, in order.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

pub fn merge(g: &Global, args: &MergeArgs, inputs: &mut Inputs) -> CliResult<Report> {
    if g.config.is_some() {
        return usage("report takes no config file");
    }
    let mut merged = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let r: Report = output::json_file(path, inputs)?;
        merged.push(r);
    }
    let commands: Vec<&str> = merged.iter().map(|r| r.command.as_str()).collect();
    let results = json!({ "commands": commands, "reports": to_value(&merged) });
    let config = json!({ "reports": args.reports.iter().map(|p| p.display().to_string()).collect::<Vec<_>>() });
    Ok(Report::new("report", g.seed, config, results))
}
