//! Patching, swapping, controls, noise and layer sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use conceptlab::activations::ActivationSet;
use conceptlab::intervention::{
    layer_sweep, materialize_arms, run_arms, run_recorded, Arm, InterventionReport, InterventionSpec, LayerInput,
    LayerTemplate, NoiseMode, NoiseSpec, PredictionRecord, ReadoutModel,
};
use conceptlab::io::{write_json_atomic, Report};
use conceptlab::rng::{derive_seed, tag};
use conceptlab::subspace::{cross_task_control, estimate_subspace, random_control, Projector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{self, require, set, set_opt, usage, CliError, CliResult, Inputs};
use crate::output::{self, to_value};
use crate::Global;

/// Shared by `patch`, `swap`, `controls` and `noise`. Patch-style commands
/// read `clean`/`corrupted`; `swap` reads `target` (donor) and `source`
/// (base).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    pub clean: Option<PathBuf>,
    pub corrupted: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Learned basis; estimated from the donor rows when absent.
    pub basis: Option<PathBuf>,
    pub threshold: f64,
    /// `k × d` readout for internal evaluation.
    pub readout: Option<PathBuf>,
    /// Externally produced prediction records; replaces the readout.
    pub predictions: Option<PathBuf>,
    /// Where to write per-row prediction records.
    pub records: Option<PathBuf>,
    /// Where to write intervened activations, one file per arm.
    pub export_dir: Option<PathBuf>,
    /// Activations of an unrelated task for the cross-task control.
    pub cross: Option<PathBuf>,
    pub scales: Vec<f64>,
    pub modes: Vec<NoiseMode>,
    pub seed: u64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        InterventionConfig {
            clean: None,
            corrupted: None,
            source: None,
            target: None,
            basis: None,
            threshold: 0.98,
            readout: None,
            predictions: None,
            records: None,
            export_dir: None,
            cross: None,
            scales: vec![0.5, 1.0, 2.0],
            modes: vec![NoiseMode::Concept, NoiseMode::Complement, NoiseMode::Isotropic],
            seed: 0,
        }
    }
}

#[derive(Debug, Args)]
pub struct InterventionArgs {
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    corrupted: Option<PathBuf>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    readout: Option<PathBuf>,
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    export_dir: Option<PathBuf>,
    #[arg(long)]
    cross: Option<PathBuf>,
    /// Noise scales relative to the activation norm, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_enum)]
    modes: Option<Vec<ModeArg>>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Concept,
    Complement,
    Isotropic,
}

impl From<ModeArg> for NoiseMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Concept => NoiseMode::Concept,
            ModeArg::Complement => NoiseMode::Complement,
            ModeArg::Isotropic => NoiseMode::Isotropic,
        }
    }
}

fn resolve(g: &Global, args: &InterventionArgs) -> CliResult<InterventionConfig> {
    let mut cfg: InterventionConfig = config::load_or_default(g.config.as_deref())?;
    set_opt(&mut cfg.clean, args.clean.clone());
    set_opt(&mut cfg.corrupted, args.corrupted.clone());
    set_opt(&mut cfg.source, args.source.clone());
    set_opt(&mut cfg.target, args.target.clone());
    set_opt(&mut cfg.basis, args.basis.clone());
    set(&mut cfg.threshold, args.threshold);
    set_opt(&mut cfg.readout, args.readout.clone());
    set_opt(&mut cfg.predictions, args.predictions.clone());
    set_opt(&mut cfg.records, args.records.clone());
    set_opt(&mut cfg.export_dir, args.export_dir.clone());
    set_opt(&mut cfg.cross, args.cross.clone());
    set(&mut cfg.scales, args.scales.clone());
    if let Some(m) = &args.modes {
        cfg.modes = m.iter().map(|&m| m.into()).collect();
    }
    set(&mut cfg.seed, g.seed);
    Ok(cfg)
}

/// Donor and base sets plus the learned projector.
struct Prepared {
    donor: ActivationSet,
    base: ActivationSet,
    learned: Projector,
    rank: usize,
    projector_source: String,
}

fn prepare(cfg: &InterventionConfig, swap: bool, inputs: &mut Inputs) -> CliResult<Prepared> {
    let (donor_path, base_path) = if swap {
        (require(&cfg.target, "target")?, require(&cfg.source, "source")?)
    } else {
        (require(&cfg.clean, "clean")?, require(&cfg.corrupted, "corrupted")?)
    };
    let donor = output::activations(donor_path, inputs)?;
    let base = output::activations(base_path, inputs)?;
    let (learned, projector_source) = match &cfg.basis {
        Some(path) => (output::projector(path, inputs)?, path.display().to_string()),
        None => (
            estimate_subspace(&donor, cfg.threshold)?.projector(),
            format!("estimated from {} at threshold {}", donor_path.display(), cfg.threshold),
        ),
    };
    let rank = learned.rank();
    Ok(Prepared { donor, base, learned, rank, projector_source })
}

fn evaluate(
    command: &str,
    cfg: &InterventionConfig,
    prep: &Prepared,
    specs: &[InterventionSpec],
    inputs: &mut Inputs,
) -> CliResult<Report> {
    let report: InterventionReport = match (&cfg.predictions, &cfg.readout) {
        (Some(path), _) => {
            let records: Vec<PredictionRecord> = output::json_file(path, inputs)?;
            let ids: Vec<String> = prep.base.rows.iter().map(|r| r.query_id.clone()).collect();
            let arms: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
            run_recorded(&ids, &arms, &records)?
        }
        (None, Some(path)) => {
            let readout: ReadoutModel = output::readout(path, prep.donor.meta.class_tokens.as_ref(), inputs)?;
            run_arms(&prep.donor, &prep.base, specs, &readout)?
        }
        (None, None) if cfg.export_dir.is_some() => {
            InterventionReport { acc_clean: f64::NAN, acc_corrupted: f64::NAN, arms: Vec::new(), records: Vec::new() }
        }
        (None, None) => return usage("need --readout or --predictions (or --export-dir alone)"),
    };
    let mut exported = BTreeMap::new();
    if let Some(dir) = &cfg.export_dir {
        std::fs::create_dir_all(dir).map_err(conceptlab::Error::from)?;
        for (name, set) in materialize_arms(&prep.donor, &prep.base, specs)? {
            let path = dir.join(format!("{name}.csa1"));
            set.save(&path)?;
            exported.insert(name, path.display().to_string());
        }
    }
    if let Some(path) = &cfg.records {
        write_json_atomic(path, &report.records)?;
    }
    let evaluated = !report.arms.is_empty();
    let results = json!({
        "rank": prep.rank,
        "projector": prep.projector_source,
        "acc_clean": evaluated.then_some(report.acc_clean),
        "acc_corrupted": evaluated.then_some(report.acc_corrupted),
        "arms": to_value(&report.arms),
        "record_count": report.records.len(),
        "records": cfg.records.as_ref().map(|p| p.display().to_string()),
        "exported": exported,
    });
    Ok(Report::new(command, Some(cfg.seed), to_value(cfg), results))
}

pub fn patch(g: &Global, args: &InterventionArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let cfg = resolve(g, args)?;
    let prep = prepare(&cfg, false, inputs)?;
    let p = Some(prep.learned.clone());
    let specs = vec![
        InterventionSpec::new(Arm::Full, None),
        InterventionSpec::new(Arm::Concept, p.clone()),
        InterventionSpec::new(Arm::Complement, p),
    ];
    evaluate("patch", &cfg, &prep, &specs, inputs)
}

pub fn swap(g: &Global, args: &InterventionArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let cfg = resolve(g, args)?;
    let prep = prepare(&cfg, true, inputs)?;
    let p = Some(prep.learned.clone());
    let specs = vec![
        InterventionSpec::new(Arm::SwapFull, None),
        InterventionSpec::new(Arm::SwapConcept, p.clone()),
        InterventionSpec::new(Arm::SwapComplement, p),
    ];
    evaluate("swap", &cfg, &prep, &specs, inputs)
}

pub fn controls(g: &Global, args: &InterventionArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let cfg = resolve(g, args)?;
    let prep = prepare(&cfg, false, inputs)?;
    let d = prep.donor.dim();
    let mut specs = vec![
        InterventionSpec::new(Arm::Concept, Some(prep.learned.clone())),
        InterventionSpec::new(
            Arm::RandomControl,
            Some(random_control(d, prep.rank, derive_seed(cfg.seed, &[tag::CONTROL]))?),
        ),
    ];
    if let Some(path) = &cfg.cross {
        let other = output::activations(path, inputs)?;
        specs.push(InterventionSpec::new(
            Arm::CrossControl,
            Some(cross_task_control(&other, cfg.threshold, prep.rank)?),
        ));
    }
    evaluate("controls", &cfg, &prep, &specs, inputs)
}

pub fn noise(g: &Global, args: &InterventionArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let cfg = resolve(g, args)?;
    if cfg.scales.is_empty() || cfg.modes.is_empty() {
        return usage("noise needs at least one scale and one mode");
    }
    let prep = prepare(&cfg, false, inputs)?;
    let mut specs = Vec::new();
    for (i, &mode) in cfg.modes.iter().enumerate() {
        for (j, &scale) in cfg.scales.iter().enumerate() {
            let seed = derive_seed(cfg.seed, &[tag::NOISE, i as u64, j as u64]);
            specs.push(InterventionSpec::noise(Some(prep.learned.clone()), NoiseSpec { mode, scale, seed }));
        }
    }
    evaluate("noise", &cfg, &prep, &specs, inputs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPaths {
    pub layer: i64,
    pub clean: PathBuf,
    pub corrupted: PathBuf,
    #[serde(default)]
    pub cross: Option<PathBuf>,
    /// Overrides the shared readout for this layer.
    #[serde(default)]
    pub readout: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersConfig {
    pub layers: Vec<LayerPaths>,
    #[serde(default)]
    pub readout: Option<PathBuf>,
    pub template: LayerTemplate,
}

#[derive(Debug, Args)]
pub struct LayersArgs {
    #[arg(long)]
    readout: Option<PathBuf>,
}

fn load_readout(path: &Path, acts: &ActivationSet, inputs: &mut Inputs) -> CliResult<ReadoutModel> {
    output::readout(path, acts.meta.class_tokens.as_ref(), inputs)
}

pub fn layers(g: &Global, args: &LayersArgs, inputs: &mut Inputs) -> CliResult<Report> {
    let Some(path) = g.config.as_deref() else {
        return usage("layers needs --config listing the per-layer files and the arm template");
    };
    let mut cfg: LayersConfig = config::load(path)?;
    set_opt(&mut cfg.readout, args.readout.clone());
    if let Some(seed) = g.seed {
        cfg.template.control_seed = seed;
        if let Some(n) = cfg.template.noise.as_mut() {
            n.seed = derive_seed(seed, &[tag::NOISE]);
        }
    }
    let mut layer_inputs = Vec::with_capacity(cfg.layers.len());
    let mut readouts = BTreeMap::new();
    for l in &cfg.layers {
        let clean = output::activations(&l.clean, inputs)?;
        let corrupted = output::activations(&l.corrupted, inputs)?;
        let cross = l.cross.as_ref().map(|p| output::activations(p, inputs)).transpose()?;
        let readout_path =
            l.readout.as_ref().or(cfg.readout.as_ref()).ok_or_else(|| {
                CliError::Usage(format!("layer {} has no readout and no shared readout is set", l.layer))
            })?;
        readouts.insert(l.layer, load_readout(readout_path, &clean, inputs)?);
        layer_inputs.push(LayerInput { layer: l.layer, clean, corrupted, cross });
    }
    let lookup = |layer: i64| readouts[&layer].clone();
    let sweep = layer_sweep(&layer_inputs, &cfg.template, &lookup)?;
    let names: Vec<String> = sweep
        .rows
        .iter()
        .flat_map(|r| r.arms.iter().map(|a| a.name.clone()))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let curves: BTreeMap<String, Value> = names
        .iter()
        .map(|n| {
            let pts =
                |recovery: bool| sweep.curve(n, recovery).into_iter().map(|(l, v)| json!([l, v])).collect::<Vec<_>>();
            (n.clone(), json!({ "override_success": pts(false), "recovery_rate": pts(true) }))
        })
        .collect();
    let seed = Some(cfg.template.control_seed);
    let mut report =
        Report::new("layers", seed, to_value(&cfg), json!({ "rows": to_value(&sweep.rows), "curves": curves }));
    report.notices = sweep.notices;
    Ok(report)
}
