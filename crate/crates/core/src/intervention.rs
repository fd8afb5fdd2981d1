//! Causal interventions on activation vectors and the behavioral metrics
//! computed from them.
//!
//! Every arm pairs a *base* row (the prompt being evaluated) with a *donor*
//! row (the prompt supplying activations), matched by query id. For
//! patching, the base is the corrupted prompt and the donor the clean one;
//! for swaps, the base carries the source relation and the donor the
//! injected target relation. A prediction is *correct* when it matches the
//! base row's target and *follows the target* when it matches the donor's.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{align_by_query, ActivationSet};
use crate::error::{check_dims, Error, Result};
use crate::linalg::standard_normal_vector;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::subspace::{estimate_subspace, random_control, Projector};

/// Linear stand-in for the model head: `scores = W r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutModel {
    /// `k × d`.
    pub w: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl ReadoutModel {
    pub fn new(w: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let labels = labels.unwrap_or_else(|| (0..w.nrows()).map(|i| format!("c{i}")).collect());
        check_dims("readout labels", w.nrows(), labels.len())?;
        if w.nrows() == 0 {
            return Err(Error::InvalidParameter("readout needs at least one class".into()));
        }
        Ok(ReadoutModel { w, labels })
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn classes(&self) -> usize {
        self.w.nrows()
    }

    /// Argmax of the scores; the lowest index wins ties.
    pub fn predict(&self, r: &DVector<f64>) -> Result<usize> {
        check_dims("readout dimension", self.dim(), r.len())?;
        let scores = &self.w * r;
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// `r̃ = r_corr + P(r_clean − r_corr)`.
pub fn patch(r_corr: &DVector<f64>, r_clean: &DVector<f64>, p: &Projector) -> Result<DVector<f64>> {
    check_dims("patch vectors", r_corr.len(), r_clean.len())?;
    Ok(r_corr + p.apply(&(r_clean - r_corr))?)
}

/// Same as patching with `I − P`, without forming the complement.
fn patch_complement(r_corr: &DVector<f64>, r_clean: &DVector<f64>, p: &Projector) -> Result<DVector<f64>> {
    check_dims("patch vectors", r_corr.len(), r_clean.len())?;
    Ok(r_clean + p.apply(&(r_corr - r_clean))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapMode {
    Full,
    Concept,
    Complement,
}

pub fn swap(r_source: &DVector<f64>, r_target: &DVector<f64>, mode: SwapMode, p: &Projector) -> Result<DVector<f64>> {
    check_dims("swap vectors", r_source.len(), r_target.len())?;
    match mode {
        SwapMode::Full => Ok(r_target.clone()),
        SwapMode::Concept => patch(r_source, r_target, p),
        SwapMode::Complement => patch_complement(r_source, r_target, p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Concept,
    Complement,
    Isotropic,
}

/// A projected draw shorter than this fraction of the raw draw is round-off.
const DIRECTION_FLOOR: f64 = 1e-10;

/// Adds Gaussian noise restricted to `mode`, rescaled so the injected
/// component has norm exactly `scale · ‖r‖`.
pub fn inject_noise(r: &DVector<f64>, p: &Projector, mode: NoiseMode, scale: f64, seed: u64) -> Result<DVector<f64>> {
    inject_noise_with(r, p, mode, scale, &mut rng_from_seed(seed))
}

pub fn inject_noise_with(
    r: &DVector<f64>,
    p: &Projector,
    mode: NoiseMode,
    scale: f64,
    rng: &mut Rng,
) -> Result<DVector<f64>> {
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise scale {scale} must be ≥ 0")));
    }
    check_dims("noise projector", p.dim(), r.len())?;
    if scale == 0.0 {
        return Ok(r.clone());
    }
    let norm = r.norm();
    if norm == 0.0 {
        return Err(Error::DegenerateInput("cannot scale noise relative to a zero activation".into()));
    }
    let xi = standard_normal_vector(r.len(), rng);
    let xi_norm = xi.norm();
    let dir = match mode {
        NoiseMode::Isotropic => xi,
        NoiseMode::Concept => p.apply(&xi)?,
        NoiseMode::Complement => {
            let inside = p.apply(&xi)?;
            xi - inside
        }
    };
    let dn = dir.norm();
    if dn <= DIRECTION_FLOOR * xi_norm {
        return Err(Error::DegenerateInput(format!(
            "{mode:?} noise direction is empty for a rank-{} projector",
            p.rank()
        )));
    }
    Ok(r + dir * (scale * norm / dn))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    None,
    Full,
    Concept,
    Complement,
    RandomControl,
    CrossControl,
    SwapFull,
    SwapConcept,
    SwapComplement,
    Noise,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Full => "full",
            Arm::Concept => "concept",
            Arm::Complement => "complement",
            Arm::RandomControl => "random_control",
            Arm::CrossControl => "cross_control",
            Arm::SwapFull => "swap_full",
            Arm::SwapConcept => "swap_concept",
            Arm::SwapComplement => "swap_complement",
            Arm::Noise => "noise",
        }
    }

    fn needs_projector(self) -> bool {
        !matches!(self, Arm::None | Arm::Full | Arm::SwapFull | Arm::Noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    pub name: String,
    pub arm: Arm,
    /// The learned projector for concept/complement arms, the control
    /// projector for control arms.
    pub projector: Option<Projector>,
    pub noise: Option<NoiseSpec>,
}

impl InterventionSpec {
    pub fn new(arm: Arm, projector: Option<Projector>) -> Self {
        InterventionSpec { name: arm.name().to_string(), arm, projector, noise: None }
    }

    pub fn noise(projector: Option<Projector>, noise: NoiseSpec) -> Self {
        let name = format!("noise_{}_{}", mode_name(noise.mode), noise.scale);
        InterventionSpec { name, arm: Arm::Noise, projector, noise: Some(noise) }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.arm.needs_projector() && self.projector.is_none() {
            return Err(Error::InvalidParameter(format!("arm {} requires a projector", self.name)));
        }
        if self.arm == Arm::Noise {
            let noise = self
                .noise
                .ok_or_else(|| Error::InvalidParameter(format!("arm {} requires noise settings", self.name)))?;
            if noise.mode != NoiseMode::Isotropic && self.projector.is_none() {
                return Err(Error::InvalidParameter(format!(
                    "arm {} requires a projector for {:?} noise",
                    self.name, noise.mode
                )));
            }
        }
        Ok(())
    }

    /// Base row is evaluated unless the arm perturbs the donor alone.
    fn evaluates_donor(&self) -> bool {
        self.arm == Arm::Noise
    }

    fn apply(&self, base: &DVector<f64>, donor: &DVector<f64>, row: usize) -> Result<DVector<f64>> {
        let p = || self.projector.as_ref().expect("validated");
        match self.arm {
            Arm::None => Ok(base.clone()),
            Arm::Full | Arm::SwapFull => Ok(donor.clone()),
            Arm::Concept | Arm::RandomControl | Arm::CrossControl | Arm::SwapConcept => patch(base, donor, p()),
            Arm::Complement | Arm::SwapComplement => patch_complement(base, donor, p()),
            Arm::Noise => {
                let noise = self.noise.expect("validated");
                let zero = Projector::zero(donor.len());
                let proj = self.projector.as_ref().unwrap_or(&zero);
                let mut rng = rng_from_seed(derive_seed(noise.seed, &[row as u64]));
                inject_noise_with(donor, proj, noise.mode, noise.scale, &mut rng)
            }
        }
    }
}

fn mode_name(mode: NoiseMode) -> &'static str {
    match mode {
        NoiseMode::Concept => "concept",
        NoiseMode::Complement => "complement",
        NoiseMode::Isotropic => "isotropic",
    }
}

/// One prediction, as produced internally or supplied by an external run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub query_id: String,
    pub arm: String,
    pub predicted_token: String,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub followed_target: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub name: String,
    pub n: usize,
    /// Percent.
    pub accuracy: f64,
    pub recovery_rate: Option<f64>,
    pub override_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub acc_clean: f64,
    pub acc_corrupted: f64,
    pub arms: Vec<ArmSummary>,
    pub records: Vec<PredictionRecord>,
}

impl InterventionReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// `100 · (patch − corr) / (clean − corr)`; `None` on a zero gap.
pub fn recovery_rate(acc_patch: f64, acc_corr: f64, acc_clean: f64) -> Option<f64> {
    let gap = acc_clean - acc_corr;
    (gap != 0.0).then(|| 100.0 * (acc_patch - acc_corr) / gap)
}

/// Percentage of rows whose prediction followed the injected target.
pub fn override_success(followed: &[bool]) -> Option<f64> {
    (!followed.is_empty()).then(|| 100.0 * followed.iter().filter(|&&f| f).count() as f64 / followed.len() as f64)
}

fn percent(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        hit += f as usize;
    }
    if n == 0 {
        0.0
    } else {
        100.0 * hit as f64 / n as f64
    }
}

fn target_of(set: &ActivationSet, i: usize) -> Result<usize> {
    set.rows[i]
        .target
        .ok_or_else(|| Error::DegenerateInput(format!("row {} has no target class", set.rows[i].query_id)))
}

fn summarize(specs: &[String], records: &[PredictionRecord], acc_clean: f64, acc_corrupted: f64) -> Vec<ArmSummary> {
    specs
        .iter()
        .map(|name| {
            let rows: Vec<&PredictionRecord> = records.iter().filter(|r| &r.arm == name).collect();
            let accuracy = percent(rows.iter().map(|r| r.correct));
            let followed: Vec<bool> = rows.iter().filter_map(|r| r.followed_target).collect();
            ArmSummary {
                name: name.clone(),
                n: rows.len(),
                accuracy,
                recovery_rate: recovery_rate(accuracy, acc_corrupted, acc_clean),
                override_success: override_success(&followed),
            }
        })
        .collect()
}

fn check_specs(specs: &[InterventionSpec], d: usize) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        s.validate()?;
        if let Some(p) = &s.projector {
            check_dims("projector dimension", d, p.dim())?;
        }
        if !seen.insert(s.name.as_str()) || s.name == "clean" {
            return Err(Error::InvalidParameter(format!("duplicate arm name {:?}", s.name)));
        }
    }
    Ok(())
}

/// Applies each arm to every aligned `(corrupted, clean)` pair and scores
/// the results with `readout`. Inputs are not modified.
pub fn run_arms(
    clean: &ActivationSet,
    corrupted: &ActivationSet,
    specs: &[InterventionSpec],
    readout: &ReadoutModel,
) -> Result<InterventionReport> {
    check_dims("activation dimension", clean.dim(), corrupted.dim())?;
    check_dims("readout dimension", readout.dim(), clean.dim())?;
    check_specs(specs, clean.dim())?;
    let mut pairs = align_by_query(corrupted, clean)?;
    pairs.sort_by(|a, b| corrupted.rows[a.0].query_id.cmp(&corrupted.rows[b.0].query_id));

    let clean_flags = pairs
        .iter()
        .map(|&(_, j)| Ok(readout.predict(&clean.row(j))? == target_of(clean, j)?))
        .collect::<Result<Vec<bool>>>()?;
    let corr_flags = pairs
        .iter()
        .map(|&(i, _)| Ok(readout.predict(&corrupted.row(i))? == target_of(corrupted, i)?))
        .collect::<Result<Vec<bool>>>()?;
    let acc_clean = percent(clean_flags.into_iter());
    let acc_corrupted = percent(corr_flags.into_iter());

    let per_pair: Vec<Vec<PredictionRecord>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let base = corrupted.row(i);
            let donor = clean.row(j);
            let base_target = target_of(corrupted, i)?;
            let donor_target = target_of(clean, j)?;
            specs
                .iter()
                .map(|spec| {
                    let out = spec.apply(&base, &donor, i)?;
                    let pred = readout.predict(&out)?;
                    let (correct, followed) = if spec.evaluates_donor() {
                        (pred == donor_target, None)
                    } else {
                        (pred == base_target, Some(pred == donor_target))
                    };
                    Ok(PredictionRecord {
                        query_id: corrupted.rows[i].query_id.clone(),
                        arm: spec.name.clone(),
                        predicted_token: readout.labels[pred].clone(),
                        correct,
                        followed_target: followed,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<PredictionRecord> = per_pair.into_iter().flatten().collect();
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    Ok(InterventionReport {
        arms: summarize(&names, &records, acc_clean, acc_corrupted),
        acc_clean,
        acc_corrupted,
        records,
    })
}

/// Arm names that must appear in recorded predictions for the baselines.
pub const CLEAN_ARM: &str = "clean";
pub const CORRUPTED_ARM: &str = "none";

/// Aggregates externally produced predictions. Every `(query, arm)` pair
/// for the requested arms plus the two baselines must be present.
pub fn run_recorded(query_ids: &[String], arms: &[String], records: &[PredictionRecord]) -> Result<InterventionReport> {
    let mut index: HashMap<(&str, &str), &PredictionRecord> = HashMap::with_capacity(records.len());
    for r in records {
        if index.insert((r.query_id.as_str(), r.arm.as_str()), r).is_some() {
            return Err(Error::DegenerateInput(format!("duplicate prediction for ({}, {})", r.query_id, r.arm)));
        }
    }
    let mut wanted: Vec<String> = vec![CLEAN_ARM.into(), CORRUPTED_ARM.into()];
    for a in arms {
        if !wanted.contains(a) {
            wanted.push(a.clone());
        }
    }
    let mut queries: Vec<&String> = query_ids.iter().collect();
    queries.sort();
    queries.dedup();
    let mut missing = Vec::new();
    let mut joined = Vec::new();
    for q in &queries {
        for a in &wanted {
            match index.get(&(q.as_str(), a.as_str())) {
                Some(r) => joined.push((*r).clone()),
                None => missing.push(format!("{q}/{a}")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingKeys(missing));
    }
    let acc_of = |arm: &str| percent(joined.iter().filter(|r| r.arm == arm).map(|r| r.correct));
    let acc_clean = acc_of(CLEAN_ARM);
    let acc_corrupted = acc_of(CORRUPTED_ARM);
    let names: Vec<String> = wanted.into_iter().filter(|a| a != CLEAN_ARM).collect();
    Ok(InterventionReport {
        arms: summarize(&names, &joined, acc_clean, acc_corrupted),
        acc_clean,
        acc_corrupted,
        records: joined,
    })
}

/// Intervened activations per arm, with the evaluated rows' labels, for
/// re-injection by an external runner.
pub fn materialize_arms(
    clean: &ActivationSet,
    corrupted: &ActivationSet,
    specs: &[InterventionSpec],
) -> Result<Vec<(String, ActivationSet)>> {
    check_dims("activation dimension", clean.dim(), corrupted.dim())?;
    check_specs(specs, clean.dim())?;
    let pairs = align_by_query(corrupted, clean)?;
    specs
        .iter()
        .map(|spec| {
            let rows: Vec<DVector<f64>> = pairs
                .par_iter()
                .map(|&(i, j)| spec.apply(&corrupted.row(i), &clean.row(j), i))
                .collect::<Result<_>>()?;
            let h = DMatrix::from_fn(rows.len(), clean.dim(), |i, k| rows[i][k]);
            let labels = if spec.evaluates_donor() { clean } else { corrupted };
            let idx: Vec<usize> = pairs.iter().map(|&(i, j)| if spec.evaluates_donor() { j } else { i }).collect();
            Ok((spec.name.clone(), labels.select(&idx).with_activations(h)?))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LayerInput {
    pub layer: i64,
    pub clean: ActivationSet,
    pub corrupted: ActivationSet,
    /// Activations of an unrelated task, for the cross-task control.
    pub cross: Option<ActivationSet>,
}

/// Arms applied at every layer; projectors are estimated per layer from
/// that layer's clean rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerTemplate {
    pub arms: Vec<Arm>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub control_seed: u64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

fn default_threshold() -> f64 {
    0.98
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub layer: i64,
    pub rank: usize,
    pub acc_clean: f64,
    pub acc_corrupted: f64,
    pub arms: Vec<ArmSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub rows: Vec<LayerRow>,
    pub notices: Vec<String>,
}

impl LayerSweep {
    /// `(layer, value)` for one arm's override success or recovery rate.
    pub fn curve(&self, arm: &str, recovery: bool) -> Vec<(i64, Option<f64>)> {
        self.rows
            .iter()
            .map(|row| {
                let v = row.arms.iter().find(|a| a.name == arm).and_then(|a| {
                    if recovery {
                        a.recovery_rate
                    } else {
                        a.override_success
                    }
                });
                (row.layer, v)
            })
            .collect()
    }
}

fn layer_specs(input: &LayerInput, template: &LayerTemplate) -> Result<(usize, Vec<InterventionSpec>, Vec<String>)> {
    let est = estimate_subspace(&input.clean, template.threshold)?;
    let learned = est.projector();
    let mut notices = Vec::new();
    let mut specs = Vec::new();
    for &arm in &template.arms {
        let projector = match arm {
            Arm::RandomControl => {
                Some(random_control(est.dim(), est.rank, derive_seed(template.control_seed, &[input.layer as u64]))?)
            }
            Arm::CrossControl => match &input.cross {
                Some(other) => Some(crate::subspace::cross_task_control(other, template.threshold, est.rank)?),
                None => {
                    notices.push(format!("layer {}: no cross-task activations, cross_control skipped", input.layer));
                    continue;
                }
            },
            Arm::Noise => {
                let noise = template
                    .noise
                    .ok_or_else(|| Error::InvalidParameter("noise arm needs template noise settings".into()))?;
                specs.push(InterventionSpec::noise(Some(learned.clone()), noise));
                continue;
            }
            a if a.needs_projector() => Some(learned.clone()),
            _ => None,
        };
        specs.push(InterventionSpec::new(arm, projector));
    }
    Ok((est.rank, specs, notices))
}

/// Runs the same arms at every layer. Layers whose inputs cannot be used
/// are skipped with a notice.
pub fn layer_sweep(
    layers: &[LayerInput],
    template: &LayerTemplate,
    readout: &dyn Fn(i64) -> ReadoutModel,
) -> Result<LayerSweep> {
    if layers.len() < 2 {
        return Err(Error::InvalidParameter(format!("layer sweep needs at least 2 layers, got {}", layers.len())));
    }
    let mut notices = Vec::new();
    let mut rows = Vec::new();
    let mut ordered: BTreeMap<i64, &LayerInput> = BTreeMap::new();
    for l in layers {
        if ordered.insert(l.layer, l).is_some() {
            return Err(Error::InvalidParameter(format!("layer {} given twice", l.layer)));
        }
    }
    for (layer, input) in ordered {
        if input.clean.is_empty() || input.corrupted.is_empty() {
            notices.push(format!("layer {layer}: missing condition rows, skipped"));
            continue;
        }
        let attempt = layer_specs(input, template).and_then(|(rank, specs, n)| {
            let report = run_arms(&input.clean, &input.corrupted, &specs, &readout(layer))?;
            Ok((rank, report, n))
        });
        match attempt {
            Ok((rank, report, n)) => {
                notices.extend(n);
                rows.push(LayerRow {
                    layer,
                    rank,
                    acc_clean: report.acc_clean,
                    acc_corrupted: report.acc_corrupted,
                    arms: report.arms,
                });
            }
            Err(e @ (Error::MissingKeys(_) | Error::DegenerateInput(_))) => {
                notices.push(format!("layer {layer}: {e}; skipped"));
            }
            Err(e) => return Err(e),
        }
    }
    for n in &notices {
        log::warn!("{n}");
    }
    Ok(LayerSweep { rows, notices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{Condition, RowLabel};
    use crate::linalg::haar_basis;

    fn vecs(d: usize, seed: u64) -> (DVector<f64>, DVector<f64>, Projector) {
        let mut rng = rng_from_seed(seed);
        let a = standard_normal_vector(d, &mut rng);
        let b = standard_normal_vector(d, &mut rng);
        (a, b, Projector::new(haar_basis(d, 4, &mut rng)))
    }

    #[test]
    fn patch_residuals() {
        let (corr, clean, p) = vecs(16, 1);
        let out = patch(&corr, &clean, &p).unwrap();
        assert!(p.basis.tr_mul(&(&out - &clean)).norm() < 1e-10);
        let q = p.complement();
        assert!(q.basis.tr_mul(&(&out - &corr)).norm() < 1e-10);
        assert_eq!(patch(&corr, &clean, &Projector::identity(16)).unwrap().len(), 16);
        assert!((patch(&corr, &clean, &Projector::identity(16)).unwrap() - &clean).norm() < 1e-12);
        assert_eq!(patch(&corr, &clean, &Projector::zero(16)).unwrap(), corr);
        let rest = q.apply(&(&clean - &corr)).unwrap();
        assert!((out + rest - clean).norm() < 1e-10);
        assert!(patch(&corr, &DVector::zeros(3), &p).is_err());
    }

    #[test]
    fn swap_modes_compose() {
        let (s, t, p) = vecs(12, 2);
        let concept = swap(&s, &t, SwapMode::Concept, &p).unwrap();
        let both = swap(&concept, &t, SwapMode::Complement, &p).unwrap();
        assert!((both - &t).norm() < 1e-10);
        assert!((swap(&s, &s, SwapMode::Concept, &p).unwrap() - &s).norm() < 1e-12);
        assert_eq!(swap(&s, &t, SwapMode::Full, &p).unwrap(), t);
    }

    #[test]
    fn noise_norm_and_containment() {
        let (r, _, p) = vecs(20, 3);
        for (mode, scale) in [(NoiseMode::Concept, 0.5), (NoiseMode::Complement, 2.0), (NoiseMode::Isotropic, 1.0)] {
            let out = inject_noise(&r, &p, mode, scale, 7).unwrap();
            let delta = &out - &r;
            assert!((delta.norm() - scale * r.norm()).abs() < 1e-9);
            match mode {
                NoiseMode::Concept => assert!(p.complement().basis.tr_mul(&delta).norm() < 1e-10),
                NoiseMode::Complement => assert!(p.basis.tr_mul(&delta).norm() < 1e-10),
                NoiseMode::Isotropic => {}
            }
        }
        assert_eq!(inject_noise(&r, &p, NoiseMode::Concept, 0.0, 1).unwrap(), r);
        assert!(matches!(
            inject_noise(&DVector::zeros(20), &p, NoiseMode::Concept, 1.0, 1),
            Err(Error::DegenerateInput(_))
        ));
        assert!(inject_noise(&r, &p, NoiseMode::Concept, -1.0, 1).is_err());
    }

    #[test]
    fn recovery_formula() {
        assert!((recovery_rate(60.5, 40.0, 66.0).unwrap() - 78.846).abs() < 1e-3);
        assert!((recovery_rate(65.5, 40.0, 66.0).unwrap() - 98.077).abs() < 1e-3);
        assert_eq!(recovery_rate(40.0, 40.0, 66.0), Some(0.0));
        assert_eq!(recovery_rate(50.0, 40.0, 40.0), None);
        assert_eq!(override_success(&[true, true]), Some(100.0));
        assert_eq!(override_success(&[]), None);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let w = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let m = ReadoutModel::new(w, None).unwrap();
        assert_eq!(m.predict(&DVector::from_vec(vec![1.0, 0.5])).unwrap(), 0);
        assert_eq!(m.predict(&DVector::from_vec(vec![0.0, 0.5])).unwrap(), 2);
    }

    fn tiny(h: DMatrix<f64>, cond: Condition) -> ActivationSet {
        let rows = (0..h.nrows())
            .map(|i| {
                let mut r = RowLabel::new(format!("q{i}"), "t", cond);
                r.target = Some(i % 2);
                r
            })
            .collect();
        ActivationSet::with_one_hot(h, rows, 2).unwrap()
    }

    #[test]
    fn identical_inputs_have_no_gap() {
        let h = DMatrix::from_fn(6, 3, |i, j| ((i + j) % 3) as f64 - 1.0);
        let clean = tiny(h.clone(), Condition::Clean);
        let corr = tiny(h, Condition::Corrupted);
        let readout = ReadoutModel::new(DMatrix::from_fn(2, 3, |i, j| (i + j) as f64), None).unwrap();
        let p = Projector::new(DMatrix::from_fn(3, 1, |i, _| (i == 0) as u8 as f64));
        let specs = vec![
            InterventionSpec::new(Arm::Full, None),
            InterventionSpec::new(Arm::Concept, Some(p.clone())),
            InterventionSpec::new(Arm::Complement, Some(p)),
        ];
        let before = clean.clone();
        let report = run_arms(&clean, &corr, &specs, &readout).unwrap();
        assert_eq!(clean, before);
        for arm in &report.arms {
            assert_eq!(arm.accuracy, report.acc_clean);
            assert_eq!(arm.recovery_rate, None);
        }
        assert_eq!(report.records.len(), 18);
    }

    #[test]
    fn spec_validation() {
        assert!(InterventionSpec::new(Arm::Concept, None).validate().is_err());
        let n = NoiseSpec { mode: NoiseMode::Concept, scale: 1.0, seed: 0 };
        assert!(InterventionSpec::noise(None, n).validate().is_err());
        let n = NoiseSpec { mode: NoiseMode::Isotropic, ..n };
        assert!(InterventionSpec::noise(None, n).validate().is_ok());
    }

    fn rec(q: &str, arm: &str, correct: bool, followed: Option<bool>) -> PredictionRecord {
        PredictionRecord {
            query_id: q.into(),
            arm: arm.into(),
            predicted_token: "x".into(),
            correct,
            followed_target: followed,
        }
    }

    #[test]
    fn recorded_join() {
        let qs = vec!["a".to_string(), "b".to_string()];
        let mut records = vec![
            rec("a", "clean", true, None),
            rec("b", "clean", true, None),
            rec("a", "none", false, Some(false)),
            rec("b", "none", false, Some(false)),
            rec("a", "concept", true, Some(true)),
        ];
        match run_recorded(&qs, &["concept".into()], &records) {
            Err(Error::MissingKeys(k)) => assert_eq!(k, vec!["b/concept"]),
            other => panic!("{other:?}"),
        }
        records.push(rec("b", "concept", false, Some(true)));
        let report = run_recorded(&qs, &["concept".into()], &records).unwrap();
        let c = report.arm("concept").unwrap();
        assert_eq!(c.accuracy, 50.0);
        assert_eq!(c.recovery_rate, Some(50.0));
        assert_eq!(c.override_success, Some(100.0));
        assert_eq!(report.arm("none").unwrap().recovery_rate, Some(0.0));
    }
}
