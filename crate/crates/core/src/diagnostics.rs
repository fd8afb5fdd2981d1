//! Representation-geometry diagnostics over activation sets.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activations::{align_by_query, group_rows, ActivationSet, Condition};
use crate::error::{check_dims, Error, Result};
use crate::io::json::matrix_rows;
use crate::linalg::fix_column_signs;
use crate::subspace::Projector;

/// Projected vectors shorter than this are skipped.
pub const NORM_FLOOR: f64 = 1e-12;

/// Half-width of the reported covariance ellipses, in standard deviations.
pub const ELLIPSE_SIGMAS: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Full,
    Concept,
    Complement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub vectors: DMatrix<f64>,
    pub labels: Vec<String>,
    pub space: Space,
}

impl LabeledEmbedding {
    pub fn new(vectors: DMatrix<f64>, labels: Vec<String>, space: Space) -> Result<Self> {
        check_dims("embedding labels", vectors.nrows(), labels.len())?;
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("embedding contains non-finite entries".into()));
        }
        Ok(LabeledEmbedding { vectors, labels, space })
    }

    /// Rows of `acts` expressed in the chosen space: full coordinates, or
    /// coordinates in the basis of `p` or of its complement.
    pub fn from_activations(acts: &ActivationSet, p: &Projector, space: Space, labels: Vec<String>) -> Result<Self> {
        check_dims("projector dimension", acts.dim(), p.dim())?;
        let vectors = match space {
            Space::Full => acts.h.clone(),
            Space::Concept => &acts.h * &p.basis,
            Space::Complement => &acts.h * p.complement().basis,
        };
        Self::new(vectors, labels, space)
    }
}

/// Mean silhouette with Euclidean distances; singleton clusters score 0.
/// `None` with fewer than two distinct labels.
pub fn silhouette(emb: &LabeledEmbedding) -> Option<f64> {
    let n = emb.vectors.nrows();
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &emb.labels {
        let next = ids.len();
        ids.entry(l.as_str()).or_insert(next);
    }
    if ids.len() < 2 {
        return None;
    }
    let k = ids.len();
    let cluster: Vec<usize> = emb.labels.iter().map(|l| ids[l.as_str()]).collect();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }
    let rows: Vec<DVector<f64>> = (0..n).map(|i| emb.vectors.row(i).transpose()).collect();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = cluster[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[cluster[j]] += (&rows[i] - &rows[j]).norm();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k).filter(|&c| c != own).map(|c| sums[c] / sizes[c] as f64).fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Some(scores.iter().sum::<f64>() / n as f64)
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    (na >= NORM_FLOOR && nb >= NORM_FLOOR).then(|| (a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

fn coords(p: Option<&Projector>, v: DVector<f64>) -> DVector<f64> {
    match p {
        Some(p) => p.basis.tr_mul(&v),
        None => v,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineSummary {
    /// `None` when every pair was skipped.
    pub mean: Option<f64>,
    pub pairs: usize,
    pub skipped: usize,
}

fn summarize_cosines(values: impl Iterator<Item = Option<f64>>) -> CosineSummary {
    let (mut sum, mut pairs, mut skipped) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(c) => {
                sum += c;
                pairs += 1;
            }
            None => skipped += 1,
        }
    }
    CosineSummary { mean: (pairs > 0).then(|| sum / pairs as f64), pairs, skipped }
}

/// Mean cosine between projected activations of the same subject under
/// different tasks.
pub fn entanglement(acts: &ActivationSet, p: &Projector) -> Result<CosineSummary> {
    check_dims("projector dimension", acts.dim(), p.dim())?;
    let by_subject = group_rows(acts, |r| r.subject().to_string());
    let mut values = Vec::new();
    let mut eligible = false;
    for rows in by_subject.values() {
        let projected: Vec<DVector<f64>> = rows.iter().map(|&i| p.basis.tr_mul(&acts.row(i))).collect();
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                if acts.rows[rows[a]].task_id != acts.rows[rows[b]].task_id {
                    eligible = true;
                    values.push(cosine(&projected[a], &projected[b]));
                }
            }
        }
    }
    if !eligible {
        return Err(Error::DegenerateInput("no subject appears under two different tasks".into()));
    }
    Ok(summarize_cosines(values.into_iter()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// `100 · mean ‖Ph‖/‖h‖`.
    pub percent: Option<f64>,
    pub rows: usize,
    pub skipped: usize,
}

pub fn concentration(acts: &ActivationSet, p: &Projector) -> Result<Concentration> {
    check_dims("projector dimension", acts.dim(), p.dim())?;
    let inside = &acts.h * &p.basis;
    let (mut sum, mut rows, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..acts.len() {
        let total = acts.h.row(i).norm();
        if total < NORM_FLOOR {
            skipped += 1;
            continue;
        }
        sum += (inside.row(i).norm() / total).min(1.0);
        rows += 1;
    }
    if skipped > 0 {
        log::warn!("concentration: skipped {skipped} zero-norm rows");
    }
    Ok(Concentration { percent: (rows > 0).then(|| 100.0 * sum / rows as f64), rows, skipped })
}

/// Mean cosine between rows of `a` and `b` with the same query id, in the
/// span of `p` or in the full space.
pub fn pairwise_cosine(a: &ActivationSet, b: &ActivationSet, p: Option<&Projector>) -> Result<CosineSummary> {
    check_dims("activation dimension", a.dim(), b.dim())?;
    if let Some(p) = p {
        check_dims("projector dimension", a.dim(), p.dim())?;
    }
    let pairs = align_by_query(a, b)?;
    Ok(summarize_cosines(pairs.iter().map(|&(i, j)| cosine(&coords(p, a.row(i)), &coords(p, b.row(j))))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCloud {
    pub relation: String,
    pub shots: u32,
    pub n: usize,
    pub centroid: Vec<f64>,
    /// `r × c` principal directions, `c = min(2, r)`.
    #[serde(with = "matrix_rows")]
    pub components: DMatrix<f64>,
    /// Variances along `components`.
    pub eigenvalues: Vec<f64>,
    /// `1.5 √λ` per component.
    pub axes: Vec<f64>,
    /// Product of the semi-axes.
    pub area: f64,
    /// Trace of the cloud covariance.
    pub total_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacements {
    pub clouds: Vec<DisplacementCloud>,
    /// K-shot rows with no zero-shot partner.
    pub unmatched: Vec<String>,
}

impl Displacements {
    pub fn cloud(&self, relation: &str, shots: u32) -> Option<&DisplacementCloud> {
        self.clouds.iter().find(|c| c.relation == relation && c.shots == shots)
    }
}

/// `Δβ = Ûᵀ(h_K − h_0)` for every clean K-shot row against the zero-shot
/// row of the same task and query, summarized per `(task, K)`.
pub fn debiased_displacements(acts: &ActivationSet, u_hat: &DMatrix<f64>) -> Result<Displacements> {
    check_dims("basis dimension", acts.dim(), u_hat.nrows())?;
    let mut zero: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (i, row) in acts.rows.iter().enumerate() {
        if row.condition == Condition::ZeroShot
            && zero.insert((row.task_id.as_str(), row.query_id.as_str()), i).is_some()
        {
            return Err(Error::DegenerateInput(format!(
                "two zero-shot rows for task {} query {}",
                row.task_id, row.query_id
            )));
        }
    }
    let mut groups: BTreeMap<(String, u32), Vec<DVector<f64>>> = BTreeMap::new();
    let mut unmatched = Vec::new();
    for (i, row) in acts.rows.iter().enumerate() {
        if row.condition != Condition::Clean || row.shots == 0 {
            continue;
        }
        match zero.get(&(row.task_id.as_str(), row.query_id.as_str())) {
            Some(&j) => groups
                .entry((row.task_id.clone(), row.shots))
                .or_default()
                .push(u_hat.tr_mul(&(acts.row(i) - acts.row(j)))),
            None => unmatched.push(format!("{}/{}/K={}/{}", row.task_id, row.query_id, row.shots, row.context_id)),
        }
    }
    if !unmatched.is_empty() {
        log::warn!("{} K-shot rows without a zero-shot partner", unmatched.len());
    }
    let clouds = groups.into_iter().map(|((relation, shots), deltas)| cloud(relation, shots, &deltas)).collect();
    Ok(Displacements { clouds, unmatched })
}

fn cloud(relation: String, shots: u32, deltas: &[DVector<f64>]) -> DisplacementCloud {
    let r = deltas[0].len();
    let n = deltas.len();
    let mut centroid = DVector::zeros(r);
    for d in deltas {
        centroid += d;
    }
    centroid /= n as f64;
    let mut cov = DMatrix::zeros(r, r);
    if n > 1 {
        for d in deltas {
            let c = d - &centroid;
            cov += &c * c.transpose();
        }
        cov /= (n - 1) as f64;
    }
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let c = r.min(2);
    let mut components = DMatrix::from_fn(r, c, |i, j| eig.eigenvectors[(i, order[j])]);
    fix_column_signs(&mut components);
    let eigenvalues: Vec<f64> = order[..c].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let axes: Vec<f64> = eigenvalues.iter().map(|l| ELLIPSE_SIGMAS * l.sqrt()).collect();
    DisplacementCloud {
        relation,
        shots,
        n,
        centroid: centroid.iter().copied().collect(),
        components,
        area: axes.iter().product(),
        eigenvalues,
        axes,
        total_variance: cov.trace(),
    }
}

/// Distance between centroids at consecutive shot counts, per relation.
pub fn centroid_shifts(d: &Displacements) -> Vec<(String, u32, u32, f64)> {
    let mut by_rel: BTreeMap<&str, Vec<&DisplacementCloud>> = BTreeMap::new();
    for c in &d.clouds {
        by_rel.entry(c.relation.as_str()).or_default().push(c);
    }
    let mut out = Vec::new();
    for (rel, mut clouds) in by_rel {
        clouds.sort_by_key(|c| c.shots);
        for w in clouds.windows(2) {
            let shift = w[0].centroid.iter().zip(&w[1].centroid).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out.push((rel.to_string(), w[0].shots, w[1].shots, shift));
        }
    }
    out
}

/// `|cos(β_ctx, Ûᵀ E_target)|`.
pub fn contamination_alignment(beta_ctx: &DVector<f64>, target: &DVector<f64>, u_hat: &DMatrix<f64>) -> Result<f64> {
    check_dims("target dimension", u_hat.nrows(), target.len())?;
    check_dims("context coordinates", u_hat.ncols(), beta_ctx.len())?;
    let ideal = u_hat.tr_mul(target);
    if ideal.norm() <= NORM_FLOOR {
        return Err(Error::DegenerateInput("target is orthogonal to the subspace; no reference direction".into()));
    }
    cosine(beta_ctx, &ideal).map(f64::abs).ok_or_else(|| Error::DegenerateInput("zero context vector".into()))
}

/// Sample Pearson correlation; `None` when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>> {
    check_dims("series length", xs.len(), ys.len())?;
    if xs.len() < 3 {
        return Err(Error::InvalidParameter(format!("correlation needs at least 3 points, got {}", xs.len())));
    }
    Ok(crate::stats::pearson(xs, ys))
}
