//! Concept-subspace estimation from activation/supervision cross-covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activations::ActivationSet;
use crate::error::{check_dims, Error, Result};
use crate::io::json::matrix_rows;
use crate::linalg::{
    complement_basis, fix_column_signs, haar_basis, pinv_solve_symmetric, principal_angles, thin_svd, ThinSvd,
};
use crate::rng::rng_from_seed;

/// Slack applied when comparing a cumulative ratio with the threshold, so
/// that a ratio equal to the threshold in exact arithmetic still counts.
pub const RATIO_TOLERANCE: f64 = 1e-12;

/// Singular values below this fraction of the largest are treated as zero.
pub const NULL_SINGULAR_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceEstimate {
    #[serde(with = "matrix_rows")]
    pub u_hat: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// Cumulative explained cross-variance, ending at 1.
    pub ratios: Vec<f64>,
    pub rank: usize,
    pub threshold: f64,
    pub centered: bool,
}

impl SubspaceEstimate {
    pub fn dim(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn projector(&self) -> Projector {
        Projector { basis: self.u_hat.clone() }
    }

    /// Number of singular values above the null level.
    pub fn nonzero_count(&self) -> usize {
        count_nonzero(&self.singular_values)
    }
}

fn count_nonzero(sv: &[f64]) -> usize {
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > top * NULL_SINGULAR_FRACTION).count()
}

/// Cumulative `Σ_{i≤j} σᵢ² / Σ σᵢ²`.
pub fn cumulative_ratios(singular_values: &[f64]) -> Vec<f64> {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    let mut out: Vec<f64> = singular_values
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// Smallest rank whose cumulative ratio reaches `threshold`.
pub fn select_rank(ratios: &[f64], threshold: f64) -> usize {
    ratios.iter().position(|&c| c >= threshold - RATIO_TOLERANCE).map_or(ratios.len(), |i| i + 1)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside (0, 1]")));
    }
    Ok(())
}

/// `C_HY = HᵀY / n`, optionally after removing column means.
pub fn cross_covariance(h: &DMatrix<f64>, y: &DMatrix<f64>, center: bool) -> Result<DMatrix<f64>> {
    check_dims("supervision rows", h.nrows(), y.nrows())?;
    let n = h.nrows() as f64;
    if center {
        let hc = center_columns(h);
        let yc = center_columns(y);
        Ok(hc.tr_mul(&yc) / n)
    } else {
        Ok(h.tr_mul(y) / n)
    }
}

fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.row_mean();
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        row -= &mean;
    }
    out
}

/// Left singular vectors (all of them, signs fixed) and singular values.
fn left_singular(c: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if c.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("cross-covariance is identically zero".into()));
    }
    let ThinSvd { mut u, singular_values } = thin_svd(c)?;
    fix_column_signs(&mut u);
    Ok((u, singular_values))
}

fn check_set(acts: &ActivationSet) -> Result<()> {
    if acts.len() < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 rows, got {}", acts.len())));
    }
    if acts.y.ncols() == 0 {
        return Err(Error::DegenerateInput("activation set has no supervision".into()));
    }
    Ok(())
}

pub fn estimate_subspace(acts: &ActivationSet, threshold: f64) -> Result<SubspaceEstimate> {
    estimate_subspace_with(acts, threshold, false)
}

pub fn estimate_subspace_with(acts: &ActivationSet, threshold: f64, center: bool) -> Result<SubspaceEstimate> {
    check_threshold(threshold)?;
    check_set(acts)?;
    let c = cross_covariance(&acts.h, &acts.y, center)?;
    let (u, singular_values) = left_singular(&c)?;
    let ratios = cumulative_ratios(&singular_values);
    let rank = select_rank(&ratios, threshold).min(count_nonzero(&singular_values));
    Ok(SubspaceEstimate {
        u_hat: u.columns(0, rank).into_owned(),
        singular_values,
        ratios,
        rank,
        threshold,
        centered: center,
    })
}

/// Orthogonal projector `P = U Uᵀ`, kept in factored form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    #[serde(with = "matrix_rows")]
    pub basis: DMatrix<f64>,
}

impl Projector {
    /// `basis` must have orthonormal columns.
    pub fn new(basis: DMatrix<f64>) -> Self {
        Projector { basis }
    }

    pub fn identity(d: usize) -> Self {
        Projector::new(DMatrix::identity(d, d))
    }

    pub fn zero(d: usize) -> Self {
        Projector::new(DMatrix::zeros(d, 0))
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dims("projector dimension", self.dim(), v.len())?;
        Ok(&self.basis * self.basis.tr_mul(v))
    }

    /// Projects every row of an `n × d` matrix.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dims("projector dimension", self.dim(), m.ncols())?;
        Ok((m * &self.basis) * self.basis.transpose())
    }

    pub fn materialize(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    pub fn complement(&self) -> Projector {
        Projector::new(complement_basis(&self.basis))
    }
}

/// Projector onto the orthogonal complement of the estimate.
pub fn complement(est: &SubspaceEstimate) -> Result<Projector> {
    if est.rank >= est.dim() {
        return Err(Error::DegenerateInput(format!("rank {} equals the dimension; the complement is empty", est.rank)));
    }
    Ok(est.projector().complement())
}

/// Haar-random rank-`r` projector in `R^d`.
pub fn random_control(d: usize, r: usize, seed: u64) -> Result<Projector> {
    if r > d {
        return Err(Error::InvalidParameter(format!("rank {r} exceeds dimension {d}")));
    }
    if r == d {
        return Ok(Projector::identity(d));
    }
    Ok(Projector::new(haar_basis(d, r, &mut rng_from_seed(seed))))
}

/// Subspace estimated from an unrelated task, cut or extended along its
/// own singular directions to exactly `rank` columns.
pub fn cross_task_control(other: &ActivationSet, threshold: f64, rank: usize) -> Result<Projector> {
    check_threshold(threshold)?;
    check_set(other)?;
    let c = cross_covariance(&other.h, &other.y, false)?;
    let (u, sv) = left_singular(&c)?;
    let available = count_nonzero(&sv);
    if rank > available {
        return Err(Error::RankDeficient(format!(
            "requested rank {rank} but the control task has {available} non-zero directions"
        )));
    }
    let own = select_rank(&cumulative_ratios(&sv), threshold);
    if own != rank {
        log::info!("cross-task control: own rank {own}, matched to {rank}");
    }
    Ok(Projector::new(u.columns(0, rank).into_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCell {
    pub n: usize,
    pub shots: Option<u32>,
    pub rows_used: usize,
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSweep {
    pub threshold: f64,
    pub cells: Vec<RankCell>,
    /// `(max − min) / mean` over cells that produced a rank.
    pub stability: Option<f64>,
}

/// Selected rank per `(n, K)` cell. Each cell uses the first `n` rows (in
/// file order) with `K` shots; an empty `shots` grid ignores shot counts.
pub fn rank_stability_sweep(
    acts: &ActivationSet,
    n_grid: &[usize],
    shots_grid: &[u32],
    threshold: f64,
) -> Result<RankSweep> {
    check_threshold(threshold)?;
    if n_grid.is_empty() {
        return Err(Error::InvalidParameter("empty sample-size grid".into()));
    }
    let shot_opts: Vec<Option<u32>> =
        if shots_grid.is_empty() { vec![None] } else { shots_grid.iter().copied().map(Some).collect() };
    let mut cells = Vec::new();
    for &k in &shot_opts {
        let pool: Vec<usize> = (0..acts.len()).filter(|&i| k.is_none_or(|k| acts.rows[i].shots == k)).collect();
        for &n in n_grid {
            let take = n.min(pool.len());
            let mut cell = RankCell { n, shots: k, rows_used: take, rank: None, notice: None };
            if take < 2 {
                cell.notice = Some(format!("only {take} rows; skipped"));
                log::warn!("rank sweep cell n={n} shots={k:?}: only {take} rows, skipped");
            } else {
                if take < n {
                    cell.notice = Some(format!("only {take} of {n} rows available"));
                }
                match estimate_subspace(&acts.select(&pool[..take]), threshold) {
                    Ok(est) => cell.rank = Some(est.rank),
                    Err(e @ Error::DegenerateInput(_)) => cell.notice = Some(e.to_string()),
                    Err(e) => return Err(e),
                }
            }
            cells.push(cell);
        }
    }
    let ranks: Vec<f64> = cells.iter().filter_map(|c| c.rank).map(|r| r as f64).collect();
    let stability = (!ranks.is_empty()).then(|| {
        let max = ranks.iter().copied().fold(f64::MIN, f64::max);
        let min = ranks.iter().copied().fold(f64::MAX, f64::min);
        (max - min) / (ranks.iter().sum::<f64>() / ranks.len() as f64)
    });
    Ok(RankSweep { threshold, cells, stability })
}

/// Principal angles between `Û` and the top left singular directions of
/// `C_{H,HW}` for the least-squares probe `W = (HᵀH)⁺HᵀY`.
pub fn probe_equivalence_angles(acts: &ActivationSet, est: &SubspaceEstimate) -> Result<Vec<f64>> {
    check_set(acts)?;
    let gram = acts.h.tr_mul(&acts.h);
    let hty = acts.h.tr_mul(&acts.y);
    let mut w = DMatrix::zeros(acts.dim(), acts.y.ncols());
    for (j, col) in hty.column_iter().enumerate() {
        w.set_column(j, &pinv_solve_symmetric(&gram, &col.into_owned()));
    }
    let fitted = &acts.h * w;
    let c = cross_covariance(&acts.h, &fitted, est.centered)?;
    let (u, _) = left_singular(&c)?;
    principal_angles(&est.u_hat, &u.columns(0, est.rank).into_owned())
}
