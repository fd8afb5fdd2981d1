//! Recovering the concept subspace from task-conditioned first moments.
//!
//! For task `t` with `w_t = Uβ_t` and inputs `x ~ N(0, Λ)`, the moment
//! `m_t = E[xy | t] = Λ U β_t`. Stacking `T` tasks gives `G = Λ U B`, so the
//! left singular vectors of `Λ⁻¹G` span `span(U)` whenever `B` has rank
//! `r`. The unconditional moment averages `β_t` away and carries no
//! information about `U` under a zero-mean task prior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::io::json::matrix_rows;
use crate::linalg::{
    factor_spd, fix_column_signs, principal_angles, standard_normal_matrix, symmetrize, thin_svd, ThinSvd,
};
use crate::model::{DemoSet, Task};
use crate::rng::Rng;

/// Singular values below this are reported as rank deficiency.
pub const RANK_WARNING_LEVEL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentPanel {
    /// `d × T`, one column per task.
    #[serde(with = "matrix_rows")]
    pub moments: DMatrix<f64>,
    /// Known input covariance.
    #[serde(with = "matrix_rows")]
    pub lambda: DMatrix<f64>,
    pub sample_counts: Vec<usize>,
    /// Pooled second moment of all inputs, for plug-in whitening.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_matrix")]
    pub empirical_lambda: Option<DMatrix<f64>>,
}

mod opt_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(serde::Serialize, serde::Deserialize)]
    struct Wrap(#[serde(with = "crate::io::json::matrix_rows")] DMatrix<f64>);

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        match m {
            Some(m) => s.serialize_some(&Wrap(m.clone())),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

impl MomentPanel {
    /// Exact population moments `m_t = Λ w_t`.
    pub fn population(lambda: DMatrix<f64>, tasks: &[Task]) -> Result<Self> {
        check_lambda(&lambda)?;
        if tasks.is_empty() {
            return Err(Error::InvalidParameter("need at least one task".into()));
        }
        let d = lambda.nrows();
        let mut moments = DMatrix::zeros(d, tasks.len());
        for (j, t) in tasks.iter().enumerate() {
            check_dims("task dimension", d, t.w.len())?;
            moments.set_column(j, &(&lambda * &t.w));
        }
        Ok(MomentPanel { moments, lambda, sample_counts: vec![0; tasks.len()], empirical_lambda: None })
    }

    pub fn tasks(&self) -> usize {
        self.moments.ncols()
    }

    pub fn dim(&self) -> usize {
        self.moments.nrows()
    }

    /// Average moment over tasks.
    pub fn pooled(&self) -> DVector<f64> {
        self.moments.column_mean()
    }
}

fn check_lambda(lambda: &DMatrix<f64>) -> Result<()> {
    if !lambda.is_square() || lambda.is_empty() {
        return Err(Error::DimensionMismatch("Λ must be a non-empty square matrix".into()));
    }
    factor_spd(lambda, "Λ").map(|_| ())
}

/// `m̂_t = (1/M_t) Σᵢ x_{ti} y_{ti}` for each task's demonstrations.
pub fn estimate_moments(demos: &[DemoSet], lambda: DMatrix<f64>) -> Result<MomentPanel> {
    check_lambda(&lambda)?;
    if demos.is_empty() {
        return Err(Error::InvalidParameter("need at least one task".into()));
    }
    let d = lambda.nrows();
    let mut moments = DMatrix::zeros(d, demos.len());
    let mut gram = DMatrix::zeros(d, d);
    let mut total = 0usize;
    for (j, set) in demos.iter().enumerate() {
        check_dims("demo dimension", d, set.dim())?;
        if set.is_empty() {
            return Err(Error::InvalidParameter(format!("task {j} has no demonstrations")));
        }
        moments.set_column(j, &(set.x.tr_mul(&set.y) / set.len() as f64));
        gram += set.x.tr_mul(&set.x);
        total += set.len();
    }
    Ok(MomentPanel {
        moments,
        lambda,
        sample_counts: demos.iter().map(DemoSet::len).collect(),
        empirical_lambda: Some(symmetrize(&(gram / total as f64))),
    })
}

/// Which covariance `Λ⁻¹` uses before the SVD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Whitening {
    #[default]
    Known,
    /// Pooled empirical second moment of the inputs.
    Empirical,
    /// Skip whitening and use `G` directly.
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRecovery {
    #[serde(with = "matrix_rows")]
    pub u_hat: DMatrix<f64>,
    /// All singular values of the whitened moment matrix, descending.
    pub singular_values: Vec<f64>,
    /// `σ_r / σ_{r+1}` when there is an `(r+1)`-th value.
    pub gap: Option<f64>,
    pub rank_warning: Option<String>,
    /// Principal angles to a reference basis, once compared.
    pub angles: Option<Vec<f64>>,
}

impl SubspaceRecovery {
    pub fn compare(&mut self, reference: &DMatrix<f64>) -> Result<&[f64]> {
        let angles = principal_angles(reference, &self.u_hat)?;
        Ok(self.angles.insert(angles))
    }

    pub fn max_angle(&self) -> Option<f64> {
        self.angles.as_ref().map(|a| a.iter().copied().fold(0.0, f64::max))
    }
}

pub fn recover_subspace(panel: &MomentPanel, r: usize) -> Result<SubspaceRecovery> {
    recover_subspace_with(panel, r, Whitening::Known)
}

fn whiten(panel: &MomentPanel, mode: Whitening) -> Result<DMatrix<f64>> {
    match mode {
        Whitening::Known => Ok(factor_spd(&panel.lambda, "Λ")?.solve(&panel.moments)),
        Whitening::Empirical => {
            let lam = panel
                .empirical_lambda
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("panel carries no empirical covariance".into()))?;
            Ok(factor_spd(lam, "empirical Λ")?.solve(&panel.moments))
        }
        Whitening::Skip => Ok(panel.moments.clone()),
    }
}

/// Top-`r` left singular vectors of `Λ⁻¹G`, signs fixed so each column's
/// largest-magnitude entry is positive.
pub fn recover_subspace_with(panel: &MomentPanel, r: usize, whitening: Whitening) -> Result<SubspaceRecovery> {
    if r == 0 || r > panel.dim() {
        return Err(Error::InvalidParameter(format!("rank {r} outside 1..={}", panel.dim())));
    }
    if panel.tasks() < r {
        return Err(Error::InvalidParameter(format!("need at least r = {r} tasks, got {}", panel.tasks())));
    }
    let g = whiten(panel, whitening)?;
    let ThinSvd { u, singular_values } = thin_svd(&g)?;
    let mut u_hat = u.columns(0, r).into_owned();
    fix_column_signs(&mut u_hat);
    let gap = singular_values.get(r).map(|next| singular_values[r - 1] / next);
    let rank_warning = (singular_values[r - 1] < RANK_WARNING_LEVEL).then(|| {
        format!(
            "σ_{r} = {:.3e} is below {RANK_WARNING_LEVEL:e}; the task coefficients may not span r dimensions",
            singular_values[r - 1]
        )
    });
    if let Some(w) = &rank_warning {
        log::warn!("{w}");
    }
    Ok(SubspaceRecovery { u_hat, singular_values, gap, rank_warning, angles: None })
}

/// The best a single unconditional moment can do.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledRecovery {
    /// `‖mean_t m_t‖`.
    pub pooled_norm: f64,
    /// The whitened pooled direction (when non-zero) completed to rank `r`
    /// with coordinate axes.
    #[serde(with = "matrix_rows")]
    pub u_hat: DMatrix<f64>,
    pub angles: Option<Vec<f64>>,
}

impl PooledRecovery {
    pub fn max_angle(&self) -> Option<f64> {
        self.angles.as_ref().map(|a| a.iter().copied().fold(0.0, f64::max))
    }
}

/// Attempts recovery from the pooled moment alone. A single vector spans
/// at most one direction, so for `r > 1` the rest of the basis is an
/// arbitrary completion and the largest principal angle to `U` stays large.
pub fn recover_from_pooled(panel: &MomentPanel, r: usize, reference: Option<&DMatrix<f64>>) -> Result<PooledRecovery> {
    let d = panel.dim();
    if r == 0 || r > d {
        return Err(Error::InvalidParameter(format!("rank {r} outside 1..={d}")));
    }
    let pooled = panel.pooled();
    let whitened = factor_spd(&panel.lambda, "Λ")?.solve_vec(&pooled);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(r);
    if whitened.norm() > 1e-12 {
        cols.push(&whitened / whitened.norm());
    }
    for i in 0..d {
        if cols.len() == r {
            break;
        }
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                e -= c * c.dot(&e);
            }
        }
        if e.norm() > 1e-8 {
            cols.push(&e / e.norm());
        }
    }
    let u_hat = DMatrix::from_columns(&cols);
    let angles = reference.map(|u| principal_angles(u, &u_hat)).transpose()?;
    Ok(PooledRecovery { pooled_norm: pooled.norm(), u_hat, angles })
}

/// Draws `n` demonstrations with inputs `N(0, Λ)` given in ambient
/// coordinates and labels `⟨w, x⟩ + σε`.
pub fn sample_ambient_demos(
    lambda: &DMatrix<f64>,
    w: &DVector<f64>,
    n: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<DemoSet> {
    check_dims("task dimension", lambda.nrows(), w.len())?;
    let chol = symmetrize(lambda).cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        context: "Λ".into(),
        min_eigenvalue: crate::linalg::min_eigenvalue(lambda),
    })?;
    let x = standard_normal_matrix(n, lambda.nrows(), rng) * chol.l().transpose();
    let mut y = &x * w;
    let noise = if sigma > 0.0 {
        let eps = crate::linalg::standard_normal_vector(n, rng) * sigma;
        y += &eps;
        Some(eps)
    } else {
        None
    };
    Ok(DemoSet { x, y, sigma, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_basis, sample_task};
    use crate::rng::{derive_seed, rng_from_seed};

    fn tasks(basis: &crate::model::ConceptBasis, n: usize, seed: u64) -> Vec<Task> {
        (0..n).map(|i| sample_task(basis, derive_seed(seed, &[i as u64]))).collect()
    }

    #[test]
    fn exact_moments_recover_span() {
        let basis = sample_basis(12, 3, 1).unwrap();
        let lam = DMatrix::from_fn(12, 12, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
        let panel = MomentPanel::population(lam, &tasks(&basis, 6, 2)).unwrap();
        let mut rec = recover_subspace(&panel, 3).unwrap();
        rec.compare(&basis.u).unwrap();
        assert!(rec.max_angle().unwrap() < 1e-8);
        assert!(crate::linalg::orthonormality_error(&rec.u_hat) < 1e-10);
        assert!(rec.gap.unwrap() > 1e6);
        assert!(rec.rank_warning.is_none());
    }

    #[test]
    fn too_few_tasks() {
        let basis = sample_basis(8, 3, 1).unwrap();
        let panel = MomentPanel::population(DMatrix::identity(8, 8), &tasks(&basis, 2, 3)).unwrap();
        assert!(matches!(recover_subspace(&panel, 3), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn collinear_tasks_raise_warning() {
        let basis = sample_basis(6, 2, 4).unwrap();
        let t = sample_task(&basis, 5);
        let panel = MomentPanel::population(DMatrix::identity(6, 6), &[t.clone(), t]).unwrap();
        let rec = recover_subspace(&panel, 2).unwrap();
        assert!(rec.rank_warning.is_some());
    }

    #[test]
    fn zero_labels_zero_moments() {
        let mut rng = rng_from_seed(1);
        let demos = sample_ambient_demos(&DMatrix::identity(3, 3), &DVector::zeros(3), 50, 0.0, &mut rng).unwrap();
        let panel = estimate_moments(&[demos], DMatrix::identity(3, 3)).unwrap();
        assert_eq!(panel.moments, DMatrix::zeros(3, 1));
    }

    #[test]
    fn empirical_moment_converges() {
        let mut rng = rng_from_seed(2);
        let mut w = DVector::zeros(4);
        w[0] = 1.0;
        let lam = DMatrix::identity(4, 4);
        let clean = sample_ambient_demos(&lam, &w, 100_000, 0.0, &mut rng).unwrap();
        let noisy = sample_ambient_demos(&lam, &w, 100_000, 1.0, &mut rng).unwrap();
        let panel = estimate_moments(&[clean, noisy], lam).unwrap();
        assert!((panel.moments.column(0) - &w).norm() < 0.05);
        assert!((panel.moments.column(1) - &w).norm() < 0.05);
        assert_eq!(panel.sample_counts, vec![100_000, 100_000]);
    }

    #[test]
    fn empty_task_is_an_error() {
        let empty = DemoSet::new(DMatrix::zeros(0, 3), DVector::zeros(0), 0.0).unwrap();
        assert!(estimate_moments(&[empty], DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn pooled_moment_cannot_identify() {
        let basis = sample_basis(32, 4, 7).unwrap();
        let ts = tasks(&basis, 4000, 8);
        let panel = MomentPanel::population(DMatrix::identity(32, 32), &ts).unwrap();
        let per_task = ts.iter().map(|t| t.w.norm()).sum::<f64>() / ts.len() as f64;
        let rec = recover_from_pooled(&panel, 4, Some(&basis.u)).unwrap();
        assert!(rec.pooled_norm < 0.05 * per_task);
        assert!(rec.max_angle().unwrap() > 1.0);
    }
}
