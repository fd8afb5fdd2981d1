//! Synthetic data from the concept-subspace task family.
//!
//! Inputs are Gaussian with a covariance given in block form relative to a
//! concept basis `[U, U⊥]`; tasks vary only inside `span(U)` (`w = Uβ`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::io::json::{matrix_rows, vector};
use crate::linalg::{
    haar_basis, min_eigenvalue, orthonormalize, standard_normal_matrix, standard_normal_vector, symmetrize,
};
use crate::rng::{rng_from_seed, Rng};

/// Eigenvalue floor used when an assembled near-block-diagonal covariance
/// has to be pushed back into the positive-definite cone.
pub const PD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Exact block diagonality, `Λ12 = 0`.
    Bd,
    /// Near block diagonality, `‖Λ12‖_op ≤ ρ`.
    Nbd,
}

/// Spectrum of the diagonal blocks of Λ.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EigenProfile {
    /// Both diagonal blocks are identities.
    #[default]
    Identity,
    /// Explicit eigenvalues for each block, placed in a random eigenbasis.
    Blocks { concept: Vec<f64>, nuisance: Vec<f64> },
    /// Eigenvalues decaying geometrically from 1 to `1 / condition` over all
    /// `d` coordinates; the first `r` go to the concept block.
    Geometric { condition: f64 },
}

/// Covariance of the inputs, expressed in concept coordinates `(z, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovSpec {
    pub d: usize,
    pub r: usize,
    #[serde(with = "matrix_rows")]
    pub lambda11: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub lambda22: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub lambda12: DMatrix<f64>,
    pub rho: f64,
}

impl CovSpec {
    /// Builds and validates a covariance from explicit blocks.
    pub fn from_blocks(
        lambda11: DMatrix<f64>,
        lambda22: DMatrix<f64>,
        lambda12: DMatrix<f64>,
        rho: f64,
    ) -> Result<Self> {
        let r = lambda11.nrows();
        let d = r + lambda22.nrows();
        check_dims("lambda11 columns", r, lambda11.ncols())?;
        check_dims("lambda22 columns", d - r, lambda22.ncols())?;
        check_dims("lambda12 rows", r, lambda12.nrows())?;
        check_dims("lambda12 columns", d - r, lambda12.ncols())?;
        let cov = CovSpec { d, r, lambda11, lambda22, lambda12, rho };
        cov.validate()?;
        Ok(cov)
    }

    pub fn identity(d: usize, r: usize) -> Result<Self> {
        check_rank(d, r)?;
        Ok(CovSpec {
            d,
            r,
            lambda11: DMatrix::identity(r, r),
            lambda22: DMatrix::identity(d - r, d - r),
            lambda12: DMatrix::zeros(r, d - r),
            rho: 0.0,
        })
    }

    pub fn is_block_diagonal(&self) -> bool {
        self.lambda12.iter().all(|&v| v == 0.0)
    }

    pub fn cross_operator_norm(&self) -> f64 {
        operator_norm(&self.lambda12)
    }

    /// The full covariance in `(z, t)` coordinates.
    pub fn assembled(&self) -> DMatrix<f64> {
        let (d, r) = (self.d, self.r);
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (r, r)).copy_from(&self.lambda11);
        m.view_mut((r, r), (d - r, d - r)).copy_from(&self.lambda22);
        m.view_mut((0, r), (r, d - r)).copy_from(&self.lambda12);
        m.view_mut((r, 0), (d - r, r)).copy_from(&self.lambda12.transpose());
        m
    }

    /// The covariance of `x = U z + U⊥ t` in ambient coordinates.
    pub fn ambient(&self, basis: &ConceptBasis) -> Result<DMatrix<f64>> {
        check_dims("basis ambient dimension", self.d, basis.d())?;
        check_dims("basis rank", self.r, basis.r())?;
        let q = basis.full();
        Ok(symmetrize(&(&q * self.assembled() * q.transpose())))
    }

    pub fn validate(&self) -> Result<()> {
        let lam = self.assembled();
        if (&lam - lam.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidParameter("covariance blocks are not symmetric".into()));
        }
        let min = min_eigenvalue(&lam);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite { context: "assembled covariance".into(), min_eigenvalue: min });
        }
        let norm = self.cross_operator_norm();
        if norm > self.rho + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "cross block operator norm {norm:.6} exceeds rho {}",
                self.rho
            )));
        }
        Ok(())
    }
}

pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    crate::linalg::singular_values(m).ok().and_then(|s| s.first().copied()).unwrap_or(f64::NAN)
}

fn check_rank(d: usize, r: usize) -> Result<()> {
    if r == 0 || r > d {
        return Err(Error::InvalidParameter(format!("need 1 <= r <= d, got r={r}, d={d}")));
    }
    Ok(())
}

fn block_with_spectrum(values: &[f64], rng: &mut Rng, which: &str) -> Result<DMatrix<f64>> {
    if let Some((i, &v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NotPositiveDefinite {
            context: format!("{which} eigen profile entry {i}"),
            min_eigenvalue: v,
        });
    }
    let n = values.len();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let q = haar_basis(n, n, rng);
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(values));
    Ok(symmetrize(&(&q * diag * q.transpose())))
}

/// Builds a covariance in the requested regime.
///
/// Under `Nbd` the cross block has i.i.d. Gaussian entries rescaled to
/// operator norm `rho`. If the assembled matrix then has an eigenvalue
/// below [`PD_FLOOR`] it is projected back by flooring its spectrum, and
/// the cross block is shrunk again if the projection pushed its norm past
/// `rho`.
pub fn make_cov(d: usize, r: usize, regime: Regime, rho: f64, profile: &EigenProfile, seed: u64) -> Result<CovSpec> {
    check_rank(d, r)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must be >= 0, got {rho}")));
    }
    if regime == Regime::Bd && rho != 0.0 {
        return Err(Error::InvalidParameter("block-diagonal regime requires rho = 0".into()));
    }
    let mut rng = rng_from_seed(seed);
    let (lambda11, lambda22) = match profile {
        EigenProfile::Identity => (DMatrix::identity(r, r), DMatrix::identity(d - r, d - r)),
        EigenProfile::Blocks { concept, nuisance } => {
            check_dims("concept eigenvalue count", r, concept.len())?;
            check_dims("nuisance eigenvalue count", d - r, nuisance.len())?;
            (block_with_spectrum(concept, &mut rng, "concept")?, block_with_spectrum(nuisance, &mut rng, "nuisance")?)
        }
        EigenProfile::Geometric { condition } => {
            if !(*condition >= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "geometric profile needs condition >= 1, got {condition}"
                )));
            }
            let values: Vec<f64> =
                (0..d).map(|i| if d == 1 { 1.0 } else { condition.powf(-(i as f64) / (d as f64 - 1.0)) }).collect();
            (
                block_with_spectrum(&values[..r], &mut rng, "concept")?,
                block_with_spectrum(&values[r..], &mut rng, "nuisance")?,
            )
        }
    };

    let lambda12 = if rho == 0.0 || r == d {
        DMatrix::zeros(r, d - r)
    } else {
        let g = standard_normal_matrix(r, d - r, &mut rng);
        let norm = operator_norm(&g);
        g * (rho / norm)
    };

    let mut cov = CovSpec { d, r, lambda11, lambda22, lambda12, rho };

    let assembled = cov.assembled();
    let min = min_eigenvalue(&assembled);
    if min < PD_FLOOR {
        let eig = nalgebra::SymmetricEigen::new(assembled);
        let floored = eig.eigenvalues.map(|v| v.max(PD_FLOOR));
        let projected =
            symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose()));
        cov.lambda11 = projected.view((0, 0), (r, r)).into_owned();
        cov.lambda22 = projected.view((r, r), (d - r, d - r)).into_owned();
        cov.lambda12 = projected.view((0, r), (r, d - r)).into_owned();
        let norm = cov.cross_operator_norm();
        if norm > rho {
            cov.lambda12 *= rho / norm;
        }
    }
    cov.validate()?;
    Ok(cov)
}

/// Orthonormal concept basis `U` with its complement `U⊥`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBasis {
    #[serde(with = "matrix_rows")]
    pub u: DMatrix<f64>,
    #[serde(with = "matrix_rows")]
    pub u_perp: DMatrix<f64>,
}

impl ConceptBasis {
    /// Completes an orthonormal `d × r` matrix with its complement.
    pub fn from_basis(u: DMatrix<f64>) -> Result<Self> {
        let err = crate::linalg::orthonormality_error(&u);
        if err > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "basis columns are not orthonormal (‖UᵀU − I‖_F = {err:.3e})"
            )));
        }
        let u_perp = crate::linalg::complement_basis(&u);
        Ok(ConceptBasis { u, u_perp })
    }

    /// The first `r` standard basis vectors.
    pub fn canonical(d: usize, r: usize) -> Result<Self> {
        check_rank(d, r)?;
        let full = DMatrix::<f64>::identity(d, d);
        Ok(ConceptBasis { u: full.columns(0, r).into_owned(), u_perp: full.columns(r, d - r).into_owned() })
    }

    pub fn d(&self) -> usize {
        self.u.nrows()
    }

    pub fn r(&self) -> usize {
        self.u.ncols()
    }

    /// `[U, U⊥]` as one orthogonal matrix.
    pub fn full(&self) -> DMatrix<f64> {
        let (d, r) = (self.d(), self.r());
        let mut q = DMatrix::zeros(d, d);
        q.columns_mut(0, r).copy_from(&self.u);
        q.columns_mut(r, d - r).copy_from(&self.u_perp);
        q
    }

    /// Splits `x` into concept coordinates `z = Uᵀx` and nuisance
    /// coordinates `t = U⊥ᵀx`.
    pub fn split(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        check_dims("vector length", self.d(), x.len())?;
        Ok((self.u.tr_mul(x), self.u_perp.tr_mul(x)))
    }
}

/// Haar-random concept basis.
pub fn sample_basis(d: usize, r: usize, seed: u64) -> Result<ConceptBasis> {
    check_rank(d, r)?;
    let mut rng = rng_from_seed(seed);
    let q = orthonormalize(standard_normal_matrix(d, d, &mut rng));
    Ok(ConceptBasis { u: q.columns(0, r).into_owned(), u_perp: q.columns(r, d - r).into_owned() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    #[serde(with = "vector")]
    pub beta: DVector<f64>,
    #[serde(with = "vector")]
    pub w: DVector<f64>,
}

impl Task {
    pub fn from_beta(basis: &ConceptBasis, beta: DVector<f64>) -> Result<Self> {
        check_dims("beta length", basis.r(), beta.len())?;
        let w = &basis.u * &beta;
        Ok(Task { beta, w })
    }

    pub fn zero(basis: &ConceptBasis) -> Self {
        Task { beta: DVector::zeros(basis.r()), w: DVector::zeros(basis.d()) }
    }
}

/// Draws `β ~ N(0, I_r)` and sets `w = Uβ`.
pub fn sample_task(basis: &ConceptBasis, seed: u64) -> Task {
    let mut rng = rng_from_seed(seed);
    let beta = standard_normal_vector(basis.r(), &mut rng);
    let w = &basis.u * &beta;
    Task { beta, w }
}

/// Demonstrations `(X, y)` with `y = Xw + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: f64,
    /// The label noise that was added, when known.
    pub noise: Option<DVector<f64>>,
}

impl DemoSet {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, sigma: f64) -> Result<Self> {
        check_dims("label count", x.nrows(), y.len())?;
        Ok(DemoSet { x, y, sigma, noise: None })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws `M` inputs from `N(0, Λ)` (Cholesky factor of Λ in concept
/// coordinates, rotated into the ambient space) with labels `⟨w, x⟩ + σ ε`.
pub fn sample_demos(
    cov: &CovSpec,
    basis: &ConceptBasis,
    task: &Task,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<DemoSet> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one demonstration".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut rng = rng_from_seed(seed);
    let x = sample_inputs(cov, basis, m, &mut rng)?;
    check_dims("task dimension", cov.d, task.w.len())?;
    let mut y = &x * &task.w;
    let noise = if sigma > 0.0 {
        let eps = standard_normal_vector(m, &mut rng) * sigma;
        y += &eps;
        Some(eps)
    } else {
        None
    };
    Ok(DemoSet { x, y, sigma, noise })
}

/// `m` rows drawn i.i.d. from `N(0, Λ)`.
pub fn sample_inputs(cov: &CovSpec, basis: &ConceptBasis, m: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
    check_dims("basis ambient dimension", cov.d, basis.d())?;
    check_dims("basis rank", cov.r, basis.r())?;
    let chol = cov.assembled().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        context: "covariance Cholesky".into(),
        min_eigenvalue: min_eigenvalue(&cov.assembled()),
    })?;
    let g = standard_normal_matrix(m, cov.d, rng);
    let coords = g * chol.l().transpose();
    Ok(coords * basis.full().transpose())
}
