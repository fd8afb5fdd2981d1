//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{check_dims, Error, Result};
use crate::rng::Rng;

/// Condition number above which a symmetric solve falls back to an
/// eigenvalue-floored inverse.
pub const CONDITION_LIMIT: f64 = 1e12;

/// A factored symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Eigendecomposition with eigenvalues floored at `max / CONDITION_LIMIT`.
    Floored {
        vectors: DMatrix<f64>,
        inv_values: DVector<f64>,
    },
    /// Zero-sized system.
    Empty,
}

impl SpdFactor {
    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(rhs),
            SpdFactor::Floored { vectors, inv_values } => {
                let mut t = vectors.transpose() * rhs;
                for (mut row, s) in t.row_iter_mut().zip(inv_values.iter()) {
                    row *= *s;
                }
                vectors * t
            }
            SpdFactor::Empty => rhs.clone(),
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Cholesky(c) => c.solve(rhs),
            SpdFactor::Floored { vectors, inv_values } => {
                let t = (vectors.transpose() * rhs).component_mul(inv_values);
                vectors * t
            }
            SpdFactor::Empty => rhs.clone(),
        }
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Factors a symmetric positive-definite matrix for repeated solves.
///
/// Cholesky is used whenever it succeeds and the diagonal of the factor
/// suggests a condition number below [`CONDITION_LIMIT`]; past that limit
/// the solve uses an eigenvalue floor and logs a warning. A matrix that is
/// not positive definite is an error naming its smallest eigenvalue.
pub fn factor_spd(m: &DMatrix<f64>, context: &str) -> Result<SpdFactor> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{context}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(SpdFactor::Empty);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput(format!("{context}: non-finite entry")));
    }
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(chol) => {
            let diag = chol.l_dirty().diagonal();
            let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let estimate = (hi / lo).powi(2);
            if estimate.is_finite() && estimate <= CONDITION_LIMIT {
                return Ok(SpdFactor::Cholesky(chol));
            }
            log::warn!(
                "{context}: condition estimate {estimate:.3e} exceeds {CONDITION_LIMIT:e}, using eigenvalue-floored solve"
            );
            floored(sym, context)
        }
        None => Err(Error::NotPositiveDefinite { context: context.to_string(), min_eigenvalue: min_eigenvalue(&sym) }),
    }
}

fn floored(sym: DMatrix<f64>, context: &str) -> Result<SpdFactor> {
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { context: context.to_string(), min_eigenvalue: min });
    }
    let floor = max / CONDITION_LIMIT;
    let inv_values = eig.eigenvalues.map(|v| 1.0 / v.max(floor));
    Ok(SpdFactor::Floored { vectors: eig.eigenvectors, inv_values })
}

/// Moore-Penrose pseudoinverse solve `A⁺ b` for a symmetric matrix.
pub fn pinv_solve_symmetric(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if m.is_empty() {
        return rhs.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax();
    let tol = scale * f64::EPSILON * m.nrows() as f64;
    let t = eig.eigenvectors.transpose() * rhs;
    let t = t.zip_map(&eig.eigenvalues, |a, l| if l.abs() > tol { a / l } else { 0.0 });
    &eig.eigenvectors * t
}

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    // Column-major fill order is part of the reproducibility contract.
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn standard_normal_vector(len: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormal basis of the column span of a full-column-rank matrix, with
/// the diagonal of the triangular factor made positive. Applied to a
/// Gaussian matrix this is a Haar draw on the Stiefel manifold.
pub fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return m;
    }
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn haar_basis(d: usize, r: usize, rng: &mut Rng) -> DMatrix<f64> {
    orthonormalize(standard_normal_matrix(d, r, rng))
}

/// Orthonormal basis (d × (d − r)) of the orthogonal complement of the
/// span of an orthonormal d × r basis.
pub fn complement_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, r) = u.shape();
    if r == 0 {
        return DMatrix::identity(d, d);
    }
    if r >= d {
        return DMatrix::zeros(d, 0);
    }
    let qr = u.clone().qr();
    let mut qt = DMatrix::<f64>::identity(d, d);
    qr.q_tr_mul(&mut qt);
    qt.transpose().columns(r, d - r).into_owned()
}

/// Thin singular value decomposition: `d × k` left vectors, `k = min(d, n)`,
/// singular values in descending order.
///
/// Routed through faer because nalgebra 0.35's default SVD can return a
/// factorization that does not reconstruct exactly rank-deficient input.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn thin_svd(m: &DMatrix<f64>) -> Result<ThinSvd> {
    let (d, n) = m.shape();
    let k = d.min(n);
    if k == 0 {
        return Ok(ThinSvd { u: DMatrix::zeros(d, 0), singular_values: Vec::new() });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("SVD input has a non-finite entry".into()));
    }
    let svd = to_faer(m).thin_svd().map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    let (fu, fs) = (svd.U(), svd.S());
    Ok(ThinSvd { u: DMatrix::from_fn(d, k, |i, j| fu[(i, j)]), singular_values: (0..k).map(|i| fs[i]).collect() })
}

/// Singular values in descending order; empty for an empty matrix.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("SVD input has a non-finite entry".into()));
    }
    let mut s = to_faer(m).singular_values().map_err(|e| Error::Numeric(format!("SVD did not converge: {e:?}")))?;
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Flips each column so its largest-magnitude entry is positive.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// ‖UᵀU − I‖_F.
pub fn orthonormality_error(u: &DMatrix<f64>) -> f64 {
    let g = u.transpose() * u;
    (g - DMatrix::identity(u.ncols(), u.ncols())).norm()
}

/// Principal angles (radians, ascending) between the spans of two
/// orthonormal bases of equal shape.
///
/// Cosines come from the singular values of `AᵀB`, clamped to [0, 1].
/// Angles whose cosine exceeds 1/√2 are taken from the matching sine
/// (singular values of `B − A AᵀB`), which keeps near-zero angles accurate
/// far below the √ε floor of a plain arccos.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_dims("principal angles: ambient dimension", a.nrows(), b.nrows())?;
    check_dims("principal angles: rank", a.ncols(), b.ncols())?;
    let k = a.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let cross = a.transpose() * b;
    let cos = singular_values(&cross)?;
    let residual = b - a * &cross;
    // cos is descending; sin is descending, so reverse it to pair with cos.
    let mut sines = singular_values(&residual)?;
    sines.reverse();
    Ok((0..k)
        .map(|i| {
            let c = cos[i].clamp(0.0, 1.0);
            if c * c >= 0.5 {
                sines[i].clamp(0.0, 1.0).asin()
            } else {
                c.acos()
            }
        })
        .collect())
}
