//! Ridge predictors and their exact decomposition in the `[U, U⊥]` basis.
//!
//! With `S = XᵀX / M` split into blocks `S11 = UᵀSU`, `S12 = UᵀSU⊥`,
//! `S22 = U⊥ᵀSU⊥`, and `A = S11 + λI`, `B = S12`, `D = S22 + λI`, the ridge
//! normal equations for `ŵ = Uα + U⊥γ` solve to
//!
//! ```text
//! β̂ = A⁻¹ Zᵀy / M = (ZᵀZ + MλI)⁻¹ Zᵀy
//! H = D − S21 A⁻¹ B
//! γ = H⁻¹ (T⊥ᵀy / M − S21 β̂)
//! α = β̂ − A⁻¹ B γ
//! ```
//!
//! and the prediction `⟨ŵ, x⟩` splits into the concept term `zᵀβ̂` plus the
//! leakage `Δ(x) = (tᵀ − zᵀA⁻¹B) γ`. For noiseless labels
//! `T⊥ᵀy / M − S21 β̂ = S21 (β − β̂)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::io::json::{matrix_rows, vector};
use crate::linalg::{factor_spd, min_eigenvalue, pinv_solve_symmetric, symmetrize};
use crate::model::{ConceptBasis, DemoSet, Task};

/// What to do when an unregularized system is singular.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingularPolicy {
    #[default]
    Error,
    Pseudoinverse,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge parameter must be > 0, got {lambda}")));
    }
    Ok(())
}

fn scaled_gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&(x.tr_mul(x) / x.nrows() as f64))
}

/// Ambient ridge `ŵ = (S + λI)⁻¹ (1/M) Σ xᵢyᵢ`.
pub fn ridge_ambient(demos: &DemoSet, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    if demos.is_empty() {
        return Ok(DVector::zeros(demos.dim()));
    }
    let m = demos.len() as f64;
    let mut system = scaled_gram(&demos.x);
    for i in 0..system.nrows() {
        system[(i, i)] += lambda;
    }
    let rhs = demos.x.tr_mul(&demos.y) / m;
    Ok(factor_spd(&system, "S + λI")?.solve_vec(&rhs))
}

/// Minimum-norm least squares in the ambient space, `S⁺ (1/M) Xᵀy`.
pub fn ridge_ambient_pinv(demos: &DemoSet) -> DVector<f64> {
    if demos.is_empty() {
        return DVector::zeros(demos.dim());
    }
    let m = demos.len() as f64;
    pinv_solve_symmetric(&scaled_gram(&demos.x), &(demos.x.tr_mul(&demos.y) / m))
}

/// The solved ridge system in the `[U, U⊥]` basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRidgeFit {
    /// `S11 + λI`.
    #[serde(with = "matrix_rows")]
    pub a: DMatrix<f64>,
    /// `S12`.
    #[serde(with = "matrix_rows")]
    pub b: DMatrix<f64>,
    /// `S22 + λI`.
    #[serde(with = "matrix_rows")]
    pub d: DMatrix<f64>,
    /// Schur complement `D − S21 A⁻¹ B`.
    #[serde(with = "matrix_rows")]
    pub h: DMatrix<f64>,
    /// `A⁻¹ B`.
    #[serde(with = "matrix_rows")]
    pub coupling: DMatrix<f64>,
    #[serde(with = "vector")]
    pub beta_hat: DVector<f64>,
    #[serde(with = "vector")]
    pub gamma: DVector<f64>,
    /// `Uᵀŵ = β̂ − A⁻¹Bγ`.
    #[serde(with = "vector")]
    pub alpha: DVector<f64>,
    #[serde(with = "vector")]
    pub w_hat: DVector<f64>,
    pub lambda: f64,
}

/// Prediction split into the concept term and off-subspace leakage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub f: f64,
    pub concept_term: f64,
    pub leakage: f64,
}

impl BlockRidgeFit {
    pub fn predict(&self, basis: &ConceptBasis, x: &DVector<f64>) -> Result<Prediction> {
        check_dims("query dimension", self.w_hat.len(), x.len())?;
        check_dims("basis rank", self.beta_hat.len(), basis.r())?;
        let (z, t) = basis.split(x)?;
        let concept_term = z.dot(&self.beta_hat);
        let off = t - self.coupling.tr_mul(&z);
        let leakage = off.dot(&self.gamma);
        Ok(Prediction { f: self.w_hat.dot(x), concept_term, leakage })
    }

    /// Concept-only predictor `(Uᵀx)ᵀβ̂`.
    pub fn concept_predict(&self, basis: &ConceptBasis, x: &DVector<f64>) -> Result<f64> {
        check_dims("query dimension", basis.d(), x.len())?;
        Ok(basis.u.tr_mul(x).dot(&self.beta_hat))
    }

    pub fn schur_min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.h)
    }
}

/// Quantities shared by the noiseless and noisy decompositions.
struct Blocks {
    t: DMatrix<f64>,
    s11: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
    h: DMatrix<f64>,
    coupling: DMatrix<f64>,
    beta_hat: DVector<f64>,
    h_factor: crate::linalg::SpdFactor,
    m: f64,
}

fn blocks(demos: &DemoSet, basis: &ConceptBasis, lambda: f64) -> Result<Blocks> {
    check_lambda(lambda)?;
    check_dims("demo dimension", basis.d(), demos.dim())?;
    if demos.is_empty() {
        return Err(Error::InvalidParameter("need at least one demonstration".into()));
    }
    let m = demos.len() as f64;
    let r = basis.r();
    let z = &demos.x * &basis.u;
    let t = &demos.x * &basis.u_perp;
    let s11 = symmetrize(&(z.tr_mul(&z) / m));
    let s12 = z.tr_mul(&t) / m;
    let s22 = symmetrize(&(t.tr_mul(&t) / m));
    let a = &s11 + DMatrix::identity(r, r) * lambda;
    let d = &s22 + DMatrix::identity(s22.nrows(), s22.ncols()) * lambda;
    let a_factor = factor_spd(&a, "A = S11 + λI")?;
    let coupling = a_factor.solve(&s12);
    let h = symmetrize(&(&d - s12.tr_mul(&coupling)));
    let h_factor = factor_spd(&h, "Schur complement H")?;
    let beta_hat = a_factor.solve_vec(&(z.tr_mul(&demos.y) / m));
    Ok(Blocks { t, s11, a, b: s12, d, h, coupling, beta_hat, h_factor, m })
}

fn assemble(blocks: Blocks, gamma: DVector<f64>, basis: &ConceptBasis, lambda: f64) -> BlockRidgeFit {
    let alpha = &blocks.beta_hat - &blocks.coupling * &gamma;
    let w_hat = &basis.u * &alpha + &basis.u_perp * &gamma;
    BlockRidgeFit {
        a: blocks.a,
        b: blocks.b,
        d: blocks.d,
        h: blocks.h,
        coupling: blocks.coupling,
        beta_hat: blocks.beta_hat,
        gamma,
        alpha,
        w_hat,
        lambda,
    }
}

/// Exact block decomposition for labels generated without noise by `task`.
///
/// `β̂` is computed from the labels; `γ = H⁻¹ S21 (β − β̂)` uses the task's
/// `β`. With noisy labels use [`block_decompose_noisy`] instead.
pub fn block_decompose(demos: &DemoSet, basis: &ConceptBasis, task: &Task, lambda: f64) -> Result<BlockRidgeFit> {
    check_dims("task rank", basis.r(), task.beta.len())?;
    let blocks = blocks(demos, basis, lambda)?;
    let gap = &task.beta - &blocks.beta_hat;
    let gamma = blocks.h_factor.solve_vec(&blocks.b.tr_mul(&gap));
    Ok(assemble(blocks, gamma, basis, lambda))
}

/// Exact block decomposition from labels alone, valid for noisy labels.
///
/// Writing `y = Zβ + ε`, the right-hand side `T⊥ᵀy / M − S21 β̂` equals
/// `S21 (β − β̂) + e_t` with `e_t = T⊥ᵀε / M`, and `β̂ = A⁻¹(S11 β + e_z)`.
pub fn block_decompose_noisy(demos: &DemoSet, basis: &ConceptBasis, lambda: f64) -> Result<BlockRidgeFit> {
    let blocks = blocks(demos, basis, lambda)?;
    let rhs = blocks.t.tr_mul(&demos.y) / blocks.m - blocks.b.tr_mul(&blocks.beta_hat);
    let gamma = blocks.h_factor.solve_vec(&rhs);
    Ok(assemble(blocks, gamma, basis, lambda))
}

/// Noise projections `e_z = Zᵀε / M` and `e_t = T⊥ᵀε / M`.
pub fn noise_projections(demos: &DemoSet, basis: &ConceptBasis) -> Option<(DVector<f64>, DVector<f64>)> {
    let eps = demos.noise.as_ref()?;
    let m = demos.len() as f64;
    let z = &demos.x * &basis.u;
    let t = &demos.x * &basis.u_perp;
    Some((z.tr_mul(eps) / m, t.tr_mul(eps) / m))
}

/// The population-style coordinate `A⁻¹ S11 β`, which equals the label
/// form of `β̂` when labels are noiseless.
pub fn beta_hat_from_task(demos: &DemoSet, basis: &ConceptBasis, task: &Task, lambda: f64) -> Result<DVector<f64>> {
    let b = blocks(demos, basis, lambda)?;
    Ok(factor_spd(&b.a, "A = S11 + λI")?.solve_vec(&(&b.s11 * &task.beta)))
}

/// Concept-space ridge `(ZᵀZ + MλI)⁻¹ Zᵀy`; at `λ = 0` this is least
/// squares on the concept coordinates.
pub fn ridge_concept(demos: &DemoSet, basis: &ConceptBasis, lambda: f64) -> Result<DVector<f64>> {
    ridge_concept_with(demos, basis, lambda, SingularPolicy::Error)
}

pub fn ridge_concept_with(
    demos: &DemoSet,
    basis: &ConceptBasis,
    lambda: f64,
    policy: SingularPolicy,
) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("ridge parameter must be >= 0, got {lambda}")));
    }
    check_dims("demo dimension", basis.d(), demos.dim())?;
    let r = basis.r();
    if demos.is_empty() {
        return Ok(DVector::zeros(r));
    }
    let m = demos.len() as f64;
    let z = &demos.x * &basis.u;
    let mut gram = symmetrize(&z.tr_mul(&z));
    for i in 0..r {
        gram[(i, i)] += m * lambda;
    }
    let rhs = z.tr_mul(&demos.y);
    if lambda > 0.0 {
        return Ok(factor_spd(&gram, "ZᵀZ + MλI")?.solve_vec(&rhs));
    }
    match (gram.clone().cholesky(), policy) {
        (Some(chol), _) if min_diag_ratio(&chol) > 1e-7 => Ok(chol.solve(&rhs)),
        (_, SingularPolicy::Pseudoinverse) => Ok(pinv_solve_symmetric(&gram, &rhs)),
        (_, SingularPolicy::Error) => Err(Error::RankDeficient(format!(
            "ZᵀZ is singular (min eigenvalue {:.3e}); pass a positive λ or opt into the pseudoinverse",
            min_eigenvalue(&gram)
        ))),
    }
}

fn min_diag_ratio(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let diag = chol.l_dirty().diagonal();
    let hi = diag.amax();
    if hi == 0.0 {
        return 0.0;
    }
    diag.iter().copied().fold(f64::INFINITY, f64::min) / hi
}

/// Conjugate Gaussian posterior on `β` under the prior `N(0, I_r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPosterior {
    #[serde(with = "vector")]
    pub mu: DVector<f64>,
    #[serde(with = "matrix_rows")]
    pub sigma: DMatrix<f64>,
    pub sigma2: f64,
}

/// `Σ = (I + ZᵀZ/σ²)⁻¹`, `μ = Σ Zᵀy / σ²`.
pub fn bayes_posterior(demos: &DemoSet, basis: &ConceptBasis, sigma2: f64) -> Result<ConceptPosterior> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("noise variance must be > 0, got {sigma2}")));
    }
    check_dims("demo dimension", basis.d(), demos.dim())?;
    let r = basis.r();
    let z = &demos.x * &basis.u;
    let precision = DMatrix::identity(r, r) + symmetrize(&z.tr_mul(&z)) / sigma2;
    let factor = factor_spd(&precision, "posterior precision")?;
    let sigma = symmetrize(&factor.solve(&DMatrix::identity(r, r)));
    let mu = factor.solve_vec(&(z.tr_mul(&demos.y) / sigma2));
    Ok(ConceptPosterior { mu, sigma, sigma2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_cov, sample_basis, sample_demos, sample_task, EigenProfile, Regime};

    fn instance(d: usize, r: usize, m: usize, sigma: f64, seed: u64) -> (ConceptBasis, Task, DemoSet) {
        let cov = make_cov(d, r, Regime::Nbd, 0.3, &EigenProfile::Geometric { condition: 5.0 }, seed).unwrap();
        let basis = sample_basis(d, r, seed + 1).unwrap();
        let task = sample_task(&basis, seed + 2);
        let demos = sample_demos(&cov, &basis, &task, m, sigma, seed + 3).unwrap();
        (basis, task, demos)
    }

    /// Independent dense solve through an explicit LU factorization.
    fn dense_ridge(demos: &DemoSet, lambda: f64) -> DVector<f64> {
        let m = demos.len() as f64;
        let d = demos.dim();
        let sys = demos.x.transpose() * &demos.x / m + DMatrix::identity(d, d) * lambda;
        let rhs = demos.x.transpose() * &demos.y / m;
        sys.lu().solve(&rhs).unwrap()
    }

    #[test]
    fn zero_labels_give_zero() {
        let (basis, _, mut demos) = instance(5, 2, 8, 0.0, 1);
        demos.y.fill(0.0);
        assert_eq!(ridge_ambient(&demos, 0.1).unwrap(), DVector::zeros(5));
        assert_eq!(ridge_concept(&demos, &basis, 0.1).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn ambient_matches_dense_solve() {
        let (_, _, demos) = instance(3, 1, 5, 0.5, 10);
        let w = ridge_ambient(&demos, 0.2).unwrap();
        assert!((w - dense_ridge(&demos, 0.2)).amax() < 1e-10);
    }

    #[test]
    fn heavy_shrinkage_bound() {
        let (_, _, demos) = instance(4, 2, 10, 0.3, 20);
        let lambda = 1e9;
        let w = ridge_ambient(&demos, lambda).unwrap();
        let moment = demos.x.tr_mul(&demos.y) / demos.len() as f64;
        assert!(w.norm() <= moment.norm() / lambda * (1.0 + 1e-6));
    }

    #[test]
    fn nonpositive_lambda_rejected() {
        let (basis, task, demos) = instance(4, 2, 10, 0.0, 30);
        assert!(matches!(ridge_ambient(&demos, 0.0), Err(Error::InvalidParameter(_))));
        assert!(block_decompose(&demos, &basis, &task, -1.0).is_err());
    }

    #[test]
    fn block_reassembly_matches_direct_solve() {
        let (basis, task, demos) = instance(6, 2, 12, 0.0, 40);
        let fit = block_decompose(&demos, &basis, &task, 0.05).unwrap();
        let direct = ridge_ambient(&demos, 0.05).unwrap();
        assert!((&fit.w_hat - &direct).amax() < 1e-9);
        assert!(fit.schur_min_eigenvalue() >= 0.05 - 1e-12);
        assert!((basis.u.tr_mul(&fit.w_hat) - &fit.alpha).amax() < 1e-9);
        assert!((basis.u_perp.tr_mul(&fit.w_hat) - &fit.gamma).amax() < 1e-9);
        let pop = beta_hat_from_task(&demos, &basis, &task, 0.05).unwrap();
        assert!((pop - &fit.beta_hat).amax() < 1e-10);
    }

    #[test]
    fn zero_cross_block_means_no_leakage() {
        // Inputs on the coordinate axes with disjoint support make S21 = 0.
        let basis = ConceptBasis::canonical(4, 2).unwrap();
        let x = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, //
                -0.3, 1.0, 0.0, 0.0, //
                0.0, 0.0, 2.0, 1.0, //
                0.0, 0.0, -1.0, 0.7,
            ],
        );
        let task = Task::from_beta(&basis, DVector::from_vec(vec![1.0, -2.0])).unwrap();
        let y = &x * &task.w;
        let demos = DemoSet::new(x, y, 0.0).unwrap();
        let fit = block_decompose(&demos, &basis, &task, 0.1).unwrap();
        assert!(fit.b.amax() == 0.0);
        assert_eq!(fit.gamma, DVector::zeros(2));
        let q = DVector::from_vec(vec![0.3, 0.1, -2.0, 4.0]);
        let p = fit.predict(&basis, &q).unwrap();
        assert_eq!(p.leakage, 0.0);
        assert!((p.f - p.concept_term).abs() < 1e-15);
        let nuisance = DVector::from_vec(vec![0.0, 0.0, 3.0, -1.0]);
        assert_eq!(fit.predict(&basis, &nuisance).unwrap().f, 0.0);
    }

    #[test]
    fn full_rank_concept_space_has_no_gamma() {
        let cov = make_cov(3, 3, Regime::Bd, 0.0, &EigenProfile::Identity, 0).unwrap();
        let basis = sample_basis(3, 3, 1).unwrap();
        let task = sample_task(&basis, 2);
        let demos = sample_demos(&cov, &basis, &task, 7, 0.0, 3).unwrap();
        let fit = block_decompose(&demos, &basis, &task, 0.2).unwrap();
        assert_eq!(fit.gamma.len(), 0);
        // In the rotated frame β̂ = (S + λI)⁻¹ S β.
        let z = &demos.x * &basis.u;
        let s = z.transpose() * &z / 7.0;
        let expect = (&s + DMatrix::identity(3, 3) * 0.2).lu().solve(&(&s * &task.beta)).unwrap();
        assert!((fit.beta_hat - expect).amax() < 1e-12);
    }

    #[test]
    fn prediction_identity() {
        let (basis, task, demos) = instance(8, 3, 20, 0.0, 50);
        let fit = block_decompose(&demos, &basis, &task, 0.1).unwrap();
        let x = DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin());
        let p = fit.predict(&basis, &x).unwrap();
        assert!((p.f - p.concept_term - p.leakage).abs() < 1e-9);
        assert!((p.f - fit.w_hat.dot(&x)).abs() == 0.0);
        assert!(fit.predict(&basis, &DVector::zeros(7)).is_err());
    }

    #[test]
    fn concept_ridge_interpolates_without_noise() {
        let (basis, task, demos) = instance(10, 3, 15, 0.0, 60);
        let b = ridge_concept(&demos, &basis, 0.0).unwrap();
        assert!((b - &task.beta).amax() < 1e-8);
    }

    #[test]
    fn concept_ridge_agrees_with_blocks() {
        let (basis, _, demos) = instance(7, 2, 30, 0.4, 70);
        let fit = block_decompose_noisy(&demos, &basis, 0.03).unwrap();
        let b = ridge_concept(&demos, &basis, 0.03).unwrap();
        assert!((b - &fit.beta_hat).amax() < 1e-10);
    }

    #[test]
    fn singular_least_squares_needs_opt_in() {
        let (basis, _, demos) = instance(6, 3, 2, 0.0, 80);
        assert!(matches!(ridge_concept(&demos, &basis, 0.0), Err(Error::RankDeficient(_))));
        let b = ridge_concept_with(&demos, &basis, 0.0, SingularPolicy::Pseudoinverse).unwrap();
        let z = &demos.x * &basis.u;
        assert!((&z * b - &demos.y).amax() < 1e-9);
    }

    #[test]
    fn ambient_pseudoinverse_interpolates() {
        let (_, _, demos) = instance(6, 2, 4, 0.0, 85);
        let w = ridge_ambient_pinv(&demos);
        assert!((&demos.x * w - &demos.y).amax() < 1e-9);
    }

    #[test]
    fn posterior_prior_and_equivalence() {
        let basis = sample_basis(4, 2, 0).unwrap();
        let empty = DemoSet::new(DMatrix::zeros(0, 4), DVector::zeros(0), 1.0).unwrap();
        let prior = bayes_posterior(&empty, &basis, 0.5).unwrap();
        assert_eq!(prior.mu, DVector::zeros(2));
        assert!((prior.sigma - DMatrix::identity(2, 2)).amax() < 1e-15);

        let (basis, _, demos) = instance(9, 3, 25, 0.7, 90);
        let post = bayes_posterior(&demos, &basis, 0.49).unwrap();
        let ridge = ridge_concept(&demos, &basis, 0.49 / 25.0).unwrap();
        assert!((&post.mu - ridge).norm() < 1e-9);
        let z = &demos.x * &basis.u;
        let direct = (DMatrix::identity(3, 3) + z.transpose() * &z / 0.49).try_inverse().unwrap();
        assert!((&post.sigma - direct).amax() < 1e-9);
        assert!(bayes_posterior(&demos, &basis, 0.0).is_err());
    }

    #[test]
    fn posterior_collapses_to_prior_for_huge_noise() {
        let (basis, _, demos) = instance(5, 2, 40, 1.0, 95);
        let post = bayes_posterior(&demos, &basis, 1e12).unwrap();
        let zy = (&demos.x * &basis.u).tr_mul(&demos.y);
        assert!(post.mu.norm() < 1e-6 * zy.norm());
    }

    #[test]
    fn noisy_decomposition_matches_direct_solve() {
        let (basis, _, demos) = instance(8, 2, 40, 0.5, 100);
        let fit = block_decompose_noisy(&demos, &basis, 0.02).unwrap();
        assert!((&fit.w_hat - ridge_ambient(&demos, 0.02).unwrap()).amax() < 1e-9);
    }

    #[test]
    fn noisy_reduces_to_noiseless() {
        let (basis, task, demos) = instance(8, 2, 40, 0.0, 110);
        let a = block_decompose(&demos, &basis, &task, 0.02).unwrap();
        let b = block_decompose_noisy(&demos, &basis, 0.02).unwrap();
        assert!((a.w_hat - b.w_hat).amax() < 1e-12);
        assert!((a.gamma - b.gamma).amax() < 1e-12);
    }

    #[test]
    fn noisy_gamma_formula() {
        use crate::model::{make_cov, sample_demos};
        let cov = make_cov(7, 2, Regime::Bd, 0.0, &EigenProfile::Identity, 1).unwrap();
        let basis = sample_basis(7, 2, 2).unwrap();
        let task = sample_task(&basis, 3);
        let demos = sample_demos(&cov, &basis, &task, 30, 0.8, 4).unwrap();
        let fit = block_decompose_noisy(&demos, &basis, 0.05).unwrap();
        let (e_z, e_t) = noise_projections(&demos, &basis).unwrap();
        let z = &demos.x * &basis.u;
        let s11 = z.tr_mul(&z) / 30.0;
        let beta_hat = fit.a.clone().lu().solve(&(s11 * &task.beta + e_z)).unwrap();
        assert!((&beta_hat - &fit.beta_hat).amax() < 1e-10);
        let rhs = fit.b.transpose() * (&task.beta - &beta_hat) + e_t;
        let gamma = fit.h.clone().lu().solve(&rhs).unwrap();
        assert!((gamma - &fit.gamma).amax() < 1e-10);
    }

    #[test]
    fn concept_predictor_ignores_nuisance_directions() {
        let (basis, _, demos) = instance(8, 2, 30, 0.5, 120);
        let fit = block_decompose_noisy(&demos, &basis, 0.1).unwrap();
        let x = DVector::from_fn(8, |i, _| i as f64 - 3.5);
        let v = &basis.u_perp * DVector::from_fn(6, |i, _| (i as f64).cos());
        let a = fit.concept_predict(&basis, &x).unwrap();
        let b = fit.concept_predict(&basis, &(&x + &v)).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}
