//! Synthetic activation worlds with planted structure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationSet, Condition, RowLabel};
use crate::error::{Error, Result};
use crate::intervention::ReadoutModel;
use crate::linalg::{complement_basis, haar_basis, orthonormalize, standard_normal_matrix, standard_normal_vector};
use crate::rng::{derived_rng, Rng};

/// Activations `H = Z S Uᵀ + ν G` with continuous supervision `Y = Z R`,
/// so `C_HY` has exactly `rank` strong directions along `U`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedActivations {
    pub n: usize,
    pub d: usize,
    pub rank: usize,
    /// Columns of `Y`; at least `rank`.
    pub outputs: usize,
    /// Per-direction signal scales, strongest first.
    pub scales: Vec<f64>,
    pub noise: f64,
    pub shots: u32,
    pub task: String,
    pub seed: u64,
}

impl PlantedActivations {
    pub fn rank_five(n: usize, d: usize, seed: u64) -> Self {
        PlantedActivations {
            n,
            d,
            rank: 5,
            outputs: 8,
            scales: vec![5.0, 4.0, 3.0, 2.5, 2.0],
            noise: 0.5,
            shots: 12,
            task: "planted".into(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.rank > self.d || self.outputs < self.rank {
            return Err(Error::InvalidParameter(format!(
                "need 1 ≤ rank ≤ d and outputs ≥ rank (rank {}, d {}, outputs {})",
                self.rank, self.d, self.outputs
            )));
        }
        if self.scales.len() != self.rank {
            return Err(Error::InvalidParameter("one scale per planted direction".into()));
        }
        Ok(())
    }

    /// Draws the set with a Haar-random `U`.
    pub fn generate(&self) -> Result<(ActivationSet, DMatrix<f64>)> {
        self.validate()?;
        let u = haar_basis(self.d, self.rank, &mut derived_rng(self.seed, &[1]));
        Ok((self.generate_in(&u)?, u))
    }

    /// Draws the set with the given orthonormal `d × rank` basis.
    pub fn generate_in(&self, u: &DMatrix<f64>) -> Result<ActivationSet> {
        self.validate()?;
        crate::error::check_dims("planted basis", self.d * self.rank, u.nrows() * u.ncols())?;
        let mut rng = derived_rng(self.seed, &[2]);
        let z = standard_normal_matrix(self.n, self.rank, &mut rng);
        let s = DMatrix::from_diagonal(&DVector::from_vec(self.scales.clone()));
        let g = standard_normal_matrix(self.n, self.d, &mut rng);
        let h = &z * s * u.transpose() + g * self.noise;
        let r = orthonormalize(standard_normal_matrix(self.outputs, self.rank, &mut rng)).transpose();
        let y = z * r;
        let rows = (0..self.n)
            .map(|i| {
                let mut row = RowLabel::new(format!("q{i:05}"), self.task.clone(), Condition::Clean);
                row.shots = self.shots;
                row
            })
            .collect();
        ActivationSet::new(h, y, rows)
    }
}

/// A world whose readout sees only the coordinates along `U`.
///
/// Class `c` has prototype `+e_c` (for `c < r`) or `−e_{c−r}` in concept
/// coordinates, so distinct prototypes never have positive overlap and the
/// readout `W = M Uᵀ` has a unit margin at signal 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub d: usize,
    pub r: usize,
    pub classes: usize,
    pub n: usize,
    pub signal: f64,
    pub concept_noise: f64,
    pub nuisance: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig { d: 256, r: 4, classes: 8, n: 400, signal: 3.0, concept_noise: 0.1, nuisance: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedWorld {
    pub u: DMatrix<f64>,
    pub readout: ReadoutModel,
    /// Clean prompts; coded with their own target class.
    pub clean: ActivationSet,
    /// Same queries with the concept code of a wrong class.
    pub corrupted: ActivationSet,
    /// Swap pairs: `source` rows carry relation A, `target` rows relation B
    /// with a different answer class, matched by query id.
    pub source: ActivationSet,
    pub target: ActivationSet,
}

fn prototypes(r: usize, classes: usize) -> DMatrix<f64> {
    DMatrix::from_fn(classes, r, |c, j| {
        if c % r == j {
            if c < r {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        }
    })
}

impl WorldConfig {
    fn validate(&self, min_classes: usize) -> Result<()> {
        if self.r == 0 || self.r >= self.d {
            return Err(Error::InvalidParameter(format!("need 0 < r < d, got r {} d {}", self.r, self.d)));
        }
        if self.classes < min_classes || self.classes > 2 * self.r {
            return Err(Error::InvalidParameter(format!("classes must lie in {min_classes}..={}", 2 * self.r)));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("world needs at least one query".into()));
        }
        Ok(())
    }

    fn basis(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let u = haar_basis(self.d, self.r, &mut derived_rng(self.seed, &[1]));
        let perp = complement_basis(&u);
        (u, perp)
    }

    fn readout(&self, u: &DMatrix<f64>) -> Result<ReadoutModel> {
        ReadoutModel::new(prototypes(self.r, self.classes) * u.transpose(), None)
    }

    /// `n × d` rows whose concept coordinates are `signal · M_code + noise`
    /// and whose complement coordinates are Gaussian. With `center_by`,
    /// complement coordinates are centered within each group so they carry
    /// no correlation with group-indicator supervision.
    fn rows(
        &self,
        u: &DMatrix<f64>,
        perp: &DMatrix<f64>,
        codes: &[usize],
        center_by: Option<&[usize]>,
        rng: &mut Rng,
    ) -> DMatrix<f64> {
        let m = prototypes(self.r, self.classes);
        let n = codes.len();
        let mut concept = DMatrix::zeros(n, self.r);
        for (i, &c) in codes.iter().enumerate() {
            let eps = standard_normal_vector(self.r, rng) * self.concept_noise;
            concept.set_row(i, &(m.row(c) * self.signal + eps.transpose()));
        }
        let mut nuisance = standard_normal_matrix(n, self.d - self.r, rng) * self.nuisance;
        if let Some(groups) = center_by {
            let k = groups.iter().copied().max().map_or(0, |g| g + 1);
            for g in 0..k {
                let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
                if idx.is_empty() {
                    continue;
                }
                let mut mean = DMatrix::zeros(1, self.d - self.r);
                for &i in &idx {
                    mean += nuisance.row(i);
                }
                mean /= idx.len() as f64;
                for &i in &idx {
                    let row = nuisance.row(i) - &mean;
                    nuisance.set_row(i, &row);
                }
            }
        }
        concept * u.transpose() + nuisance * perp.transpose()
    }

    fn labeled(
        &self,
        h: DMatrix<f64>,
        task: &str,
        condition: Condition,
        targets: &[usize],
        layer: Option<i64>,
    ) -> Result<ActivationSet> {
        let rows = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut row = RowLabel::new(format!("q{i:05}"), task, condition);
                row.target = Some(t);
                row.shots = 12;
                row
            })
            .collect();
        let mut set = ActivationSet::with_one_hot(h, rows, self.classes)?;
        set.meta.layer = layer;
        set.meta.model_id = Some("planted".into());
        Ok(set)
    }

    pub fn generate(&self) -> Result<PlantedWorld> {
        self.validate(2)?;
        let (u, perp) = self.basis();
        let readout = self.readout(&u)?;
        let mut rng = derived_rng(self.seed, &[2]);
        let k = self.classes;
        let targets: Vec<usize> = (0..self.n).map(|i| i % k).collect();
        let wrong: Vec<usize> = targets.iter().map(|t| (t + 1) % k).collect();
        let clean_h = self.rows(&u, &perp, &targets, Some(&targets), &mut rng);
        let corr_h = self.rows(&u, &perp, &wrong, None, &mut rng);

        let donor: Vec<usize> = targets.iter().enumerate().map(|(i, &t)| (t + 1 + (i / k) % (k - 1)) % k).collect();
        let src_h = self.rows(&u, &perp, &targets, None, &mut rng);
        let tgt_h = self.rows(&u, &perp, &donor, Some(&donor), &mut rng);
        Ok(PlantedWorld {
            clean: self.labeled(clean_h, "task", Condition::Clean, &targets, None)?,
            corrupted: self.labeled(corr_h, "task", Condition::Corrupted, &targets, None)?,
            source: self.labeled(src_h, "relation_a", Condition::Clean, &targets, None)?,
            target: self.labeled(tgt_h, "relation_b", Condition::Clean, &donor, None)?,
            u,
            readout,
        })
    }

    /// Swap pairs at `layers` depths. Below `onset` every row carries the
    /// class-0 code, so no layer there holds relation information; from
    /// `onset` on rows carry their own class. Targets avoid class 0.
    pub fn layered(&self, layers: usize, onset: usize) -> Result<LayeredWorld> {
        self.validate(3)?;
        let (u, perp) = self.basis();
        let readout = self.readout(&u)?;
        let k = self.classes;
        let src: Vec<usize> = (0..self.n).map(|i| 1 + i % (k - 1)).collect();
        let tgt: Vec<usize> = src.iter().map(|&s| 1 + s % (k - 1)).collect();
        let mut out = Vec::with_capacity(layers);
        for layer in 0..layers {
            let mut rng = derived_rng(self.seed, &[3, layer as u64]);
            let (sc, tc) = if layer < onset { (vec![0; self.n], vec![0; self.n]) } else { (src.clone(), tgt.clone()) };
            let src_h = self.rows(&u, &perp, &sc, None, &mut rng);
            let tgt_h = self.rows(&u, &perp, &tc, Some(&tgt), &mut rng);
            let l = Some(layer as i64);
            out.push((
                self.labeled(src_h, "relation_a", Condition::Clean, &src, l)?,
                self.labeled(tgt_h, "relation_b", Condition::Clean, &tgt, l)?,
            ));
        }
        Ok(LayeredWorld { u, readout, layers: out })
    }
}

#[derive(Debug, Clone)]
pub struct LayeredWorld {
    pub u: DMatrix<f64>,
    pub readout: ReadoutModel,
    /// `(source, target)` per layer.
    pub layers: Vec<(ActivationSet, ActivationSet)>,
}

/// Displacement rows for a contraction model: for each `K`, `Δβ` in
/// concept coordinates is `N(μ, Σ/K)`, paired with a zero-shot row.
pub fn contraction_rows(
    u: &DMatrix<f64>,
    shots: &[u32],
    per_k: usize,
    mean: &DVector<f64>,
    cov_sqrt: &DMatrix<f64>,
    seed: u64,
) -> Result<ActivationSet> {
    let (d, r) = u.shape();
    crate::error::check_dims("contraction mean", r, mean.len())?;
    let mut rng = derived_rng(seed, &[4]);
    let mut h_rows: Vec<DVector<f64>> = Vec::new();
    let mut labels = Vec::new();
    for q in 0..per_k {
        let base = standard_normal_vector(d, &mut rng);
        let mut z = RowLabel::new(format!("q{q:05}"), "rel", Condition::ZeroShot);
        z.shots = 0;
        h_rows.push(base.clone());
        labels.push(z);
        for &k in shots {
            let beta = mean + cov_sqrt * standard_normal_vector(r, &mut rng) / (k as f64).sqrt();
            let mut row = RowLabel::new(format!("q{q:05}"), "rel", Condition::Clean);
            row.shots = k;
            row.context_id = format!("c{k}");
            h_rows.push(&base + u * beta);
            labels.push(row);
        }
    }
    let h = DMatrix::from_fn(h_rows.len(), d, |i, j| h_rows[i][j]);
    let n = h.nrows();
    ActivationSet::new(h, DMatrix::zeros(n, 0), labels)
}
