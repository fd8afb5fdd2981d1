//! Monte Carlo checks of how ridge estimation error, off-subspace leakage
//! and nuisance sensitivity scale with the number of demonstrations.
//!
//! Each grid cell runs `trials` independent draws of (basis, covariance,
//! task, demonstrations, query). Trial `i` uses the same seeds in every
//! cell, so cells differ only in the swept parameter. The ridge parameter
//! is `λ = λ0 / M`. Scaling exponents are ordinary least-squares slopes of
//! log-median against log-M.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::block_decompose_noisy;
use crate::linalg::standard_normal_vector;
use crate::model::{make_cov, sample_basis, sample_demos, sample_inputs, sample_task, EigenProfile, Regime};
use crate::rng::{derive_seed, derived_rng, tag};
use crate::stats::{ols, spearman, LineFit, Summary};

pub const MIN_TRIALS: usize = 30;
pub const MIN_SLOPE_POINTS: usize = 4;

fn default_zero() -> Vec<f64> {
    vec![0.0]
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSweepConfig {
    /// Demonstration counts.
    pub m: Vec<usize>,
    pub r: Vec<usize>,
    pub d: Vec<usize>,
    #[serde(default = "default_zero")]
    pub rho: Vec<f64>,
    #[serde(default = "default_zero")]
    pub sigma: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Confidence target used only for labelling reported quantiles.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub profile: EigenProfile,
}

impl RateSweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.m.is_empty() || self.r.is_empty() || self.d.is_empty() || self.lambda0.is_empty() {
            return bad("grids over m, r, d and lambda0 must be non-empty");
        }
        if self.rho.is_empty() || self.sigma.is_empty() {
            return bad("grids over rho and sigma must be non-empty");
        }
        if self.m.contains(&0) || self.r.contains(&0) || self.d.contains(&0) {
            return bad("m, r and d grid values must be positive");
        }
        if self.lambda0.iter().any(|v| !(*v > 0.0)) {
            return bad("lambda0 grid values must be positive");
        }
        if self.rho.iter().chain(&self.sigma).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("rho and sigma grid values must be finite and >= 0");
        }
        if self.trials < MIN_TRIALS {
            return Err(Error::InvalidParameter(format!(
                "need at least {MIN_TRIALS} trials per cell, got {}",
                self.trials
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        Ok(())
    }

    fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &r in &self.r {
            for &d in &self.d {
                if r > d {
                    continue;
                }
                for &rho in &self.rho {
                    for &sigma in &self.sigma {
                        for &lambda0 in &self.lambda0 {
                            for &m in &self.m {
                                out.push(Cell { m, r, d, rho, sigma, lambda0 });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub m: usize,
    pub r: usize,
    pub d: usize,
    pub rho: f64,
    pub sigma: f64,
    pub lambda0: f64,
}

impl Cell {
    fn group_key(&self) -> (usize, usize, u64, u64, u64) {
        (self.r, self.d, self.rho.to_bits(), self.sigma.to_bits(), self.lambda0.to_bits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `‖β̂ − β‖`.
    BetaError,
    /// `|Δ(x)|` at a fresh query.
    Leakage,
    /// `|f(x + v) − f(x)| / ‖v‖` for a random unit `v ⟂ span(U)`.
    NuisanceSensitivity,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::BetaError, Quantity::Leakage, Quantity::NuisanceSensitivity];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::BetaError => "beta_error",
            Quantity::Leakage => "leakage",
            Quantity::NuisanceSensitivity => "nuisance_sensitivity",
        }
    }
}

/// Measurements from one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub beta_error: f64,
    pub leakage: f64,
    pub sensitivity: f64,
}

impl TrialOutcome {
    pub fn get(&self, q: Quantity) -> f64 {
        match q {
            Quantity::BetaError => self.beta_error,
            Quantity::Leakage => self.leakage,
            Quantity::NuisanceSensitivity => self.sensitivity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub cell: Cell,
    pub trials: usize,
    pub failures: usize,
    pub beta_error: Option<Summary>,
    pub leakage: Option<Summary>,
    pub nuisance_sensitivity: Option<Summary>,
}

impl CellStats {
    pub fn summary(&self, q: Quantity) -> Option<&Summary> {
        match q {
            Quantity::BetaError => self.beta_error.as_ref(),
            Quantity::Leakage => self.leakage.as_ref(),
            Quantity::NuisanceSensitivity => self.nuisance_sensitivity.as_ref(),
        }
    }
}

/// Log-log slope of a median against `M` for one parameter combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub r: usize,
    pub d: usize,
    pub rho: f64,
    pub sigma: f64,
    pub lambda0: f64,
    pub quantity: Quantity,
    pub m_values: Vec<usize>,
    /// `None` when fewer than four distinct `M` or a non-positive median.
    pub fit: Option<LineFit>,
}

/// Medians against `ρ` at fixed everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoCurve {
    pub m: usize,
    pub r: usize,
    pub d: usize,
    pub sigma: f64,
    pub lambda0: f64,
    pub rho: Vec<f64>,
    pub sensitivity_median: Vec<f64>,
    pub leakage_median: Vec<f64>,
    pub spearman: Option<f64>,
    pub non_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepResult {
    pub config: RateSweepConfig,
    pub cells: Vec<CellStats>,
    pub slopes: Vec<SlopeFit>,
    #[serde(default)]
    pub rho_curves: Vec<RhoCurve>,
}

impl RateSweepResult {
    pub fn cell(&self, pred: impl Fn(&Cell) -> bool) -> Option<&CellStats> {
        self.cells.iter().find(|c| pred(&c.cell))
    }

    pub fn slope(&self, quantity: Quantity, pred: impl Fn(&SlopeFit) -> bool) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.quantity == quantity && pred(s))
    }

    /// One row per cell per quantity.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,r,d,rho,sigma,lambda0,quantity,trials,failures,count,mean,median,q90\n");
        for c in &self.cells {
            for q in Quantity::ALL {
                let cell = &c.cell;
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{},{},{},",
                    cell.m,
                    cell.r,
                    cell.d,
                    cell.rho,
                    cell.sigma,
                    cell.lambda0,
                    q.name(),
                    c.trials,
                    c.failures
                );
                match c.summary(q) {
                    Some(s) => {
                        let _ = writeln!(out, "{},{},{},{}", s.count, s.mean, s.median, s.q90);
                    }
                    None => out.push_str("0,,,\n"),
                }
            }
        }
        out
    }
}

/// Runs one trial. Seeds depend only on the root seed and trial index.
pub fn run_trial(cell: &Cell, profile: &EigenProfile, seed: u64, trial: usize) -> Result<TrialOutcome> {
    let t = trial as u64;
    let basis = sample_basis(cell.d, cell.r, derive_seed(seed, &[t, tag::BASIS]))?;
    let regime = if cell.rho == 0.0 { Regime::Bd } else { Regime::Nbd };
    let cov = make_cov(cell.d, cell.r, regime, cell.rho, profile, derive_seed(seed, &[t, tag::COV]))?;
    let task = sample_task(&basis, derive_seed(seed, &[t, tag::TASK]));
    let demos = sample_demos(&cov, &basis, &task, cell.m, cell.sigma, derive_seed(seed, &[t, tag::DEMOS]))?;
    let lambda = cell.lambda0 / cell.m as f64;
    let fit = block_decompose_noisy(&demos, &basis, lambda)?;

    let mut qrng = derived_rng(seed, &[t, tag::QUERY]);
    let x = sample_inputs(&cov, &basis, 1, &mut qrng)?.row(0).transpose();
    let leakage = fit.predict(&basis, &x)?.leakage.abs();

    // f(x + v) − f(x) = ⟨ŵ, v⟩ exactly for the linear predictor.
    let sensitivity = if cell.r < cell.d {
        let mut prng = derived_rng(seed, &[t, tag::PERTURB]);
        let g = standard_normal_vector(cell.d - cell.r, &mut prng);
        let v = &basis.u_perp * (&g / g.norm());
        fit.w_hat.dot(&v).abs() / v.norm()
    } else {
        0.0
    };

    Ok(TrialOutcome { beta_error: (&fit.beta_hat - &task.beta).norm(), leakage, sensitivity })
}

fn summarize(cell: Cell, outcomes: &[Result<TrialOutcome>]) -> CellStats {
    let ok: Vec<&TrialOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    for (i, o) in outcomes.iter().enumerate() {
        if let Err(e) = o {
            log::warn!("cell {cell:?} trial {i} failed: {e}");
        }
    }
    let collect = |q: Quantity| -> Option<Summary> { Summary::of(&ok.iter().map(|o| o.get(q)).collect::<Vec<_>>()) };
    CellStats {
        cell,
        trials: outcomes.len(),
        failures: outcomes.len() - ok.len(),
        beta_error: collect(Quantity::BetaError),
        leakage: collect(Quantity::Leakage),
        nuisance_sensitivity: collect(Quantity::NuisanceSensitivity),
    }
}

fn fit_slopes(cells: &[CellStats]) -> Vec<SlopeFit> {
    let mut keys: Vec<_> = cells.iter().map(|c| c.cell.group_key()).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for key in keys {
        let mut group: Vec<&CellStats> = cells.iter().filter(|c| c.cell.group_key() == key).collect();
        group.sort_by_key(|c| c.cell.m);
        let mut m_values: Vec<usize> = group.iter().map(|c| c.cell.m).collect();
        m_values.dedup();
        let head = group[0].cell;
        for q in Quantity::ALL {
            let points: Vec<(f64, f64)> =
                group.iter().filter_map(|c| c.summary(q).map(|s| ((c.cell.m as f64).ln(), s.median))).collect();
            let usable = m_values.len() >= MIN_SLOPE_POINTS
                && points.len() == group.len()
                && points.iter().all(|(_, y)| *y > 0.0);
            let fit = if usable {
                let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
                ols(&xs, &ys)
            } else {
                None
            };
            out.push(SlopeFit {
                r: head.r,
                d: head.d,
                rho: head.rho,
                sigma: head.sigma,
                lambda0: head.lambda0,
                quantity: q,
                m_values: m_values.clone(),
                fit,
            });
        }
    }
    out
}

fn run_grid(cfg: &RateSweepConfig) -> Vec<CellStats> {
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let outcomes: Vec<Result<TrialOutcome>> =
        jobs.par_iter().map(|&(c, t)| run_trial(&cells[c], &cfg.profile, cfg.seed, t)).collect();
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| summarize(*cell, &outcomes[c * cfg.trials..(c + 1) * cfg.trials]))
        .collect()
}

/// Sweeps the grid and fits log-log slopes of every quantity against `M`.
pub fn sweep_rates(cfg: &RateSweepConfig) -> Result<RateSweepResult> {
    cfg.validate()?;
    let cells = run_grid(cfg);
    let slopes = fit_slopes(&cells);
    Ok(RateSweepResult { config: cfg.clone(), cells, slopes, rho_curves: Vec::new() })
}

/// Noisy-label sweep. Cells with `σ = 0` run exactly as in [`sweep_rates`].
pub fn sweep_noisy(cfg: &RateSweepConfig) -> Result<RateSweepResult> {
    if !cfg.sigma.iter().any(|&s| s > 0.0) {
        return Err(Error::InvalidParameter("noisy sweep needs at least one sigma > 0".into()));
    }
    sweep_rates(cfg)
}

/// Coupling sweep: reports medians against `ρ` at each fixed `M`.
pub fn sweep_nbd(cfg: &RateSweepConfig) -> Result<RateSweepResult> {
    if !cfg.rho.contains(&0.0) {
        return Err(Error::InvalidParameter(
            "coupling sweep needs rho = 0 in its grid as the block-diagonal baseline".into(),
        ));
    }
    let mut result = sweep_rates(cfg)?;
    result.rho_curves = rho_curves(&result.cells);
    Ok(result)
}

fn rho_curves(cells: &[CellStats]) -> Vec<RhoCurve> {
    let key = |c: &Cell| (c.m, c.r, c.d, c.sigma.to_bits(), c.lambda0.to_bits());
    let mut keys: Vec<_> = cells.iter().map(|c| key(&c.cell)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|k| {
            let mut group: Vec<&CellStats> = cells.iter().filter(|c| key(&c.cell) == k).collect();
            group.sort_by(|a, b| a.cell.rho.total_cmp(&b.cell.rho));
            let head = group[0].cell;
            let rho: Vec<f64> = group.iter().map(|c| c.cell.rho).collect();
            let med = |q: Quantity| -> Vec<f64> {
                group.iter().map(|c| c.summary(q).map(|s| s.median).unwrap_or(f64::NAN)).collect()
            };
            let sensitivity_median = med(Quantity::NuisanceSensitivity);
            let leakage_median = med(Quantity::Leakage);
            let non_decreasing = sensitivity_median.windows(2).all(|w| w[1] >= w[0]);
            RhoCurve {
                m: head.m,
                r: head.r,
                d: head.d,
                sigma: head.sigma,
                lambda0: head.lambda0,
                spearman: spearman(&rho, &sensitivity_median),
                rho,
                sensitivity_median,
                leakage_median,
                non_decreasing,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(m: Vec<usize>) -> RateSweepConfig {
        RateSweepConfig {
            m,
            r: vec![2],
            d: vec![8],
            rho: vec![0.0],
            sigma: vec![0.0],
            lambda0: vec![1.0],
            trials: 30,
            seed: 3,
            delta: 0.05,
            profile: EigenProfile::Identity,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = base(vec![16]);
        cfg.trials = 10;
        assert!(sweep_rates(&cfg).is_err());
        let mut cfg = base(vec![16]);
        cfg.lambda0 = vec![0.0];
        assert!(sweep_rates(&cfg).is_err());
        let cfg = base(vec![16]);
        assert!(sweep_noisy(&cfg).is_err());
        let mut cfg = base(vec![16]);
        cfg.rho = vec![0.1];
        assert!(sweep_nbd(&cfg).is_err());
    }

    #[test]
    fn slopes_need_four_masses() {
        let res = sweep_rates(&base(vec![32, 64, 128])).unwrap();
        assert!(res.slopes.iter().all(|s| s.fit.is_none()));
        let res = sweep_rates(&base(vec![32, 64, 128, 256])).unwrap();
        assert!(res.slope(Quantity::BetaError, |_| true).unwrap().fit.is_some());
    }

    #[test]
    fn full_rank_concept_space_has_no_leakage() {
        let mut cfg = base(vec![16, 32]);
        cfg.d = vec![3];
        cfg.r = vec![3];
        let res = sweep_rates(&cfg).unwrap();
        for c in &res.cells {
            let l = c.leakage.unwrap();
            assert_eq!((l.mean, l.q90), (0.0, 0.0));
        }
    }

    #[test]
    fn quantile_ordering() {
        let mut cfg = base(vec![16, 64]);
        cfg.sigma = vec![0.0, 0.5];
        let res = sweep_rates(&cfg).unwrap();
        for c in &res.cells {
            for q in Quantity::ALL {
                let s = c.summary(q).unwrap();
                assert!(s.q90 >= s.median && s.median >= 0.0);
            }
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = base(vec![16, 32]);
        let one =
            rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| sweep_rates(&cfg).unwrap());
        let many =
            rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| sweep_rates(&cfg).unwrap());
        assert_eq!(one, many);
        assert_eq!(one.to_csv(), many.to_csv());
    }

    #[test]
    fn zero_noise_cell_matches_noiseless_sweep() {
        let clean = sweep_rates(&base(vec![32])).unwrap();
        let mut cfg = base(vec![32]);
        cfg.sigma = vec![0.0, 1.0];
        let noisy = sweep_noisy(&cfg).unwrap();
        let c = noisy.cell(|c| c.sigma == 0.0).unwrap();
        assert_eq!(c, &clean.cells[0]);
    }

    #[test]
    fn zero_coupling_cell_matches_block_diagonal_run() {
        let bd = sweep_rates(&base(vec![64])).unwrap();
        let mut cfg = base(vec![64]);
        cfg.rho = vec![0.0, 0.1];
        let nbd = sweep_nbd(&cfg).unwrap();
        assert_eq!(nbd.cell(|c| c.rho == 0.0).unwrap(), &bd.cells[0]);
        assert_eq!(nbd.rho_curves.len(), 1);
        assert_eq!(nbd.rho_curves[0].rho, vec![0.0, 0.1]);
    }

    #[test]
    fn csv_has_one_row_per_cell_and_quantity() {
        let res = sweep_rates(&base(vec![16, 32])).unwrap();
        let csv = res.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("16,2,8,0,0,1,beta_error,30,0,30,"));
    }
}
