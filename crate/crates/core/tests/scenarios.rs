use std::path::Path;

use conceptlab::activations::ActivationSet;
use conceptlab::diagnostics::debiased_displacements;
use conceptlab::identify::{
    estimate_moments, recover_subspace, recover_subspace_with, sample_ambient_demos, MomentPanel, Whitening,
};
use conceptlab::intervention::{layer_sweep, run_arms, Arm, InterventionSpec, LayerInput, LayerTemplate};
use conceptlab::io::read_tensor;
use conceptlab::linalg::{haar_basis, principal_angles};
use conceptlab::model::{sample_basis, sample_task};
use conceptlab::rng::{derive_seed, derived_rng, rng_from_seed};
use conceptlab::subspace::{cross_task_control, estimate_subspace, random_control};
use conceptlab::synthetic::{contraction_rows, PlantedActivations, WorldConfig};
use nalgebra::{DMatrix, DVector};

fn fixtures() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[test]
fn identification_sharpens_with_more_samples() {
    let (d, r) = (32, 4);
    let t = 4 * r;
    let basis = sample_basis(d, r, 7).unwrap();
    let id = DMatrix::identity(d, d);
    let tasks: Vec<_> = (0..t).map(|i| sample_task(&basis, derive_seed(7, &[1, i as u64]))).collect();
    let angles: Vec<f64> = [1_000usize, 10_000, 100_000]
        .iter()
        .map(|&n| {
            let demos: Vec<_> = tasks
                .iter()
                .enumerate()
                .map(|(i, task)| {
                    sample_ambient_demos(&id, &task.w, n, 0.0, &mut derived_rng(7, &[2, n as u64, i as u64])).unwrap()
                })
                .collect();
            let mut rec = recover_subspace(&estimate_moments(&demos, id.clone()).unwrap(), r).unwrap();
            rec.compare(&basis.u).unwrap();
            rec.max_angle().unwrap()
        })
        .collect();
    assert!(angles.windows(2).all(|w| w[1] < w[0]), "{angles:?}");
}

#[test]
fn whitening_matters_on_anisotropic_inputs() {
    let (d, r) = (16, 3);
    let basis = sample_basis(d, r, 3).unwrap();
    let q = haar_basis(d, d, &mut rng_from_seed(4));
    let eig = DVector::from_fn(d, |i, _| 100f64.powf(-(i as f64) / (d - 1) as f64));
    let lambda = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let tasks: Vec<_> = (0..8).map(|i| sample_task(&basis, 50 + i)).collect();
    let panel = MomentPanel::population(lambda, &tasks).unwrap();
    let mut known = recover_subspace_with(&panel, r, Whitening::Known).unwrap();
    let mut skipped = recover_subspace_with(&panel, r, Whitening::Skip).unwrap();
    known.compare(&basis.u).unwrap();
    skipped.compare(&basis.u).unwrap();
    let (k, s) = (known.max_angle().unwrap(), skipped.max_angle().unwrap());
    assert!(k < 1e-8 && s > k + 0.1, "known {k}, skipped {s}");
}

#[test]
fn cross_task_control_from_an_orthogonal_task() {
    let q = haar_basis(64, 10, &mut rng_from_seed(21));
    let ua = q.columns(0, 5).into_owned();
    let ub = q.columns(5, 5).into_owned();
    let planted = PlantedActivations::rank_five(600, 64, 22);
    let a = planted.generate_in(&ua).unwrap();
    let b = PlantedActivations { seed: 23, ..planted }.generate_in(&ub).unwrap();
    let est = estimate_subspace(&a, 0.98).unwrap();
    assert_eq!(est.rank, 5);
    let control = cross_task_control(&b, 0.98, est.rank).unwrap();
    let angles = principal_angles(&est.u_hat, &control.basis).unwrap();
    assert!(angles.iter().all(|t| *t > 1.4), "{angles:?}");
    let own = cross_task_control(&a, 0.98, est.rank).unwrap();
    assert!(principal_angles(&est.u_hat, &own.basis).unwrap().iter().all(|t| *t < 1e-9));
}

#[test]
fn random_control_overlap_matches_dimension_ratio() {
    let (d, r) = (4096, 73);
    let learned = haar_basis(d, r, &mut rng_from_seed(31));
    let expected = r as f64 / d as f64;
    for seed in 0..20 {
        let control = random_control(d, r, derive_seed(32, &[seed])).unwrap();
        let overlap = (control.basis.transpose() * &learned).norm_squared() / r as f64;
        assert!(overlap > expected / 3.0 && overlap < expected * 3.0, "seed {seed}: {overlap}");
    }
}

#[test]
fn swaps_in_the_planted_world() {
    let world = WorldConfig::default().generate().unwrap();
    let est = estimate_subspace(&world.clean, 0.98).unwrap();
    let p = est.projector();
    let specs = vec![
        InterventionSpec::new(Arm::SwapConcept, Some(p.clone())),
        InterventionSpec::new(Arm::SwapComplement, Some(p)),
    ];
    let report = run_arms(&world.target, &world.source, &specs, &world.readout).unwrap();
    assert_eq!(report.arm("swap_concept").unwrap().override_success, Some(100.0));
    assert_eq!(report.arm("swap_complement").unwrap().override_success, Some(0.0));
}

#[test]
fn layer_sweep_finds_the_onset() {
    let world = WorldConfig { n: 240, ..Default::default() }.layered(6, 3).unwrap();
    let inputs: Vec<LayerInput> = world
        .layers
        .iter()
        .enumerate()
        .map(|(i, (source, target))| LayerInput {
            layer: i as i64,
            clean: target.clone(),
            corrupted: source.clone(),
            cross: None,
        })
        .collect();
    let template = LayerTemplate { arms: vec![Arm::Concept], threshold: 0.98, control_seed: 0, noise: None };
    let readout = world.readout.clone();
    let sweep = layer_sweep(&inputs, &template, &|_| readout.clone()).unwrap();
    let curve = sweep.curve("concept", false);
    assert_eq!(curve.len(), 6);
    for (layer, value) in curve {
        let v = value.unwrap();
        if layer < 3 {
            assert!(v < 5.0, "layer {layer}: {v}");
        } else {
            assert!(v > 95.0, "layer {layer}: {v}");
        }
    }
}

#[test]
fn displacement_ellipses_contract_as_one_over_k() {
    let (d, r) = (24, 3);
    let u = haar_basis(d, r, &mut rng_from_seed(41));
    let mean = DVector::from_vec(vec![1.0, -0.5, 0.25]);
    let cov_sqrt = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 0.8, 0.0, 0.1, -0.2, 0.5]);
    let shots = [1u32, 2, 4, 10];
    let acts = contraction_rows(&u, &shots, 4000, &mean, &cov_sqrt, 42).unwrap();
    let clouds = debiased_displacements(&acts, &u).unwrap();
    let scaled: Vec<f64> = shots.iter().map(|&k| clouds.cloud("rel", k).unwrap().area * k as f64).collect();
    for s in &scaled {
        assert!((s / scaled[0] - 1.0).abs() < 0.25, "{scaled:?}");
    }
}

#[test]
fn golden_fixtures_load() {
    let (t, meta) = read_tensor(&fixtures().join("golden_f32.csa1")).unwrap();
    assert_eq!(t.dims, vec![3]);
    assert_eq!(t.data, vec![0.5, -2.0, 1.5]);
    assert!(meta.is_none());

    let acts = ActivationSet::load(&fixtures().join("golden.csa1")).unwrap();
    assert_eq!((acts.len(), acts.dim()), (3, 4));
    assert_eq!(acts.h[(1, 3)], -7.125);
    assert_eq!(acts.meta.model_id.as_deref(), Some("golden"));
    assert_eq!(acts.meta.layer, Some(7));
    assert_eq!(acts.y.ncols(), 2);
    assert_eq!(acts.rows[2].query_id, "c");
}
