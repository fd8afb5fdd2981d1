use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use conceptlab::activations::ActivationSet;
use conceptlab::io::{write_tensor, Tensor};
use conceptlab::synthetic::{PlantedActivations, WorldConfig};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conceptlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("error is JSON")
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/planted_rank5.csa1")
}

fn planted() -> ActivationSet {
    PlantedActivations::rank_five(400, 64, 3).generate().unwrap().0
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Set `CONCEPTLAB_REGEN_FIXTURES=1` to rewrite the bundled file.
#[test]
fn bundled_fixture_matches_generator() {
    let want = planted();
    if std::env::var_os("CONCEPTLAB_REGEN_FIXTURES").is_some() {
        want.save(&fixture()).unwrap();
    }
    let got = ActivationSet::load(&fixture()).unwrap();
    assert_eq!(got.rows, want.rows);
    assert!((got.h - want.h).abs().max() < 1e-12);
}

#[test]
fn estimate_subspace_recovers_the_planted_rank() {
    let out = run(&["estimate-subspace", "--input", s(&fixture()), "--threshold", "0.98"]);
    let report = stdout_json(&out);
    assert_eq!(report["command"], "estimate-subspace");
    assert_eq!(report["results"]["rank"], 5);
    assert_eq!(report["results"]["dim"], 64);
}

#[test]
fn reports_carry_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("est.json");
    std::fs::write(&cfg, json!({ "threshold": 0.9 }).to_string()).unwrap();
    let out = run(&["--config", s(&cfg), "--seed", "11", "estimate-subspace", "--input", s(&fixture())]);
    let report = stdout_json(&out);
    assert_eq!(report["tool"], "conceptlab");
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["seed"], 11);
    assert_eq!(report["config"]["threshold"], 0.9);
    let paths: Vec<&str> = report["inputs"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert_eq!(paths[0], s(&cfg));
    assert!(paths.contains(&s(&fixture())));
    assert!(paths.iter().any(|p| p.ends_with("planted_rank5.csa1.json")));
    for i in report["inputs"].as_array().unwrap() {
        assert_eq!(i["crc32"].as_str().unwrap().len(), 8);
    }
}

#[test]
fn rates_are_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let sweep = json!({ "m": [16, 64, 256], "r": [2], "d": [8], "lambda0": [1.0], "trials": 30 });
    std::fs::write(&cfg, sweep.to_string()).unwrap();
    let mut csvs = Vec::new();
    for run_id in 0..2 {
        let csv = dir.path().join(format!("run{run_id}.csv"));
        let out = run(&["rates", "--config", s(&cfg), "--seed", "7", "--csv", s(&csv)]);
        assert_eq!(stdout_json(&out)["seed"], 7);
        csvs.push(std::fs::read(&csv).unwrap());
    }
    assert!(!csvs[0].is_empty());
    assert_eq!(csvs[0], csvs[1]);

    let other = dir.path().join("other.csv");
    stdout_json(&run(&["rates", "--config", s(&cfg), "--seed", "8", "--csv", s(&other)]));
    assert_ne!(std::fs::read(&other).unwrap(), csvs[0]);
}

struct World {
    _dir: tempfile::TempDir,
    clean: PathBuf,
    corrupted: PathBuf,
    source: PathBuf,
    target: PathBuf,
    readout: PathBuf,
}

fn world() -> World {
    let dir = tempfile::tempdir().unwrap();
    let w = WorldConfig { d: 48, n: 64, seed: 5, ..Default::default() }.generate().unwrap();
    let p = |name: &str| dir.path().join(name);
    w.clean.save(&p("clean.csa1")).unwrap();
    w.corrupted.save(&p("corrupted.csa1")).unwrap();
    w.source.save(&p("source.csa1")).unwrap();
    w.target.save(&p("target.csa1")).unwrap();
    write_tensor(&p("readout.csa1"), &Tensor::from_matrix(&w.readout.w), None).unwrap();
    World {
        clean: p("clean.csa1"),
        corrupted: p("corrupted.csa1"),
        source: p("source.csa1"),
        target: p("target.csa1"),
        readout: p("readout.csa1"),
        _dir: dir,
    }
}

fn arm<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["results"]["arms"].as_array().unwrap().iter().find(|a| a["name"] == name).unwrap()
}

#[test]
fn patch_restores_the_clean_prediction() {
    let w = world();
    let report = stdout_json(&run(&[
        "patch",
        "--clean",
        s(&w.clean),
        "--corrupted",
        s(&w.corrupted),
        "--readout",
        s(&w.readout),
    ]));
    assert_eq!(report["results"]["acc_clean"], 100.0);
    assert_eq!(report["results"]["acc_corrupted"], 0.0);
    assert_eq!(arm(&report, "full")["recovery_rate"], 100.0);
    assert_eq!(arm(&report, "concept")["recovery_rate"], 100.0);
}

#[test]
fn swap_moves_the_relation_with_the_concept() {
    let w = world();
    let report =
        stdout_json(&run(&["swap", "--source", s(&w.source), "--target", s(&w.target), "--readout", s(&w.readout)]));
    assert_eq!(arm(&report, "swap_concept")["override_success"], 100.0);
    assert_eq!(arm(&report, "swap_complement")["override_success"], 0.0);
}

#[test]
fn patch_with_mismatched_ids_lists_them() {
    let w = world();
    let mut corrupted = ActivationSet::load(&w.corrupted).unwrap();
    corrupted.rows[3].query_id = "stray_a".into();
    corrupted.rows[9].query_id = "stray_b".into();
    corrupted.save(&w.corrupted).unwrap();
    let out = run(&[
        "--json-errors",
        "patch",
        "--clean",
        s(&w.clean),
        "--corrupted",
        s(&w.corrupted),
        "--readout",
        s(&w.readout),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["class"], "data");
    assert_eq!(err["error"]["exit_code"], 2);
    let missing: Vec<&str> = err["error"]["missing"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    for id in ["stray_a", "stray_b", "q00003", "q00009"] {
        assert!(missing.iter().any(|m| m.starts_with(id)), "{id} not in {missing:?}");
    }
    assert_eq!(missing.len(), 4);

    let plain = run(&["patch", "--clean", s(&w.clean), "--corrupted", s(&w.corrupted), "--readout", s(&w.readout)]);
    assert_eq!(plain.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&plain.stderr).contains("stray_a"));
}

#[test]
fn recorded_predictions_replace_the_readout() {
    let w = world();
    let corrupted = ActivationSet::load(&w.corrupted).unwrap();
    let mut records = Vec::new();
    for row in &corrupted.rows {
        for (arm, correct) in
            [("clean", true), ("none", false), ("full", true), ("concept", false), ("complement", true)]
        {
            let token = if correct { "right" } else { "wrong" };
            records.push(json!({ "query_id": row.query_id, "arm": arm, "predicted_token": token, "correct": correct }));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("preds.json");
    std::fs::write(&preds, Value::Array(records).to_string()).unwrap();
    let out = run(&[
        "patch",
        "--clean",
        s(&w.clean),
        "--corrupted",
        s(&w.corrupted),
        "--basis",
        s(&write_identity_basis(dir.path())),
        "--predictions",
        s(&preds),
    ]);
    let report = stdout_json(&out);
    assert_eq!(arm(&report, "full")["recovery_rate"], 100.0);
    assert_eq!(arm(&report, "concept")["recovery_rate"], 0.0);
    assert_eq!(arm(&report, "complement")["recovery_rate"], 100.0);
}

fn write_identity_basis(dir: &Path) -> PathBuf {
    let path = dir.join("basis.csa1");
    let u = nalgebra::DMatrix::<f64>::identity(48, 4);
    write_tensor(&path, &Tensor::from_matrix(&u), None).unwrap();
    path
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, json!({ "threshhold": 0.9 }).to_string()).unwrap();
    let out = run(&["--json-errors", "--config", s(&cfg), "estimate-subspace", "--input", s(&fixture())]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["class"], "usage");
}

#[test]
fn parse_errors_exit_one_and_help_exits_zero() {
    assert_eq!(run(&["estimate-subspace", "--threshold", "lots"]).status.code(), Some(1));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn corrupt_tensor_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.csa1");
    std::fs::copy(fixture(), &path).unwrap();
    std::fs::copy(fixture().with_extension("csa1.json"), path.with_extension("csa1.json")).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, bytes).unwrap();
    let out = run(&["--json-errors", "estimate-subspace", "--input", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["class"], "data");
}

#[test]
fn out_flag_writes_the_report_and_merge_collects_it() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let out = run(&["--out", s(&a), "identify", "--d", "16", "--r", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let ident: Value = serde_json::from_slice(&std::fs::read(&a).unwrap()).unwrap();
    assert!(ident["results"]["max_angle"].as_f64().unwrap() < 1e-8);

    let merged = stdout_json(&run(&["report", s(&a), s(&a)]));
    assert_eq!(merged["results"]["commands"], json!(["identify", "identify"]));
}

#[test]
fn estimate_writes_a_reusable_basis() {
    let dir = tempfile::tempdir().unwrap();
    let basis = dir.path().join("u.csa1");
    stdout_json(&run(&["estimate-subspace", "--input", s(&fixture()), "--basis-out", s(&basis)]));
    let report = stdout_json(&run(&["diag", "--input", s(&fixture()), "--basis", s(&basis)]));
    assert_eq!(report["results"]["rank"], 5);
}

#[test]
fn controls_and_noise_run_with_seeded_draws() {
    let w = world();
    let base = ["--clean", s(&w.clean), "--corrupted", s(&w.corrupted), "--readout", s(&w.readout)];
    let mut args = vec!["--seed", "3", "controls", "--cross", s(&w.source)];
    args.extend(base);
    let report = stdout_json(&run(&args));
    assert_eq!(arm(&report, "concept")["recovery_rate"], 100.0);
    assert!(arm(&report, "random_control")["recovery_rate"].as_f64().unwrap() < 50.0);
    assert!(arm(&report, "cross_control").is_object());

    let mut args = vec!["--seed", "3", "noise", "--modes", "complement,concept", "--scales", "0.5"];
    args.extend(base);
    let first = stdout_json(&run(&args));
    let second = stdout_json(&run(&args));
    assert_eq!(first["results"], second["results"]);
    let arms = first["results"]["arms"].as_array().unwrap();
    assert_eq!(arms.len(), 2);
    assert_eq!(arm(&first, "noise_complement_0.5")["n"], 64);
}

#[test]
fn export_dir_writes_one_set_per_arm() {
    let w = world();
    let dir = tempfile::tempdir().unwrap();
    let report = stdout_json(&run(&[
        "patch",
        "--clean",
        s(&w.clean),
        "--corrupted",
        s(&w.corrupted),
        "--export-dir",
        s(dir.path()),
    ]));
    assert!(report["results"]["arms"].as_array().unwrap().is_empty());
    let clean = ActivationSet::load(&w.clean).unwrap();
    let full = ActivationSet::load(&dir.path().join("full.csa1")).unwrap();
    assert_eq!(full.len(), clean.len());
    assert!((full.h - clean.h).abs().max() < 1e-12);
    assert!(dir.path().join("concept.csa1").exists());
    assert!(dir.path().join("complement.csa1").exists());
}

#[test]
fn layers_sweep_from_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldConfig { n: 64, d: 48, ..Default::default() }.layered(3, 1).unwrap();
    let readout = dir.path().join("readout.csa1");
    write_tensor(&readout, &Tensor::from_matrix(&world.readout.w), None).unwrap();
    let mut layers = Vec::new();
    for (i, (source, target)) in world.layers.iter().enumerate() {
        let src = dir.path().join(format!("src{i}.csa1"));
        let tgt = dir.path().join(format!("tgt{i}.csa1"));
        source.save(&src).unwrap();
        target.save(&tgt).unwrap();
        layers.push(json!({ "layer": i, "clean": tgt, "corrupted": src }));
    }
    let cfg = dir.path().join("layers.json");
    let body = json!({ "layers": layers, "readout": readout, "template": { "arms": ["concept"] } });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let report = stdout_json(&run(&["--config", s(&cfg), "layers"]));
    let curve = report["results"]["curves"]["concept"]["override_success"].as_array().unwrap();
    assert_eq!(curve.len(), 3);
    assert!(curve[0][1].as_f64().unwrap() < 5.0);
    assert!(curve[2][1].as_f64().unwrap() > 95.0);
}

#[test]
fn model_commands_report_their_quantities() {
    let dir = tempfile::tempdir().unwrap();
    let demos = dir.path().join("demos.csa1");
    let sim =
        stdout_json(&run(&["--seed", "2", "simulate", "--d", "8", "--r", "2", "--m", "32", "--demos", s(&demos)]));
    assert_eq!(sim["command"], "simulate");
    let (t, _) = conceptlab::io::read_tensor(&demos).unwrap();
    assert_eq!(t.dims, vec![32, 9]);

    let dec = stdout_json(&run(&["--seed", "2", "decompose"]));
    assert!(dec["results"]["schur_min_eigenvalue"].as_f64().unwrap() > 0.0);
    assert!(dec["results"]["max_ridge_gap"].as_f64().unwrap() < 1e-8);

    let sweep = stdout_json(&run(&["rank-sweep", "--input", s(&fixture()), "--n-grid", "100,400"]));
    assert_eq!(sweep["command"], "rank-sweep");
}
