use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tradeoff(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tradeoff"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const SMALL_SWEEP: &str = "version = 1\nseed = 11\nseeds = 3\n\
[mc]\nn_trajectories = 200\nhorizon = 30\n\
[sweep]\nuncorrected = [1, 3]\nimportance = [1, 2]\nretrace = [0.0, 0.5, 1.0]\ntreebackup = [1.0]\n";

#[test]
fn analyze_on_a_written_mdp_matches_the_generated_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&tradeoff(&["gen-mdp", "--seed", "3", "--out", "gen"], root));
    ok(&tradeoff(&["analyze", "--seed", "3", "--out", "direct"], root));

    fs::write(
        root.join("from_file.toml"),
        "version = 1\nseed = 3\n[env]\nkind = \"file\"\npath = \"gen/mdp_seed3.json\"\n",
    )
    .unwrap();
    ok(&tradeoff(&["analyze", "--config", "from_file.toml", "--out", "loaded"], root));

    let read = |p: &str| -> Value { serde_json::from_slice(&fs::read(root.join(p)).unwrap()).unwrap() };
    let mut direct = read("direct/analysis_seed3.json");
    let mut loaded = read("loaded/analysis_seed3.json");
    assert_eq!(direct["mdp_id"], "dirichlet-5x3-s3");
    assert_eq!(loaded["mdp_id"], "mdp_seed3");
    direct["mdp_id"] = Value::Null;
    loaded["mdp_id"] = Value::Null;
    assert_eq!(direct, loaded);
}

#[test]
fn worker_count_does_not_change_any_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sweep.toml"), SMALL_SWEEP).unwrap();
    for jobs in ["1", "3"] {
        ok(&tradeoff(&["sweep", "--config", "sweep.toml", "--jobs", jobs, "--out", &format!("j{jobs}")], root));
    }
    let (a, b) = (files(&root.join("j1")), files(&root.join("j3")));
    assert_eq!(a.len(), 5, "3 seed files, a summary and the manifest");
    assert_eq!(a, b);
}

#[test]
fn manifest_hashes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sweep.toml"), SMALL_SWEEP).unwrap();
    ok(&tradeoff(&["sweep", "--config", "sweep.toml", "--out", "o"], root));
    let m: Value = serde_json::from_slice(&fs::read(root.join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "sweep");
    assert_eq!(m["seed"], 11);
    let arts = m["artifacts"].as_array().unwrap();
    assert_eq!(arts.len(), 4);
    for a in arts {
        let bytes = fs::read(root.join("o").join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"], tradeoff_cli::output::sha256_hex(&bytes));
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sweep.toml"), SMALL_SWEEP).unwrap();
    ok(&tradeoff(&["sweep", "--config", "sweep.toml", "--seed", "40", "--out", "o"], root));
    let names: Vec<String> = files(&root.join("o")).into_iter().map(|(n, _)| n).collect();
    assert!(names.contains(&"sweep_seed42.csv".to_string()), "{names:?}");
}

#[test]
fn config_errors_exit_with_code_two_and_a_location() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("bad.toml"), "version = 1\n\n[mc]\nhorizon = 0\n").unwrap();
    let out = tradeoff(&["sweep", "--config", "bad.toml", "--out", "o"], root);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:4:"), "{err}");

    fs::write(root.join("typo.toml"), "version = 1\n[mc]\nhorizn = 10\n").unwrap();
    let out = tradeoff(&["sweep", "--config", "typo.toml"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("horizn"));

    let out = tradeoff(&["sweep", "--config", "missing.toml"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(!root.join("out").exists());
}

#[test]
fn sweep_csv_columns_have_their_declared_types() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("sweep.toml"), SMALL_SWEEP).unwrap();
    ok(&tradeoff(&["sweep", "--config", "sweep.toml", "--out", "o"], root));
    let mut r = csv::Reader::from_path(root.join("o/sweep_seed11.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), tradeoff_cli::commands::SWEEP_HEADER.as_slice());
    let mut kinds = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        let n_step = matches!(&rec[0], "uncorrected" | "importance");
        kinds.push(rec[0].to_string());
        assert_eq!(rec[1].parse::<usize>().is_ok(), n_step);
        assert_eq!(rec[2].parse::<f64>().is_ok(), !n_step);
        assert_eq!(rec[3].parse::<f64>().is_ok(), !n_step);
        for i in 4..8 {
            assert!(rec[i].parse::<f64>().unwrap().is_finite());
        }
        assert_eq!(&rec[8], "11");
        assert_eq!(&rec[9], "dirichlet-5x3-s11");
    }
    assert_eq!(kinds.len(), 8);
}

#[test]
fn failed_seeds_exit_with_code_one() {
    // a deterministic behaviour policy leaves importance ratios undefined
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fs::write(root.join("bad.toml"), format!("{SMALL_SWEEP}[policies]\nbehaviour = \"optimal\"\n")).unwrap();
    let out = tradeoff(&["sweep", "--config", "bad.toml", "--out", "o"], root);
    assert_eq!(out.status.code(), Some(1));
    let m: Value = serde_json::from_slice(&fs::read(root.join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["failed_seeds"], serde_json::json!([11, 12, 13]));
}

#[test]
fn jobs_must_be_positive() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tradeoff(&["sweep", "--jobs", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let loaded = tradeoff_cli::RunConfig::read(Some(&p)).unwrap();
            loaded.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
