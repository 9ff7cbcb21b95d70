use std::path::Path;
use std::process::{Command, Output};

use ndnn_cli::{bundled, bundled_experiments, Mode, RunConfig};
use serde_json::Value;

fn ndnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn small_ndnn(dir: &Path) -> std::path::PathBuf {
    let mut cfg = bundled("exp2").unwrap();
    cfg.mode = Mode::Ndnn;
    cfg.train.max_epochs = 50;
    cfg.train.samples = ndnn::loss::SampleCounts::from_points(50);
    let path = dir.join("small.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

#[test]
fn godunov_mode_writes_reference_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = ndnn(&[
        "--experiment",
        "exp2",
        "--mode",
        "godunov",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["godunov.csv", "shocks.csv", "manifest.json", "config.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let m = manifest(&out);
    assert_eq!(m["mode"], "godunov");
    assert_eq!(m["summary"]["shocks_tracked"], 2);
    let header = std::fs::read_to_string(out.join("shocks.csv")).unwrap();
    assert!(header.starts_with("t,shock,x"));
}

#[test]
fn bad_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled("exp2").unwrap();
    cfg.networks.field_hidden.clear();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let o = ndnn(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("networks.field_hidden"));
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut v: Value = serde_json::from_str(&bundled("exp2").unwrap().to_json()).unwrap();
    v["train"]["learning_rat"] = 0.1.into();
    std::fs::write(&path, v.to_string()).unwrap();
    let o = ndnn(&["--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn missing_experiment_is_a_config_error() {
    let o = ndnn(&["--experiment", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_ndnn(dir.path());
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = ndnn(&[
                "--config",
                cfg.to_str().unwrap(),
                "--seed",
                "7",
                "--out-dir",
                out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    let files = manifest(&runs[0])["files"].as_array().unwrap().clone();
    let csvs: Vec<&str> = files
        .iter()
        .filter_map(|f| f.as_str())
        .filter(|f| f.ends_with(".csv"))
        .collect();
    assert!(!csvs.is_empty());
    for f in csvs {
        let a = std::fs::read(runs[0].join(f)).unwrap();
        let b = std::fs::read(runs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    assert_eq!(manifest(&runs[1])["seed"], 7);
}

#[test]
fn bundled_catalog_is_consistent() {
    let all = bundled_experiments();
    assert!(all.len() >= 12);
    for (name, cfg) in &all {
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(&back, cfg, "{name} does not round-trip");
    }
    let exp7 = bundled("exp7").unwrap();
    assert_eq!(exp7.mode, Mode::Ddm);
    assert_eq!(exp7.problem.initial.profiles.len(), 3);
    assert_eq!(bundled("exp6-shock").unwrap().mode, Mode::DirectPinn);
    assert_eq!(bundled("exp2").unwrap().networks.field_hidden, vec![5]);
}

#[test]
fn riemann_decompose_reports_star_height() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled("exp8a-shocks").unwrap();
    cfg.decompose.as_mut().unwrap().config.fit.max_epochs = 300;
    let path = dir.path().join("dec.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = dir.path().join("run");
    let o = ndnn(&[
        "--config",
        path.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let d = &m["summary"]["decompositions"][0];
    let h = d["neural"]["states"][1][0].as_f64().unwrap();
    let exact = d["exact"]["states"][1][0].as_f64().unwrap();
    assert!((exact - 6.3657).abs() < 1e-3, "{exact}");
    assert!(h > 3.0 && h < 10.0, "{h}");
    assert!(out.join("decomposition.json").is_file());
}

#[test]
fn print_emits_the_resolved_config() {
    let o = ndnn(&["--experiment", "exp2", "--seed", "9", "--print"]);
    assert!(o.status.success());
    let cfg = RunConfig::from_json(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.train.seed, 9);
}
