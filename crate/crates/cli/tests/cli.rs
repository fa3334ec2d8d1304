use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use netpanel::estimation::{fit_units, mgiv, InstrumentSet};
use netpanel::factors::{estimate_factors, DefactoredPanel};
use netpanel::netbuild::{category_network, CategoryDim};
use netpanel::panel::{load_panel, IngestOptions};
use netpanel::report;
use serde_json::Value;

fn netpanel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netpanel"))
        .env_remove("NETPANEL_OUT")
        .env_remove("NETPANEL_THREADS")
        .args(args)
        .output()
        .expect("run netpanel")
}

fn ok(args: &[&str]) -> Output {
    let o = netpanel(args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated panel with strong links; returns the data directory.
fn simulate(root: &Path) -> PathBuf {
    let dir = root.join("data");
    ok(&[
        "--seed", "3", "simulate", "--n", "40", "--t", "150", "--k-links", "1-2", "--omega-range", "0.4,0.475",
        "--noise-sd", "0.5", "--out", s(&dir),
    ]);
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_panel_and_truth() {
    let root = tempfile::tempdir().unwrap();
    let dir = simulate(root.path());
    for f in ["panel.csv", "truth_edges.csv", "truth_params.json", "manifest.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let manifest = json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["summary"]["max_residual"].as_f64().unwrap() <= 1e-10);
    assert!(!dir.join(".staging-simulate").exists());
}

#[test]
fn invalid_config_exits_with_two() {
    let root = tempfile::tempdir().unwrap();
    let o = netpanel(&["simulate", "--n", "2", "--k-links", "5", "--out", s(root.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("k_links"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(netpanel(&["fit", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(netpanel(&["--threads", "0", "report", "--dir", "."]).status.code(), Some(2));
    assert_eq!(netpanel(&["fit", "--panel", "x.csv", "--network", "category:county"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_one() {
    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("absent.csv");
    let o = netpanel(&["fit", "--panel", s(&missing), "--out", s(&root.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_run_is_quarantined() {
    let root = tempfile::tempdir().unwrap();
    let data = simulate(root.path());
    let out = root.path().join("out");
    let o = netpanel(&[
        "fit", "--panel", s(&data.join("panel.csv")), "--network", "knn:500", "--out", s(&out),
    ]);
    assert!(!o.status.success());
    let q = out.join("quarantine").join("fit");
    assert!(q.join("error.txt").is_file());
    assert!(!out.join("coefficients.csv").exists());
    assert!(!out.join(".staging-fit").exists());
}

#[test]
fn category_fit_matches_library() {
    let root = tempfile::tempdir().unwrap();
    let data = simulate(root.path());
    let panel_path = data.join("panel.csv");
    let out = root.path().join("fit");
    ok(&[
        "fit", "--panel", s(&panel_path), "--network", "category:industry", "--factors", "1", "--out", s(&out),
    ]);

    let panel = load_panel(&panel_path, &IngestOptions::default()).unwrap();
    let factors = estimate_factors(&panel, 1).unwrap();
    let data = DefactoredPanel::new(&panel, &factors).unwrap();
    let w = category_network(&panel.meta, CategoryDim::Industry).unwrap();
    let units = fit_units(&w, &data, InstrumentSet::Auto).unwrap();
    let mg = mgiv(&units).unwrap();

    let mut coef = Vec::new();
    report::write_mg_table(&mg, &panel.var_names, &mut coef).unwrap();
    assert_eq!(fs::read(out.join("coefficients.csv")).unwrap(), coef);
    let mut unit = Vec::new();
    report::write_unit_estimates(&units, &panel.meta, &panel.var_names, &mut unit).unwrap();
    assert_eq!(fs::read(out.join("unit_estimates.csv")).unwrap(), unit);
}

#[test]
fn true_network_gives_consistent_mean_group() {
    let root = tempfile::tempdir().unwrap();
    let data = simulate(root.path());
    let out = root.path().join("fit");
    let network = format!("file:{}", s(&data.join("truth_edges.csv")));
    ok(&[
        "fit", "--panel", s(&data.join("panel.csv")), "--network", &network, "--factors", "1", "--out", s(&out),
    ]);
    let truth = json(&data.join("truth_params.json"));
    let units = truth["units"].as_array().unwrap();
    let psi_mean = units.iter().map(|u| u["psi"].as_f64().unwrap()).sum::<f64>() / units.len() as f64;
    let mg = json(&out.join("manifest.json"))["summary"]["mean_group"]["psi"].clone();
    let (est, se) = (mg["estimate"].as_f64().unwrap(), mg["se"].as_f64().unwrap());
    assert!((est - psi_mean).abs() <= 2.0 * se + 0.01, "psi {est} ± {se} vs {psi_mean}");
}

#[test]
fn pipeline_recovers_simulated_links() {
    let root = tempfile::tempdir().unwrap();
    let data = simulate(root.path());
    let out = root.path().join("pipe");
    ok(&[
        "pipeline", "--panel", s(&data.join("panel.csv")), "--truth", s(&data.join("truth_edges.csv")),
        "--draws", "200", "--permutations", "200", "--out", s(&out),
    ]);
    let rec = &json(&out.join("manifest.json"))["summary"]["recovery"];
    assert!(rec["recovery_rate"].as_f64().unwrap() >= 0.95, "{rec}");
    assert_eq!(json(&out.join("recovery.json"))["true_links"], rec["true_links"]);
    for f in ["coefficients.csv", "effects.csv", "spillins.csv", "homophily.csv", "network.dot", "selection.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }

    let text = String::from_utf8(ok(&["report", "--dir", s(&out)]).stdout).unwrap();
    assert!(text.contains("Mean-group estimates"));
    assert!(text.contains("psi"));
}

#[test]
fn repeated_runs_are_identical() {
    let root = tempfile::tempdir().unwrap();
    let data = simulate(root.path());
    let run = |tag: &str, threads: &str| {
        let out = root.path().join(tag);
        ok(&[
            "--threads", threads, "impacts", "--panel", s(&data.join("panel.csv")), "--draws", "100", "--out",
            s(&out),
        ]);
        let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().into(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    assert_eq!(run("a", "1"), run("b", "3"));
}
