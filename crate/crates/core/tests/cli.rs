use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn obsframe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsframe")).arg("--output").arg(dir).args(args).output().unwrap()
}

#[test]
fn generate_then_measure() {
    let dir = tempfile::tempdir().unwrap();
    assert!(obsframe(dir.path(), &["--seed", "3", "generate-network", "--n", "8"]).status.success());
    let net = dir.path().join("network.json");
    let net = net.to_str().unwrap();
    let out = obsframe(dir.path(), &["--format", "json", "measure", "--network", net, "--samples", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("measures.json")).unwrap()).unwrap();
    assert!(report["rho_d"].as_f64().unwrap() > 0.0);
    assert_eq!(report["components"], 80);
}

#[test]
fn infeasible_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let strategy = dir.path().join("s.csv");
    fs::write(&strategy, "location,time\n0,0.1\n").unwrap();
    let out = obsframe(dir.path(), &["measure", "--strategy", strategy.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let config = dir.path().join("c.json");
    fs::write(&config, r#"{"experiment": "limits", "network": {"kind": "inline", "a": [[0.5]]},
        "strategy": {"kind": "random", "samples": 2, "tau": 1.0}, "params": {"lattice_delta": 0.1}}"#).unwrap();
    // unstable A: the Gramian limit is skipped with a note, the run still succeeds
    let out = obsframe(dir.path(), &["--config", config.to_str().unwrap(), "experiment"]);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary["results"]["limits"]["gramian_note"].is_string());
    assert!(summary["rng"].as_str().unwrap().contains("chacha20"));
}

#[test]
fn internal_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = obsframe(dir.path(), &["--config", "/nonexistent/config.json", "experiment"]);
    assert_eq!(out.status.code(), Some(1));
    let out = obsframe(dir.path(), &["sparsify", "random", "--samples", "4", "--epsilon", "0.01"]);
    assert_eq!(out.status.code(), Some(1));
}
