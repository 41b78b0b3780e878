use std::path::Path;
use std::process::{Command, Output};

use semisplit::harness::validate_report;

const SMOKE: &str = r#"
experiment = "uniform"
scheme = "strang"
final_time = 1.0
dt_list = [0.2, 0.1, 0.05]
hbar_list = [0.5]
n_states = 4
seed = 7

[potential]
kind = "pendulum"

[initial]
kind = "gaussian"
mean_q = [1.0]
mean_p = [0.0]
std_q = 0.25
std_p = 0.25

[grid]
max_cells = 400
jackknife_cells = 100
jackknife_groups = 4
"#;

fn semisplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semisplit")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_valid_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let a = semisplit(&["run", &cfg, "--out", out_a.to_str().unwrap(), "--seed", "11", "--jobs", "1"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = semisplit(&["run", &cfg, "--out", out_b.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(b.status.code(), Some(0));

    for name in ["report.csv", "report.json"] {
        let x = std::fs::read(out_a.join(name)).unwrap();
        let y = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between reruns");
    }
    let csv = std::fs::read_to_string(out_a.join("report.csv")).unwrap();
    assert!(csv.starts_with("scheme,metric,dt,hbar,n_steps,value,mc_stderr,bound_value,bound_satisfied\n"));
    assert_eq!(csv.lines().count(), 10);
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(out_a.join("report.json")).unwrap()).unwrap();
    validate_report(&doc).unwrap();
    assert_eq!(doc["fingerprint"]["seed"], 11);
    assert_eq!(doc["bounds"]["m_prime_source"], "calibrated");
}

#[test]
fn validate_and_constants() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let ok = semisplit(&["validate", &cfg]);
    assert!(ok.status.success());

    let constants = semisplit(&["constants", &cfg]);
    assert!(constants.status.success());
    let report: serde_json::Value = serde_json::from_slice(&constants.stdout).unwrap();
    assert!((report["c_t"].as_f64().unwrap() - 69.29315310799062).abs() < 1e-9);
    assert_eq!(report["eligibility"]["strang_uniform"], false);

    let bad = write_config(dir.path(), &SMOKE.replace("final_time = 1.0", "final_time = -1.0"));
    let rejected = semisplit(&["validate", &bad]);
    assert_eq!(rejected.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rejected.stderr).contains("final_time"));
    let missing = semisplit(&["run", "/nonexistent/cfg.toml"]);
    assert_eq!(missing.status.code(), Some(2));
}
