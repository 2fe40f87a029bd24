mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use kr_agcg::config::ExperimentConfig;
use kr_agcg::experiment::{ResultFile, HISTORY_HEADER};

const BIN: &str = env!("CARGO_BIN_EXE_kr-agcg");

fn write_miniature(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("mini.json");
    fs::write(&path, common::miniature_config().to_json_pretty().unwrap()).unwrap();
    path
}

fn solve(config: &Path, out: &Path, extra: &[&str]) -> std::process::Output {
    Command::new(BIN).arg("solve").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

#[test]
fn solve_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_miniature(tmp.path());
    let out = tmp.path().join("run");
    let o = solve(&cfg, &out, &["--deterministic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("termination=converged"), "{stdout}");

    for f in ["history.csv", "result.json", "q.csv", "psi.csv", "reports.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().next().unwrap(), HISTORY_HEADER);
    let result = ResultFile::load(&out.join("result.json")).unwrap();
    assert_eq!(history.lines().count(), result.iterations + 2);
    assert_eq!(result.config, common::miniature_config());
    assert!(fs::read_to_string(out.join("q.csv")).unwrap().starts_with("z,q_over_alpha\n"));
    assert!(fs::read_to_string(out.join("psi.csv")).unwrap().starts_with("x,y,psi\n"));

    let check = Command::new(BIN).arg("check").arg(out.join("result.json")).output().unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));
    let reports: serde_json::Value = serde_json::from_slice(&check.stdout).unwrap();
    assert_eq!(reports["optimality"]["pass"], true);

    let cert_dir = tmp.path().join("cert");
    let c = Command::new(BIN).arg("certify").arg(out.join("result.json")).arg("--out").arg(&cert_dir).output().unwrap();
    assert!(c.status.success());
    assert_eq!(fs::read(cert_dir.join("q.csv")).unwrap(), fs::read(out.join("q.csv")).unwrap());
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_miniature(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert!(solve(&cfg, out, &["--deterministic", "--seed", "7"]).status.success());
    }
    for f in ["history.csv", "result.json", "q.csv", "reports.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn iteration_cap_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_miniature(tmp.path());
    let o = solve(&cfg, &tmp.path().join("capped"), &["--max-iter", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let r = ResultFile::load(&tmp.path().join("capped/result.json")).unwrap();
    assert_eq!(r.termination.as_str(), "max_iter");
    assert_eq!(r.config.solver.max_outer_iterations, 2);
}

#[test]
fn unwritable_output_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_miniature(tmp.path());
    // a regular file where the output directory should go
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let o = solve(&cfg, &blocker.join("out"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn invalid_config_is_reported_by_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, common::EXP1.replace("\"gamma\": 60.0", "\"gamma\": -1.0")).unwrap();
    let o = solve(&path, &tmp.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
}

#[test]
fn kr_norm_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let m = tmp.path().join("m.json");
    fs::write(&m, r#"[{"x": [0.0], "w": 1.0}, {"x": [0.5], "w": -1.0}]"#).unwrap();
    let o = Command::new(BIN)
        .args(["kr-norm", m.to_str().unwrap(), "--alpha", "1", "--beta", "0.4", "--p", "1"])
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn shipped_configs_round_trip() {
    for text in [common::EXP1, common::EXP2] {
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json_pretty().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn experiment_one_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp1.json");
    fs::write(&cfg, common::EXP1).unwrap();
    let out = tmp.path().join("exp1");
    let o = solve(&cfg, &out, &["--deterministic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let result = ResultFile::load(&out.join("result.json")).unwrap();
    assert_eq!(result.termination.as_str(), "converged");
    assert_eq!(result.seed, 0);
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports["optimality"]["pass"], true);
    // mu + mu_r reproduces the measurements
    let misfit = reports["relative_misfit"].as_f64().unwrap();
    assert!(misfit < 0.05, "relative misfit {misfit}");
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    let r_hat: Vec<f64> = history.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse().unwrap()).collect();
    assert!(r_hat.iter().all(|r| *r >= 0.0));
    assert_eq!(*r_hat.last().unwrap(), 0.0);
}
