use std::path::Path;
use std::process::Command;

use hydrostab::evolution::parse_diagnostics_csv;
use hydrostab::experiments::{worst_functional_increase, ExperimentReport};
use hydrostab::report::{round_trips, RunManifest};

const STATE_CFG: &str = "seed = 3\n[grid]\nnx = 12\n[profile]\nkind = \"linear\"\na = 1\nb = 1\n[physics]\nmu = 0.01\nsigma = 0.5\n";

fn hydrostab(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_hydrostab")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn state_phi_lambda_simulate_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "state.cfg", STATE_CFG);
    let (code, out, err) = hydrostab(&["--config", &cfg, "steady", "--out", &p(d, "st")]);
    assert_eq!(code, 0, "{out}{err}");

    let (code, _, err) = hydrostab(&[
        "phi", "--state", &p(d, "st"), "--s-min", "0.1", "--s-max", "0.5", "--s-count", "3", "--out", &p(d, "phi/phi.csv"),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(d.join("phi/phi.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "s,phi,iterations,residual");
    assert_eq!(lines.len(), 4);

    let (code, _, err) = hydrostab(&["lambda", "--state", &p(d, "st"), "--out", &p(d, "lam/lambda.json")]);
    assert_eq!(code, 0, "{err}");
    let lam: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("lam/lambda.json")).unwrap()).unwrap();
    for key in ["lambda", "fixed_point_residual", "bracket", "upper_bound"] {
        assert!(!lam[key].is_null(), "{key}");
    }

    let run_cfg = write(d, "run.cfg", "[run]\ncheckpoint_every = 5\n");
    let (code, out, err) = hydrostab(&[
        "--config", &run_cfg, "simulate", "--state", &p(d, "st"), "--mode", "nonlinear", "--init", "eigenmode",
        "--amplitude", "1e-3", "--t-end", "0.5", "--out", &p(d, "run"),
    ]);
    assert_eq!(code, 0, "{out}{err}");
    assert!(out.contains("PASS total_density_bounds"));
    assert!(d.join("run/checkpoints/sample_000005/rho.hsf").exists());

    // restart from a checkpoint
    let init = format!("file:{}", p(d, "run/final"));
    let (code, _, err) = hydrostab(&[
        "simulate", "--state", &p(d, "st"), "--mode", "linear", "--init", &init, "--t-end", "0.1", "--out", &p(d, "run2"),
    ]);
    assert_eq!(code, 0, "{err}");

    let (code, out, _) = hydrostab(&["verify", "--state", &p(d, "st"), "--run", &p(d, "run"), "--trials", "20"]);
    assert_eq!(code, 0, "{out}");
    std::fs::write(d.join("run/diagnostics.csv"), "tampered").unwrap();
    let (code, out, _) = hydrostab(&["verify", "--state", &p(d, "st"), "--run", &p(d, "run"), "--trials", "20"]);
    assert_eq!(code, 1);
    assert!(out.contains("FAIL run_output_hashes"));
}

#[test]
fn config_errors_exit_2_with_positions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "bad.cfg", "[grid]\nnx = -4\nnx = 8\nbogus = 1\n");
    let (code, _, err) = hydrostab(&["--config", &cfg, "steady", "--out", &p(d, "x")]);
    assert_eq!(code, 2);
    assert!(err.contains("2:6: grid.nx"), "{err}");
    assert!(err.contains("lines 2 and 3"), "{err}");
    assert!(err.contains("4:1: unknown key 'grid.bogus'"), "{err}");
    assert!(err.contains("missing required key 'physics.mu'"), "{err}");
    let (code, _, _) = hydrostab(&["steady", "--out", &p(d, "x"), "--no-such-flag"]);
    assert_eq!(code, 2);
}

#[test]
fn numerical_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "state.cfg", STATE_CFG);
    assert_eq!(hydrostab(&["--config", &cfg, "steady", "--out", &p(d, "st")]).0, 0);
    let (code, _, err) = hydrostab(&[
        "simulate", "--state", &p(d, "st"), "--init", "eigenmode", "--dt", "1.0", "--t-end", "2", "--out", &p(d, "run"),
    ]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("exceeds the advective limit"), "{err}");
}

#[test]
fn stable_state_reports_no_instability() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write(d, "s.cfg", &STATE_CFG.replace("b = 1", "b = -0.1"));
    assert_eq!(hydrostab(&["--config", &cfg, "steady", "--out", &p(d, "st")]).0, 0);
    let (code, _, err) = hydrostab(&["lambda", "--state", &p(d, "st"), "--out", &p(d, "lambda.json")]);
    assert_eq!(code, 0, "{err}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("lambda.json")).unwrap()).unwrap();
    assert_eq!(v["instability"], false);
    assert!(v["lambda"].is_null());
}

#[test]
fn experiment_outputs_are_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let text = "[profile]\nkind = \"linear\"\na = 1\nb = -0.1\n[physics]\nmu = 0.05\nsigma = 0.5\n\
                [experiment]\nresolutions = [8]\ndeltas = [1e-2]\ndecay_horizon = 2.0\n";
    let cfg = write(d, "exp.cfg", text);
    let (code, out, err) = hydrostab(&["--config", &cfg, "--seed", "5", "experiment", "stability", "--out", &p(d, "exp")]);
    // a short horizon does not reach the decay target, so h1_decay may fail (exit 1); both are valid reports
    assert!(code == 0 || code == 1, "{out}{err}");
    let report_text = std::fs::read_to_string(d.join("exp/report.json")).unwrap();
    assert!(round_trips::<ExperimentReport>(&report_text).unwrap());
    let report: ExperimentReport = serde_json::from_str(&report_text).unwrap();
    assert_eq!(code == 0, report.passed);

    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(d.join("exp/run.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.config["experiment"]["decay_horizon"], 2.0);
    assert!(manifest.outputs.contains_key("report.json"));
    assert!(d.join("exp/functional.svg").exists());

    // recompute the functional criterion from the CSV
    for run in &report.runs {
        let csv = std::fs::read_to_string(d.join("exp/runs").join(&run.label).join("diagnostics.csv")).unwrap();
        let rows = parse_diagnostics_csv(&csv).unwrap();
        let worst = worst_functional_increase(&rows);
        let tag = run.label.split('_').next().unwrap();
        let c = report
            .criteria
            .iter()
            .find(|c| c.name == format!("{tag}_functional_nonincreasing"))
            .unwrap();
        assert_eq!(c.value, Some(worst));
    }
}
