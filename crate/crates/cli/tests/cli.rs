use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_tauflow");

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reference(name: &str) -> PathBuf {
    workspace().join("configs").join(name)
}

fn tauflow(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("TAUFLOW_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

const ROUND_ODE: &str = r#"
[geometry]
backend = "round_scale"
dimension = 3
scale = 2.3

[flow]
kind = "tau"
tau = 0.5
dt = 1e-3
horizon = 1.0
output_interval = 0.01
"#;

#[test]
fn non_positive_tau_is_a_field_level_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &ROUND_ODE.replace("tau = 0.5", "tau = -1.0"));
    let out = tauflow(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.tau"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("{ROUND_ODE}\nspeed = 3\n"));
    assert_eq!(code(&tauflow(&["run", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn stationary_sphere_is_clean_and_einstein() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tauflow(&[
        "run",
        "--config",
        reference("stationary_s2.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    assert_eq!(r["classification"]["verdict"], "einstein");
    assert_eq!(r["complete"], true);
}

#[test]
fn shrinking_sphere_stops_with_singularity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tauflow(&[
        "run",
        "--config",
        reference("shrinking_sphere.toml").to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let r = report(tmp.path());
    assert_eq!(r["complete"], false);
    let t = r["termination"]["t"].as_f64().unwrap();
    // c₀/(2(n − 1)) with c₀ = 1, n = 3
    assert!((t - 0.25).abs() < 5e-3, "{t}");
    let manifest: Value = serde_json::from_slice(&fs::read(tmp.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], false);
}

#[test]
fn manifest_lists_every_artifact_with_its_digest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ROUND_ODE);
    let dir = tmp.path().join("run");
    assert_eq!(code(&tauflow(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])), 0);
    let m = tauflow_cli::pipeline::RunManifest::load(&dir).unwrap();
    assert!(m.mismatches(&dir).is_empty());
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk = Vec::new();
    for sub in ["", "series", "plots"] {
        for e in fs::read_dir(dir.join(sub)).unwrap() {
            let e = e.unwrap();
            if e.file_type().unwrap().is_file() {
                let name = e.file_name().into_string().unwrap();
                on_disk.push(if sub.is_empty() { name } else { format!("{sub}/{name}") });
            }
        }
    }
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let hash = m.config_hash.clone();
    assert!(fs::read_to_string(dir.join("report.json")).unwrap().contains(&hash));
}

#[test]
fn resume_without_extra_horizon_adds_no_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ROUND_ODE);
    let dir = tmp.path().join("run");
    tauflow(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    let before = report(&dir)["samples"].clone();
    let cp = dir.join("checkpoint.json");
    let out = tauflow(&["resume", "--checkpoint", cp.to_str().unwrap(), "--extra-horizon", "0"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(report(&dir)["samples"], before);
}

#[test]
fn split_and_straight_round_scale_runs_write_identical_series() {
    let tmp = tempfile::tempdir().unwrap();
    let straight_cfg = write_config(tmp.path(), "straight.toml", ROUND_ODE);
    let half_cfg = write_config(tmp.path(), "half.toml", &ROUND_ODE.replace("horizon = 1.0", "horizon = 0.5"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    tauflow(&["run", "--config", straight_cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    tauflow(&["run", "--config", half_cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let cp = b.join("checkpoint.json");
    assert_eq!(code(&tauflow(&["resume", "--checkpoint", cp.to_str().unwrap(), "--extra-horizon", "0.5"])), 0);
    let names: Vec<_> = fs::read_dir(a.join("series")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join("series").join(&n)).unwrap(), fs::read(b.join("series").join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn tampered_checkpoint_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ROUND_ODE);
    let dir = tmp.path().join("run");
    tauflow(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    let cp = dir.join("checkpoint.json");
    let text = fs::read_to_string(&cp).unwrap().replacen("2.3", "2.4", 1);
    fs::write(&cp, text).unwrap();
    let out = tauflow(&["resume", "--checkpoint", cp.to_str().unwrap(), "--extra-horizon", "0.1"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn verify_without_configs_is_a_usage_error() {
    let out = tauflow(&["verify"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn verify_passes_on_a_reference_config() {
    let out = tauflow(&["verify", "--config", reference("perturbed_s2.toml").to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    assert!(text.contains("grid_convergence"));
}

#[test]
fn verify_flags_a_coarse_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(reference("perturbed_s2.toml")).unwrap();
    let coarse =
        text.lines().map(|l| if l.starts_with("intervals") { "intervals = 16" } else { l }).collect::<Vec<_>>();
    let cfg = write_config(tmp.path(), "coarse16.toml", &coarse.join("\n"));
    let out = tauflow(&["verify", "--config", cfg.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 4, "{stdout}");
    let failed: Vec<&str> = stdout.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|l| l.contains("grid_convergence")), "{failed:?}");
}

#[test]
fn env_var_overrides_out_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ROUND_ODE);
    let (flag, env) = (tmp.path().join("flag"), tmp.path().join("env"));
    let out = Command::new(BIN)
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", flag.to_str().unwrap()])
        .env("TAUFLOW_OUT", &env)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(env.join("manifest.json").exists());
    assert!(!flag.exists());
}

#[test]
fn batch_mode_runs_each_config_and_reports_the_worst_code() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write_config(tmp.path(), "ok.toml", ROUND_ODE);
    let dying = write_config(
        tmp.path(),
        "dying.toml",
        &ROUND_ODE.replace("scale = 2.3", "scale = 0.9").replace("tau = 0.5", "tau = 0.25"),
    );
    let base = tmp.path().join("batch");
    let out = tauflow(&[
        "run",
        "--jobs",
        "2",
        "--out",
        base.to_str().unwrap(),
        "--config",
        ok.to_str().unwrap(),
        "--config",
        dying.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert_eq!(report(&base.join("ok"))["exit_code"], 0);
    assert_eq!(report(&base.join("dying"))["exit_code"], 3);

    let summary = tauflow(&["report", base.join("ok").to_str().unwrap(), base.join("dying").to_str().unwrap()]);
    assert_eq!(code(&summary), 0);
    let v: Value = serde_json::from_slice(&summary.stdout).unwrap();
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn report_detects_modified_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ROUND_ODE);
    let dir = tmp.path().join("run");
    tauflow(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    fs::write(dir.join("series/volume.csv"), "t,value\n0,1\n").unwrap();
    let out = tauflow(&["report", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}
