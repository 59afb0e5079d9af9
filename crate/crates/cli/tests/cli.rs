use std::path::Path;
use std::process::{Command, Output};

use lrlab_core::config::{ExperimentConfig, ExperimentKind};
use serde_json::Value;

fn lrlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lrlab"));
    cmd.args(args);
    for key in ["LRLAB_CONFIG", "LRLAB_PRESET", "LRLAB_OUT", "LRLAB_SEED", "LRLAB_WORKERS", "LRLAB_DUMP", "LRLAB_INJECT_LHS_SCALE"] {
        cmd.env_remove(key);
    }
    cmd.envs(envs.iter().copied());
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The chain preset shrunk to a few seconds of work.
fn quick_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::preset("chain-8").unwrap();
    cfg.sampler.count = 16;
    cfg.sampler.refine_evals = 10;
    cfg.dynamics.horizon = 1.0;
    cfg.dynamics.grid_points = 5;
    cfg.experiments.run = vec![ExperimentKind::Lr];
    cfg.experiments.envelope.count = Some(8);
    cfg.experiments.envelope.grid_points = 3;
    cfg.experiments.converge.grid_points = 3;
    let path = dir.join("quick.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_default_config() {
    let o = lrlab(&["validate"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("C0") && text.contains("[pass] derivative-bounds"), "{text}");
}

#[test]
fn lr_writes_a_passing_report_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let o = lrlab(&["--config", &cfg, "--out", out.to_str().unwrap(), "lr"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&out.join("lr_report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["report"]["verdict"], "pass");
    let csv = std::fs::read_to_string(out.join("lr_curves.csv")).unwrap();
    assert!(csv.starts_with("t,lhs_measured,rhs_sinh,rhs_exp,rhs_corollary_best_mu\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(read_json(&out.join("metadata.json"))["finished_unix"].as_u64().is_some());
}

#[test]
fn injected_lhs_scale_forces_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let o = lrlab(&["--config", &cfg, "--out", out.to_str().unwrap(), "--inject-lhs-scale", "1e12", "lr"], &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("lr_report.json"))["report"]["verdict"], "fail");
}

#[test]
fn reports_are_byte_identical_across_runs_and_pool_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(lrlab(&["--config", &cfg, "--out", a.to_str().unwrap(), "--workers", "1", "--seed", "9", "lr"], &[]).status.code(), Some(0));
    assert_eq!(lrlab(&["--config", &cfg, "--workers", "3", "lr"], &[("LRLAB_OUT", b.to_str().unwrap()), ("LRLAB_SEED", "9")]).status.code(), Some(0));
    assert_eq!(std::fs::read(a.join("lr_curves.csv")).unwrap(), std::fs::read(b.join("lr_curves.csv")).unwrap());
    // the embedded config differs only in output.dir
    let (ra, rb) = (read_json(&a.join("lr_report.json")), read_json(&b.join("lr_report.json")));
    assert_eq!(serde_json::to_string(&ra["report"]).unwrap(), serde_json::to_string(&rb["report"]).unwrap());
    assert_eq!(ra["report"]["sampler"]["seed"], 9);
}

#[test]
fn dumped_constants_reproduce_the_rhs_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    assert_eq!(lrlab(&["--config", &cfg, "--out", out_s, "lr"], &[]).status.code(), Some(0));
    let o = lrlab(&["--config", &cfg, "--out", out_s, "dump-constants"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dump = read_json(&out.join("constants.json"));
    let report = read_json(&out.join("lr_report.json"));
    let num = |v: &Value| v.as_f64().unwrap();
    let c = &dump["constants"];
    // C₀ from its ingredients
    let coupling = num(&c["dim"]) * num(&c["c_v"]) * num(&c["c_v"]) * num(&c["psi_norm"]);
    let c0 = num(&c["inv_mass_sup"]) * (num(&c["nu_sup"]) + coupling * num(&c["f_norm"])).max(coupling * num(&c["c_f"])).max(1.0);
    assert_eq!(c0, num(&c["c0"]));
    let (f, g, w) = (num(&dump["f_c1"]), num(&dump["g_c1"]), num(&dump["weight"]));
    let s = c0.sqrt();
    let rows = report["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), dump["times"].as_array().unwrap().len());
    for row in rows {
        let t = num(&row["t"]);
        let rhs = 4.0 * f * g * s * w * (s * t.abs()).sinh();
        assert_eq!(rhs, num(&row["rhs_sinh"]), "t = {t}");
    }
}

#[test]
fn negative_force_constant_is_reported_by_key() {
    let dir = tempfile::tempdir().unwrap();
    let text = ExperimentConfig::preset_text("chain-8")
        .unwrap()
        .replace("force_constants = { law = \"uniform\", value = 1.0 }", "force_constants = { law = \"uniform\", value = -1.0 }");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = lrlab(&["--config", path.to_str().unwrap(), "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.force_constants.value"), "{}", stderr(&o));
}

#[test]
fn overlapping_supports_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = ExperimentConfig::preset_text("chain-8").unwrap().replace("sites = [5]", "sites = [1]");
    let path = dir.path().join("overlap.toml");
    std::fs::write(&path, text).unwrap();
    let o = lrlab(&["--config", path.to_str().unwrap(), "lr"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("disjoint supports"), "{}", stderr(&o));
}

#[test]
fn missing_config_and_unknown_preset() {
    let o = lrlab(&["--config", "/definitely/not/here.toml", "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read configuration"));
    let o = lrlab(&["--preset", "nope", "validate"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dump_prints_the_effective_configuration() {
    let o = lrlab(&["--preset", "harmonic-1site", "--seed", "5", "--dump", "validate"], &[]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let toml_part = &text[..text.find("  [pass]").unwrap()];
    let cfg: ExperimentConfig = ExperimentConfig::from_toml_str(toml_part).unwrap();
    assert_eq!(cfg.sampler.seed, 5);
}

#[test]
fn envelope_and_converge_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let o = lrlab(&["--config", &cfg, "--out", out_s, "envelope"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("envelope_curves.csv").exists());
    let o = lrlab(&["--config", &cfg, "--out", out_s, "converge"], &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(read_json(&out.join("converge_report.json"))["kind"], "converge");
}
