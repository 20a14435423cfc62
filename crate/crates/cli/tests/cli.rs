use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gradshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradshift"))
        .args(args)
        .env("GRADSHIFT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn json_out(args: &[&str]) -> Value {
    let out = gradshift(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_line(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"));
    assert!(v["error"].is_string());
    v
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
name = "small"
seeds = [1, 2, 3]
schedules = ["no_adaptation", "gradual"]
output_dir = "{}"

[generator]
kind = "rotating_moons"
domains = 3
n = 60
total_degrees = 40.0
noise_sigma = 0.1
seed = 5

[train]
epochs_per_domain = 2
batch_size = 32
k_critic = 2
{extra}
"#,
        dir.join("out").display()
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn bound_echoes_inputs() {
    let v = json_out(&["bound", "--T", "10", "--M", "1", "--delta", "0.1", "--rho", "1", "--Delta", "0.01", "--vc", "10", "--n", "100"]);
    let e1 = v["report"]["e1"].as_f64().unwrap();
    assert!((e1 - (0.3 + 0.3 * (8.0 * 10f64.ln()).sqrt())).abs() < 1e-9);
    assert!((v["report"]["components"]["drift"].as_f64().unwrap() - 0.3).abs() < 1e-15);
    assert_eq!(v["inputs"]["T"], 10);
    assert_eq!(v["inputs"]["Delta"], 0.01);
}

#[test]
fn sweep_without_drift_prefers_the_longest_horizon() {
    let v = json_out(&["sweep", "--T-min", "2", "--T-max", "60", "--Delta", "0"]);
    assert_eq!(v["argmin_t"], 60);
    assert_eq!(v["rows"].as_array().unwrap().len(), 59);
}

#[test]
fn shipped_sweep_config_has_an_interior_optimum() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/horizon_tradeoff.toml");
    let v = json_out(&["sweep", "--config", cfg.to_str().unwrap(), "--summary"]);
    let t = v["argmin_t"].as_u64().unwrap();
    assert!(t > 2 && t < 200, "{t}");
}

#[test]
fn seqrad_two_constants() {
    let v = json_out(&["seqrad", "--z", "2", "--functions", "1,1;-1,-1", "--T", "1"]);
    assert_eq!(v["value"], 1.0);
}

#[test]
fn w1_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "x,y\n0,0\n1,0\n").unwrap();
    fs::write(&b, "0,1\n1,1\n").unwrap();
    let (sa, sb) = (a.to_str().unwrap(), b.to_str().unwrap());
    assert_eq!(json_out(&["w1", sa, sb])["distance"], 1.0);
    assert_eq!(json_out(&["w1", sa, sa])["distance"], 0.0);
    let s = json_out(&["w1", sa, sa, "--method", "sinkhorn", "--epsilon", "1e-3"]);
    assert!(s["distance"].as_f64().unwrap() <= 1e-2);
    assert_eq!(s["method"], "sinkhorn");

    fs::write(&b, "0,1\n1,oops\n").unwrap();
    let out = gradshift(&["w1", sa, sb]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);
}

#[test]
fn invalid_numerics_exit_two() {
    for args in [
        vec!["bound", "--T", "1"],
        vec!["bound", "--T", "5", "--delta", "1.5"],
        vec!["sweep", "--T-min", "9", "--T-max", "3"],
        vec!["seqrad", "--z", "2", "--functions", "1,x", "--T", "1"],
    ] {
        let out = gradshift(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        error_line(&out);
    }
}

#[test]
fn lemma1_same_distribution_has_no_gap() {
    let v = json_out(&["lemma1", "--shift", "0", "--trials", "20", "--n", "100"]);
    assert_eq!(v["report"]["violations"], 0);
}

#[test]
fn run_writes_reports_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let v = json_out(&["run", cfg.to_str().unwrap()]);
    assert_eq!(v["completed"], true);
    let out = dir.path().join("out");
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let schedules = report["schedules"].as_object().unwrap();
    assert_eq!(schedules.len(), 2);
    for s in schedules.values() {
        assert_eq!(s["runs"], 3);
        assert!(s["mean"].is_number() && s["std"].is_number());
    }
    let csv1 = fs::read(out.join("metrics.csv")).unwrap();
    let rep1 = fs::read(out.join("report.json")).unwrap();
    assert!(csv1.starts_with(b"run_id,seed,schedule,t,epoch,class_loss,alignment,gp,target_acc,wall_ms\n"));
    for id in ["gradual-1", "no_adaptation-3"] {
        assert!(out.join("checkpoints").join(format!("{id}.ckpt")).exists());
    }

    json_out(&["run", cfg.to_str().unwrap()]);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), csv1);
    assert_eq!(fs::read(out.join("report.json")).unwrap(), rep1);
}

#[test]
fn halted_run_resumes_to_the_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    let other = dir.path().join("straight");
    json_out(&["run", cfg, "--out", other.to_str().unwrap()]);
    let straight = fs::read(other.join("metrics.csv")).unwrap();

    let halted = json_out(&["run", cfg, "--halt-after-stage", "1"]);
    assert_eq!(halted["completed"], false);
    assert!(!dir.path().join("out/metrics.csv").exists());
    let resumed = json_out(&["run", cfg, "--resume"]);
    assert_eq!(resumed["completed"], true);
    assert_eq!(fs::read(dir.path().join("out/metrics.csv")).unwrap(), straight);
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "lambda = -1.0");
    let out = gradshift(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert!(e["error"].as_str().unwrap().contains("lambda"), "{e}");

    let cfg = small_config(dir.path(), "colour = 1");
    let out = gradshift(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["error"].as_str().unwrap().contains("colour"));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "lr_model = 1e300\noptimizer = \"sgd\"");
    let out = gradshift(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let e = error_line(&out);
    assert_eq!(e["kind"], "divergence");
    assert!(e["error"].as_str().unwrap().contains("run "));
}

#[test]
fn resume_rejects_a_foreign_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    json_out(&["run", cfg.to_str().unwrap(), "--halt-after-stage", "1"]);
    let cfg = small_config(dir.path(), "lambda = 0.2");
    let out = gradshift(&["run", cfg.to_str().unwrap(), "--resume"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["kind"], "checkpoint");
}
