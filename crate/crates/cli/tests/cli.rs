use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fnqs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fnqs")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"mode = "train"
seed = 2
output = "{out}"
{extra}
[family]
kind = "tfi-chain"
lattice = {{ kind = "chain", sites = 8 }}

[couplings]
kind = "grid"
start = 0.9
stop = 1.1
points = 2

[model]
layers = 1
heads = 2
dim = 8
patch = 2
embedding = "concat-scalar"
symmetry = "translation"

[sr]
learning_rate = 0.02
diag_shift = 1e-4
steps = 3

[sampler]
samples = 100
burn_in = 10

[evaluate]
couplings = {{ kind = "grid", start = 1.0, stop = 1.0, points = 1 }}
samples = 100
"#,
        out = dir.join("run").display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn verify_passes() {
    let out = fnqs(&["verify"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().count() >= 4);
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = fnqs(&["train", "--config", &cfg, "--workers", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["steps"], 3);
    assert!(dir.path().join("run/checkpoint/weights.fnqs").exists());

    let out = fnqs(&["evaluate", "-c", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("run/evaluation.tsv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().any(|l| l.starts_with("1\tenergy\t")), "{table}");
}

#[test]
fn output_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let other = dir.path().join("elsewhere");
    let out = fnqs(&["oracle", "-c", &cfg, "-o", other.to_str().unwrap(), "--seed", "9"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(other.join("oracle.tsv").exists());
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_key_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "learning_rate = 0.1\n");
    let out = fnqs(&["train", "-c", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("learning_rate"), "{err}");
}

#[test]
fn evaluate_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = fnqs(&["evaluate", "-c", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error:"));
}
