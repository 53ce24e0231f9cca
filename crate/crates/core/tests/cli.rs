use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
[experiment]
seeds = [0]

[trainer]
epochs = 2

[study]
methods = ["cosface", "csl_cls"]
conflict_methods = ["csl_cls"]
"#;

fn dyml(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dyml"));
    cmd.args(args).env_remove("DYML_OUT");
    if let Some(dir) = env_out {
        cmd.env("DYML_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = dyml(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every file below `dir` with its bytes, in path order.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn invalid_sigmas_exit_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[dataset.synthetic]\nsigmas = [0.1, 0.2]\n");
    let out = dyml(&["gen", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InvalidSpec"));
}

#[test]
fn unknown_keys_exit_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[trainer]\nlearning_rate = 0.1\n");
    let out = dyml(&["train", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "[dataset]\ntrain_path = {:?}\ntest_path = {:?}\n",
        tmp.path().join("none-train.dyml"),
        tmp.path().join("none-test.dyml")
    );
    let cfg = write_config(tmp.path(), &text);
    let out = dyml(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn repeated_commands_write_identical_bytes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let out = out.to_str().unwrap();
        run_ok(&["gen", "--config", cfg, "--out", out]);
        run_ok(&["train", "--config", cfg, "--out", out]);
        run_ok(&["eval", "--config", cfg, "--out", out]);
        run_ok(&["study", "conflict", "--config", cfg, "--out", out, "--jobs", if run == "a" { "1" } else { "2" }]);
        snapshots.push(snapshot(Path::new(out)));
    }
    assert!(snapshots[0].len() >= 8);
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn output_directory_precedence() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    let from_env = tmp.path().join("env");
    let out = dyml(&["gen", "--config", cfg], Some(&from_env));
    assert!(out.status.success());
    assert!(from_env.join("train.dyml").exists());

    let from_flag = tmp.path().join("flag");
    let out = dyml(&["gen", "--config", cfg, "--out", from_flag.to_str().unwrap()], Some(&from_env));
    assert!(out.status.success());
    assert!(from_flag.join("train.dyml").exists());
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    let (straight, split) = (tmp.path().join("straight"), tmp.path().join("split"));
    let (straight, split) = (straight.to_str().unwrap(), split.to_str().unwrap());
    run_ok(&["train", "--config", cfg, "--out", straight]);
    run_ok(&["train", "--config", cfg, "--out", split, "--until-epoch", "1"]);
    run_ok(&["train", "--config", cfg, "--out", split, "--resume"]);
    assert_eq!(snapshot(Path::new(straight)), snapshot(Path::new(split)));
}

#[test]
fn artifacts_carry_config_hash_and_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    run_ok(&["train", "--config", cfg, "--out", out, "--seed", "5"]);
    run_ok(&["eval", "--config", cfg, "--out", out, "--seed", "5"]);
    let run = Path::new(out).join("csl_cls").join("seed-5");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    let hash = json["meta"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(json["meta"]["seed"], 5);
    let csv = fs::read_to_string(run.join("report.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.contains(&hash)));
    let diag = fs::read_to_string(run.join("diagnostics.csv")).unwrap();
    assert!(diag.lines().skip(1).all(|l| l.starts_with(&format!("{hash},5,"))));
}
