use std::path::Path;
use std::process::{Command, Output};

fn cfm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfm"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("CFM_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn collect_small(dir: &Path, name: &str) {
    let o = cfm(
        &["collect", "--env", "pointmass", "--size", "16", "--n-traj", "4", "--len", "6", "--seed", "1", "--out", name],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&cfm(&[], dir.path())), 1);
    assert_eq!(code(&cfm(&["collect", "--env", "rope"], dir.path())), 1);
    assert_eq!(code(&cfm(&["collect", "--env", "blob", "--out", "x"], dir.path())), 1);
    assert_eq!(code(&cfm(&["--help"], dir.path())), 0);
    std::fs::write(dir.path().join("bad.json"), r#"{"epochz": 3}"#).unwrap();
    assert_eq!(code(&cfm(&["--config", "bad.json", "gradcheck", "--seeds", "1", "--only", "dense"], dir.path())), 1);
}

#[test]
fn collect_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    collect_small(dir.path(), "a.cfmd");
    collect_small(dir.path(), "b.cfmd");
    let a = std::fs::read(dir.path().join("a.cfmd")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.cfmd")).unwrap());
    let data = cfm::dataset::load(&a).unwrap();
    assert_eq!(data.transition_count(), 24);
}

#[test]
fn train_eval_and_plan() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    collect_small(d, "pm.cfmd");
    let o = cfm(&["train", "--data", "pm.cfmd", "--epochs", "2", "--batch-size", "8", "--seed", "1", "--out", "pm.cfmc"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 2);
    let curve: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pm.losses.json")).unwrap()).unwrap();
    assert_eq!(curve["losses"].as_array().unwrap().len(), 2);
    let model = cfm::models::checkpoint::read_file(&d.join("pm.cfmc")).unwrap();
    assert_eq!(model.config["train"]["epochs"], 2);

    let o = cfm(
        &["eval", "--ckpt", "pm.cfmc", "--goals", "center,random", "--episodes", "2", "--max-steps", "2", "--n", "10", "--out-prefix", "res"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = std::fs::read_to_string(d.join("res.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.lines().any(|l| l.starts_with("pm\tcenter")));
    assert!(tsv.lines().any(|l| l.starts_with("random\trandom")));

    let o = cfm(&["plan", "--ckpt", "pm.cfmc", "--goal", "center", "--max-steps", "3", "--n", "10"], d);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.starts_with("3\t")));

    let o = cfm(&["eval", "--ckpt", "nope.cfmc"], d);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing checkpoint"));
}

#[test]
fn random_policy_eval_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfm(
        &[
            "eval", "--policy", "random", "--env", "rope", "--size", "16", "--goals", "horizontal,vertical,random",
            "--episodes", "2", "--max-steps", "2", "--out-prefix", "r",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("r.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn divergence_removes_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    collect_small(d, "pm.cfmd");
    let o = cfm(&["train", "--data", "pm.cfmd", "--epochs", "3", "--batch-size", "8", "--lr", "1e30", "--out", "nan.cfmc"], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("nan.cfmc").exists());
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    collect_small(d, "pm.cfmd");
    std::fs::write(d.join("run.json"), r#"{"train": {"epochs": 5, "batch_size": 8}, "data": "pm.cfmd"}"#).unwrap();
    let o = cfm(&["--config", "run.json", "train", "--epochs", "1"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch")).count(), 1);
    let hashed = std::fs::read_dir(d)
        .unwrap()
        .filter_map(|e| e.ok())
        .any(|e| e.file_name().to_string_lossy().starts_with("cfm-") && e.file_name().to_string_lossy().ends_with(".cfmc"));
    assert!(hashed);
}

#[test]
fn ablate_subset_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = cfm(&["collect", "--env", "rope", "--size", "16", "--n-traj", "2", "--len", "8", "--out", "rope.cfmd"], d);
    assert_eq!(code(&o), 0);
    let o = cfm(
        &[
            "ablate", "--data", "rope.cfmd", "--epochs", "1", "--batch-size", "8", "--goals", "random", "--episodes", "1",
            "--max-steps", "1", "--n", "5", "--out-prefix", "ab", "--grid", "fm=linear,mlp", "sim=e2,logbilinear",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tsv = std::fs::read_to_string(d.join("ab.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 1 + 4);
    let o = cfm(&["ablate", "--data", "rope.cfmd", "--grid", "depth=3"], d);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_threshold_controls_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = cfm(&["gradcheck", "--seeds", "2", "--only", "dense"], dir.path());
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("dense"));
    let again = cfm(&["gradcheck", "--seeds", "2", "--only", "dense"], dir.path());
    assert_eq!(stdout(&o), stdout(&again));
    let o = cfm(&["gradcheck", "--seeds", "1", "--only", "conv2d_s1", "--tol", "1e-30"], dir.path());
    assert_eq!(code(&o), 2);
}
