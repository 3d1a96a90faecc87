use std::path::Path;
use std::process::{Command, Output};

fn cfa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfa")).args(args).output().unwrap()
}

/// Keeps CLI training runs to a fraction of a second.
const TINY: [&str; 12] = [
    "--set",
    "epochs=3",
    "--set",
    "dataset.n=300",
    "--set",
    "test_size=100",
    "--set",
    "hidden=[8]",
    "--set",
    "batch_size=64",
    "--set",
    "valid_fraction=0.2",
];

fn with_tiny<'a>(head: &[&'a str]) -> Vec<&'a str> {
    head.iter().copied().chain(TINY).collect()
}

#[test]
fn toy_verify_passes_on_defaults() {
    let out = cfa(&["toy-verify", "--check"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["theorems"].as_array().unwrap().len(), 4);
}

#[test]
fn toy_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    let out = cfa(&["toy-sweep", "--w-steps", "3", "--eps", "0,0.4", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = std::fs::read_to_string(path).unwrap();
    assert_eq!(csv.lines().next(), Some("w,eval_eps,class,accuracy"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
}

#[test]
fn train_writes_reports_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = with_tiny(&["train", "--seed", "1,2", "--out", out_dir, "--check", "--set", "ccm=true", "--set", "averaging=fawa"]);
    let out = cfa(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in [1, 2] {
        let run = Path::new(out_dir).join(format!("seed-{seed}"));
        for f in ["metrics.csv", "averaging.csv", "summary.json", "config.json"] {
            assert!(run.join(f).exists(), "{f} missing for seed {seed}");
        }
        let cfg: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
        assert_eq!(cfg["epochs"], 3);
        assert_eq!(cfg["seed"], seed);
    }
}

#[test]
fn sweep_margin_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = with_tiny(&["sweep-margin", "--values", "0,0.1", "--out", out_dir]);
    let out = cfa(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep_margin.csv")).unwrap();
    // header + 2 values × 2 checkpoints × (overall + 4 classes)
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 5);
}

#[test]
fn bad_inputs_are_reported() {
    let out = cfa(&["train", "--set", "no_such_field=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = cfa(&["train", "--set", "ccr=true"]);
    assert_eq!(out.status.code(), Some(1));
    let out = cfa(&["sweep-beta", "--values", "1,2"]);
    assert_eq!(out.status.code(), Some(1), "beta sweep needs TRADES");
}

#[test]
fn partial_config_file_keeps_other_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"method": "trades", "ccr": true, "budget": {"lambda1": 0.3}, "eval_attack": {"eps": 0.05},
            "dataset": {"kind": "preset", "name": "multi4-easyhard", "n": 300}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("runs");
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    args.extend(TINY);
    let out = cfa(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("seed-0/config.json")).unwrap()).unwrap();
    assert_eq!(echoed["budget"]["lambda1"], 0.3);
    assert_eq!(echoed["budget"]["beta_base"], 6.0);
    assert_eq!(echoed["eval_attack"]["eps"], 0.05);
    assert_eq!(echoed["eval_attack"]["steps"], 10);
    assert_eq!(echoed["dataset"]["kind"], "preset");
}
