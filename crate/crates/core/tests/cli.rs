use std::process::{Command, Output};

fn regnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regnet")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn check_reports_counts_and_succeeds() {
    let out = regnet(&["check"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("2 passed, 0 failed"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 2);
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    let out = regnet(&["train", "--k", "-1", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--k"));
    let out = regnet(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = regnet(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("--checkpoint"));
}

#[test]
fn missing_files_exit_3() {
    let out = regnet(&["eval", "--checkpoint", "/nonexistent/ckpt.txt"]);
    assert_eq!(out.status.code(), Some(3));
    let out = regnet(&["train", "--dataset", "/nonexistent/data.csv", "--out", "unused"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = dir.path().join("run.conf");
    // The flag below overrides the file's episode count.
    std::fs::write(&config, "episodes = 5000\nval-interval = 50\nk = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regnet"))
        .args(["train", "--episodes", "100", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let history = std::fs::read_to_string(out_dir.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 100);
    assert_eq!(history.lines().filter(|l| l.contains("val_acc")).count(), 2);
    assert!(!history.contains("wall_time"));

    let ckpt = out_dir.join("checkpoint.txt");
    let out = Command::new(env!("CARGO_BIN_EXE_regnet"))
        .args(["eval", "--k", "1", "--test-episodes", "20", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("regression"));
    let report: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(out_dir.join("report.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(report["k"], 1);
    assert_eq!(report["per_episode"].as_array().unwrap().len(), 20);
}

#[test]
fn wall_time_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_regnet"))
        .args(["train", "--episodes", "5", "--wall-time", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let history = std::fs::read_to_string(dir.path().join("history.jsonl")).unwrap();
    assert!(history.lines().all(|l| l.contains("\"wall_time\":")));
}
