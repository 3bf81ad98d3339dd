use std::path::Path;
use std::process::{Command, Output};

fn floodrag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_floodrag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run floodrag")
}

fn demo_config() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/demo.toml")
        .to_string_lossy()
        .into_owned()
}

#[test]
fn synth_writes_requested_split() {
    let tmp = tempfile::tempdir().unwrap();
    let out = floodrag(
        &[
            "synth",
            "--out",
            "d",
            "--records",
            "50",
            "--train",
            "30",
            "--seed",
            "3",
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let train = std::fs::read_to_string(tmp.path().join("d/train.csv")).unwrap();
    let test = std::fs::read_to_string(tmp.path().join("d/test.csv")).unwrap();
    assert_eq!(train.lines().count(), 31);
    assert_eq!(test.lines().count(), 21);
}

#[test]
fn demo_run_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = floodrag(
        &["run", "--config", &demo_config(), "--out", "run"],
        tmp.path(),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{stdout}{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout.contains("macro_f1"));
    assert!(tmp.path().join("run/metrics.json").exists());
}

#[test]
fn missing_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = floodrag(&["profile", "--config", "nope.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn unscripted_prompts_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = demo_config();
    let ok = floodrag(&["profile", "--config", &cfg, "--out", "run"], tmp.path());
    assert_eq!(ok.status.code(), Some(0));
    // an empty script answers nothing, so every text-mode row fails
    std::fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let out = floodrag(
        &[
            "textmode",
            "--config",
            &cfg,
            "--out",
            "run",
            "--script",
            "empty.jsonl",
        ],
        tmp.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_subcommand_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = floodrag(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}
