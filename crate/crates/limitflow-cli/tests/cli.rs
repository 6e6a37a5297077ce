use std::path::Path;
use std::process::{Command, Output};

fn limitflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limitflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("LIMITFLOW_WORKERS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn list_is_sorted_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    let a = limitflow(&["list"], dir.path());
    let b = limitflow(&["list"], dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let ids: Vec<String> = String::from_utf8(a.stdout).unwrap().lines().map(String::from).collect();
    assert!(ids.len() >= 10);
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn describe_shows_schema_or_hint() {
    let dir = tempfile::tempdir().unwrap();
    let out = limitflow(&["describe", "classical-limit"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("hbar_chain") && text.contains("t_grid"), "{text}");
    let out = limitflow(&["describe", "classical-limt.heat"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("did you mean `classical-limit.heat`"), "{err}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[trotter]\nsteps = 3\n");
    assert_eq!(limitflow(&["trotter", "--config", &cfg], dir.path()).status.code(), Some(2));
    assert_eq!(limitflow(&["trotter"], dir.path()).status.code(), Some(2));
    let cfg = write_config(dir.path(), "seed = 1\n");
    assert_eq!(limitflow(&["run", "--config", &cfg], dir.path()).status.code(), Some(2));
}

#[test]
fn resource_cap_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[mean_field]\nN_max = 12\n");
    let out = limitflow(&["mean-field", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn failing_verdict_exits_one() {
    // Twelve levels leave the 2^-n perturbation far above the trend tolerance.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[evolution_check]\nlevels = 12\n");
    let out = limitflow(&["evolution-check", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let verdict = std::fs::read_to_string(dir.path().join("o/evolution-check/verdict.json")).unwrap();
    assert!(verdict.contains("\"pass\": false"));
}

#[test]
fn run_subcommand_and_repeat_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"trotter\"\nseed = 11\n");
    for out in ["a", "b"] {
        let res = limitflow(&["run", "--config", &cfg, "--out", out], dir.path());
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    for file in ["manifest.json", "trotter/verdict.json", "trotter/values.csv", "trotter/errors.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
    let other = limitflow(&["run", "--config", &cfg, "--out", "c", "--seed", "12"], dir.path());
    assert!(other.status.success());
    let a = std::fs::read(dir.path().join("a/trotter/errors.csv")).unwrap();
    let c = std::fs::read(dir.path().join("c/trotter/errors.csv")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn worker_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |workers: &str| {
        Command::new(env!("CARGO_BIN_EXE_limitflow"))
            .args(["trotter", "--seed", "2", "--out", workers])
            .current_dir(dir.path())
            .env("LIMITFLOW_WORKERS", workers)
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert!(run("3").status.success());
    assert_eq!(
        std::fs::read(dir.path().join("1/trotter/verdict.json")).unwrap(),
        std::fs::read(dir.path().join("3/trotter/verdict.json")).unwrap()
    );
    assert_eq!(run("zero").status.code(), Some(2));
}

#[test]
fn tol_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = limitflow(&["mean-field", "--seed", "1", "--tol", "0.005", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let verdict = std::fs::read_to_string(dir.path().join("o/mean-field/verdict.json")).unwrap();
    assert!(verdict.contains("\"tolerance\": 0.005"));
}
