//! Black-box tests of the `edgefed` binary: exit codes and emitted
//! artifacts.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_edgefed"))
}

#[test]
fn missing_config_exits_1() {
    let out = bin()
        .args(["fed", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_exits_1_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[fed]\nmystery_knob = 3\n").unwrap();
    let out = bin()
        .args(["fed", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mystery_knob"), "stderr: {stderr}");
}

#[test]
fn tiny_fed_run_succeeds_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "seeds = [1]\n\
             [data]\nrows = 600\n\
             [fed]\nclients = 2\nrounds_max = 1\npaillier_bits = 64\n\
             [output]\ndir = {:?}\n",
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["fed", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    for artifact in [
        "fed/config.echo.toml",
        "fed/rounds.jsonl",
        "fed/summary.csv",
        "fed/seeds.txt",
        "fed/report.json",
    ] {
        assert!(out_dir.join(artifact).exists(), "missing {artifact}");
    }
    let status = std::fs::read_to_string(out_dir.join("fed/status.json")).unwrap();
    assert!(status.contains("complete"));
    let summary = std::fs::read_to_string(out_dir.join("fed/summary.csv")).unwrap();
    assert!(summary.starts_with("algorithm,k,distribution,r95,r98,acc,comm_per_round_mb,total_gb"));
}

#[test]
fn invalid_combination_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[fed]\nalgorithm = \"fedavg\"\nencrypt = true\n").unwrap();
    let out = bin()
        .args(["fed", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
