//! CLI integration tests driving the built binary.

use std::process::{Command, Output};

fn tvmin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvmin"))
        .args(args)
        .output()
        .expect("spawn tvmin")
}

fn stdout_kv(output: &Output, key: &str) -> String {
    let text = String::from_utf8_lossy(&output.stdout);
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("missing key {key} in output: {text}"))
}

#[test]
fn bound_evaluates_formula() {
    let out = tvmin(&["bound", "--n", "256", "--s", "5", "--delta", "1", "--u", "0", "--C", "1"]);
    assert!(out.status.success());
    let m: f64 = stdout_kv(&out, "m").parse().unwrap();
    assert!((m - 153.7).abs() <= 0.1, "m = {m}");
    assert_eq!(stdout_kv(&out, "hypothesis_ok"), "true");

    let doubled = tvmin(&["bound", "--n", "256", "--s", "5", "--delta", "1", "--u", "0", "--C", "2"]);
    let m2: f64 = stdout_kv(&doubled, "m").parse().unwrap();
    assert!((m2 - 2.0 * m).abs() <= 1e-3);
}

#[test]
fn gen_then_solve_square_system_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("sig.txt");
    let out = tvmin(&[
        "gen",
        "--class",
        "equidistant",
        "--n",
        "12",
        "--s",
        "2",
        "--seed",
        "1",
        "--out",
        sig.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_kv(&out, "n"), "12");
    assert_eq!(stdout_kv(&out, "s"), "2");
    assert_eq!(stdout_kv(&out, "delta_max"), "1.000000");

    let solved = tvmin(&[
        "solve",
        "--signal",
        sig.to_str().unwrap(),
        "--m",
        "12",
        "--seed",
        "2",
    ]);
    assert!(solved.status.success());
    assert_eq!(stdout_kv(&solved, "recovered"), "true");
    assert_eq!(stdout_kv(&solved, "status"), "converged");
}

#[test]
fn gen_pc_class_and_width() {
    let dir = tempfile::tempdir().unwrap();
    let sig = dir.path().join("pc.txt");
    let out = tvmin(&[
        "gen",
        "--class",
        "pc",
        "--n",
        "30",
        "--breakpoints",
        "0.15,0.3,0.45,0.7,0.9,1.0",
        "--levels",
        "1,3,-2,2,-1,0.5",
        "--out",
        sig.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_kv(&out, "s"), "5");

    let width = tvmin(&[
        "width",
        "--signal",
        sig.to_str().unwrap(),
        "--samples",
        "24",
        "--seed",
        "3",
        "--workers",
        "2",
    ]);
    assert!(width.status.success());
    let delta: f64 = stdout_kv(&width, "delta_hat").parse().unwrap();
    assert!(delta > 0.0 && delta < 30.0, "delta_hat = {delta}");

    // Same seed, same answer.
    let again = tvmin(&[
        "width",
        "--signal",
        sig.to_str().unwrap(),
        "--samples",
        "24",
        "--seed",
        "3",
    ]);
    assert_eq!(stdout_kv(&width, "delta_hat"), stdout_kv(&again, "delta_hat"));
}

#[test]
fn phase_and_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.txt");
    std::fs::write(
        &spec,
        "class = dense-jump\ns = 2\nn = 16\nm = 4,8,16\ntrials = 4\nmaster_seed = 11\n",
    )
    .unwrap();
    let grid_path = dir.path().join("grid.csv");
    let out = tvmin(&[
        "phase",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        grid_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout_kv(&out, "cells"), "3");
    let csv = std::fs::read_to_string(&grid_path).unwrap();
    assert!(csv.contains("n,m,trials,successes"));
    assert!(csv.ends_with('\n'));

    let svg_path = dir.path().join("plot.svg");
    let plotted = tvmin(&[
        "plot",
        "--grid",
        grid_path.to_str().unwrap(),
        "--out",
        svg_path.to_str().unwrap(),
        "--overlay-bound",
    ]);
    assert!(plotted.status.success(), "{}", String::from_utf8_lossy(&plotted.stderr));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("<polyline"));
}

#[test]
fn flag_errors_exit_two_runtime_errors_exit_one() {
    let missing_flag = tvmin(&["solve", "--m", "4"]);
    assert_eq!(missing_flag.status.code(), Some(2));

    let missing_file = tvmin(&["solve", "--signal", "/nonexistent/sig.txt", "--m", "4"]);
    assert_eq!(missing_file.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing_file.stderr).starts_with("error:"));

    let bad_class = tvmin(&["gen", "--class", "pc", "--n", "10", "--out", "/tmp/x.txt"]);
    assert_eq!(bad_class.status.code(), Some(1));
}
