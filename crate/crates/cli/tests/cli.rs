//! End-to-end runs of the `fdecomp` binary: exit codes, artifacts and determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fdecomp::{FunctionalDecomposition, HybridZonotope};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdecomp")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn decompose_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["decompose", "--expr", "sin(x)+sin(x)^2", "--vars", "x", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    let counts: Vec<(String, u64)> = summary["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["stage"].as_str().unwrap().to_string(), s["observables"].as_u64().unwrap()))
        .collect();
    assert_eq!(counts.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(), ["basic", "dedup", "folded", "reduced"]);
    assert!(counts.windows(2).all(|w| w[1].1 <= w[0].1), "{counts:?}");
    for stage in ["basic", "dedup", "folded", "reduced"] {
        let text = fs::read_to_string(dir.path().join(format!("{stage}.json"))).unwrap();
        let fd = FunctionalDecomposition::from_json(&text).unwrap();
        let v = fd.eval(&[0.7]).unwrap()[0];
        assert!((v - (0.7f64.sin() + 0.7f64.sin().powi(2))).abs() < 1e-12, "{stage}: {v}");
        assert!(fs::read_to_string(dir.path().join(format!("{stage}.dot"))).unwrap().starts_with("digraph"));
    }
    let on_disk: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
}

#[test]
fn artifacts_round_trip_through_graphset_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let g = dir.path().join("g");
    assert_eq!(code(&run(&["decompose", "--expr", "sin(x)*y", "--vars", "x", "y", "--out", d.to_str().unwrap()])), 0);
    let out = run(&[
        "graphset",
        "--fd",
        &path(&d, "reduced.json"),
        "--vars",
        "x=[-1,1]",
        "y=[-1,1]",
        "--tol-default",
        "0.05",
        "--out",
        g.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let set = HybridZonotope::from_json(&fs::read_to_string(g.join("set.json")).unwrap()).unwrap();
    assert_eq!(set.dim(), 3);

    // points on the graph pass; points far off it fail with exit code 3
    let mut on = String::from("x,y,f\n");
    for i in 0..=10 {
        for j in 0..=10 {
            let (x, y) = (-1.0 + 0.2 * i as f64, -1.0 + 0.2 * j as f64);
            on += &format!("{x},{y},{}\n", x.sin() * y);
        }
    }
    fs::write(dir.path().join("on.csv"), on).unwrap();
    let out = run(&["check", "--set", &path(&g, "set.json"), "--points", &path(dir.path(), "on.csv")]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(stdout_json(&out)["contained"], 121);

    fs::write(dir.path().join("off.csv"), "0.5,0.5,0.24\n0.5,0.5,2\n").unwrap();
    let verdicts = path(dir.path(), "verdicts.csv");
    let out = run(&["check", "--set", &path(&g, "set.json"), "--points", &path(dir.path(), "off.csv"), "--out", &verdicts]);
    assert_eq!(code(&out), 3);
    let written = fs::read_to_string(&verdicts).unwrap();
    let last: Vec<&str> = written.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(last, ["contained", "true", "false"]);
}

#[test]
fn leaves_counts_band_segments() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["graphset", "--expr", "sin(x)", "--vars", "x=[-3.14,3.14]", "--tol", "sin=0.1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let segments = stdout_json(&out)["total_segments"].as_u64().unwrap();
    let out = run(&["leaves", "--set", &path(dir.path(), "set.json")]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["n_L"].as_u64().unwrap(), segments);
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["decompose", "--expr", "sin(", "--vars", "x"][..],
        &["decompose", "--expr", "x+q", "--vars", "x"],
        &["graphset", "--expr", "x", "--vars", "x=[1,-1]"],
        &["graphset", "--expr", "x", "--vars", "x=[-1,1]", "--tol", "sin=-1"],
        &["check", "--set", "/nonexistent/set.json", "--points", "/nonexistent/p.csv"],
        &["frobnicate"],
        &["decompose"],
    ] {
        let out = run(args);
        assert_eq!(code(&out), 1, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn numerical_failures_exit_with_two() {
    let out = run(&["graphset", "--expr", "log(x)", "--vars", "x=[-1,1]"]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("log") && msg.matches("undefined").count() == 1, "{msg}");
}

#[test]
fn check_rejects_points_of_the_wrong_dimension() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["graphset", "--expr", "x^2", "--vars", "x=[-1,1]", "--out", dir.path().to_str().unwrap()])), 0);
    fs::write(dir.path().join("p.csv"), "0.5,0.25,1\n").unwrap();
    let out = run(&["check", "--set", &path(dir.path(), "set.json"), "--points", &path(dir.path(), "p.csv")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn seeded_runs_are_reproducible() {
    let outputs = |seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g");
        let l = dir.path().join("l");
        let out = run(&[
            "graphset",
            "--expr",
            "tanh(x)*y",
            "--vars",
            "x=[-1,1]",
            "y=[0,2]",
            "--verify",
            "50",
            "--seed",
            seed,
            "--out",
            g.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0);
        let out = run(&["lstm", "--nodes", "2", "--check", "20", "--seed", seed, "--out", l.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        ["set.json", "fd.json", "boundary.csv"]
            .iter()
            .map(|f| fs::read_to_string(g.join(f)).unwrap())
            .chain(["spec.json", "reduced.json"].iter().map(|f| fs::read_to_string(l.join(f)).unwrap()))
            .collect::<Vec<_>>()
    };
    let (a, b, c) = (outputs("7"), outputs("7"), outputs("8"));
    assert_eq!(a, b);
    assert_ne!(a[2], c[2], "boundary samples should depend on the seed");
    assert_ne!(a[3], c[3], "LSTM weights should depend on the seed");
}

#[test]
fn demos_verify_their_own_output() {
    let out = run(&["lstm", "--nodes", "2", "--check", "200", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let lstm = stdout_json(&out);
    assert!(lstm["max_abs_error"].as_f64().unwrap() < 1e-9);
    let out = run(&["dha", "--samples", "200", "--seed", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["contained"], 200);
}
