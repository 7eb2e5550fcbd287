//! Exit-code contract of the command line.

mod common;

use std::fs;

use common::{cli, failing_steps};
use netmbt::cli::{EXIT_ERROR, EXIT_FAIL, EXIT_PASS};
use netmbt::explorer::{parse_traces, Verdict};

#[test]
fn seed_is_printed_first() {
    let r = cli(&["run", "--tests", "3", "--seed", "99"]);
    assert_eq!(r.code, EXIT_PASS, "{}{}", r.stdout, r.stderr);
    assert_eq!(r.stdout.lines().next(), Some("seed=99"));

    let r = cli(&["run", "--tests", "2", "--model", "minimalist"]);
    assert_eq!(r.code, EXIT_PASS);
    let first = r.stdout.lines().next().unwrap();
    let seed: u64 = first.strip_prefix("seed=").unwrap().parse().unwrap();
    // The printed seed reproduces the run.
    let again = cli(&[
        "run",
        "--tests",
        "2",
        "--model",
        "minimalist",
        "--seed",
        &seed.to_string(),
    ]);
    // The summary line carries the wall-clock time.
    let body = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with("suite "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body(&r.stdout), body(&again.stdout));
}

#[test]
fn identical_runs_write_identical_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.trace");
    let b = dir.path().join("b.trace");
    for p in [&a, &b] {
        let r = cli(&[
            "run",
            "--model",
            "server-main",
            "--seed",
            "42",
            "--tests",
            "200",
            "--trace-out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(r.code, EXIT_PASS, "{}", r.stdout);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        parse_traces(&fs::read_to_string(&a).unwrap())
            .unwrap()
            .len(),
        200
    );
}

#[test]
fn detected_fault_exits_one_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("dup.trace");
    let out = out.to_str().unwrap();
    let r = cli(&[
        "run",
        "--model",
        "minimalist",
        "--fault",
        "duplicate-bytes",
        "--tests",
        "300",
        "--seed",
        "5",
        "--trace-out",
        out,
    ]);
    assert_eq!(r.code, EXIT_FAIL, "{}", r.stdout);
    let failures = format!("{out}.failures");
    assert!(r.stdout.contains(&failures), "{}", r.stdout);
    let traces = parse_traces(&fs::read_to_string(&failures).unwrap()).unwrap();
    assert!(!traces.is_empty());
    let recorded: Vec<u64> = traces
        .iter()
        .map(|t| match &t.verdict {
            Verdict::Fail {
                failing_step: Some(s),
                ..
            } => *s,
            v => panic!("unexpected verdict {v}"),
        })
        .collect();

    let r = cli(&["replay", "--fault", "duplicate-bytes", &failures]);
    assert_eq!(r.code, EXIT_PASS, "{}", r.stdout);
    assert_eq!(failing_steps(&r.stdout), recorded);

    // Without the fault the same tests pass, which is a divergence.
    let r = cli(&["replay", "--replay", &failures]);
    assert_eq!(r.code, EXIT_FAIL, "{}", r.stdout);
}

#[test]
fn export_dot_and_list_models() {
    let r = cli(&["export-dot", "--model", "worker"]);
    assert_eq!(r.code, EXIT_PASS);
    assert!(r.stdout.starts_with("digraph \"worker\""), "{}", r.stdout);

    let r = cli(&["list-models"]);
    assert_eq!(r.code, EXIT_PASS);
    let names: Vec<&str> = r.stdout.lines().collect();
    for m in ["minimalist", "server-main", "worker", "client"] {
        assert!(names.contains(&m), "{names:?}");
    }
}

#[test]
fn misconfiguration_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.trace");
    fs::write(&garbage, "not a trace\n").unwrap();
    let missing = dir.path().join("missing.trace");
    let cases: Vec<Vec<&str>> = vec![
        vec![],
        vec!["run", "--no-such-flag"],
        vec!["run", "--model", "nope"],
        vec!["run", "--tests", "0"],
        vec!["run", "--max-steps", "0"],
        vec!["run", "--port-range", "30000:20000"],
        vec!["run", "--p-close", "3/2"],
        vec!["run", "--backend", "carrier-pigeon"],
        vec!["run", "--backend", "real", "--fault", "drop-bytes"],
        vec!["export-dot", "--model", "nope"],
        vec!["replay", garbage.to_str().unwrap()],
        vec!["replay", missing.to_str().unwrap()],
        vec!["run", "list-models"],
    ];
    for args in cases {
        let r = cli(&args);
        assert_eq!(r.code, EXIT_ERROR, "{args:?}: {}", r.stdout);
        assert_eq!(r.stderr.lines().count(), 1, "{args:?}: {}", r.stderr);
        assert!(r.stderr.starts_with("netmbt: "), "{args:?}: {}", r.stderr);
    }
}
