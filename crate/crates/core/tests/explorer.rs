//! Suite-level properties of the explorer on the bundled socket models.

use std::fs;

use netmbt::explorer::{
    parse_traces, replay, run_suite, run_test, Coverage, ReplayError, SuiteConfig, Verdict,
    INIT_LABEL,
};
use netmbt::models::{Catalog, SocketFactory, SocketOptions};
use netmbt::simnet::{FaultKind, FaultSpec};
use proptest::prelude::*;

fn suite_traces(model: &str, config: &SuiteConfig, options: SocketOptions) -> (String, Coverage) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("suite.trace");
    let config = SuiteConfig {
        trace_path: Some(path.clone()),
        ..config.clone()
    };
    let cat = Catalog::new();
    let report = run_suite(
        cat.get(model).unwrap(),
        &config,
        &mut SocketFactory::sim(options),
    )
    .unwrap();
    (fs::read_to_string(path).unwrap(), report.coverage)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn identical_configs_write_identical_files(seed in any::<u64>(), max_steps in 1usize..120) {
        let config = SuiteConfig::new(seed).tests(20).max_steps(max_steps);
        let (a, _) = suite_traces("server-main", &config, SocketOptions::default());
        let (b, _) = suite_traces("server-main", &config, SocketOptions::default());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn every_test_reruns_alone(seed in any::<u64>(), model in prop::sample::select(vec!["server-main", "minimalist"])) {
        let config = SuiteConfig::new(seed).tests(12);
        let (text, _) = suite_traces(model, &config, SocketOptions::default());
        let traces = parse_traces(&text).unwrap();
        prop_assert_eq!(traces.len(), 12);
        let cat = Catalog::new();
        let mut factory = SocketFactory::sim(SocketOptions::default());
        // Test i alone, without tests 0..i before it.
        for t in traces.iter().rev() {
            let run = run_test(cat.get(model).unwrap(), &config, &mut factory, t.test_index).unwrap();
            prop_assert_eq!(&run.trace, t);
        }
    }

    #[test]
    fn no_test_exceeds_its_budget(seed in any::<u64>(), max_steps in 1usize..40) {
        let config = SuiteConfig::new(seed).tests(15).max_steps(max_steps);
        let (text, _) = suite_traces("server-main", &config, SocketOptions::default());
        for t in parse_traces(&text).unwrap() {
            let counted = t.records.iter().filter(|r| r.label != INIT_LABEL).count();
            prop_assert!(counted <= max_steps, "{} steps > {}", counted, max_steps);
            prop_assert_eq!(counted, t.step_count());
        }
    }

    #[test]
    fn coverage_is_recomputable_from_the_file(seed in any::<u64>()) {
        let config = SuiteConfig::new(seed).tests(25);
        let (text, reported) = suite_traces("server-main", &config, SocketOptions::default());
        let traces = parse_traces(&text).unwrap();
        let shapes = reported.models().map(|m| m.shape.clone()).collect::<Vec<_>>();
        let rebuilt = Coverage::from_traces(shapes, &traces);
        prop_assert_eq!(rebuilt, reported);
    }
}

#[test]
fn child_init_precedes_the_launching_step() {
    let config = SuiteConfig::new(3).tests(30);
    let (text, _) = suite_traces("server-main", &config, SocketOptions::default());
    for t in parse_traces(&text).unwrap() {
        for (i, r) in t.records.iter().enumerate() {
            if r.label == "launchClient" {
                let prev = &t.records[i - 1];
                assert_eq!(
                    prev.label, INIT_LABEL,
                    "test {}: {prev} before {r}",
                    t.test_index
                );
                assert_eq!(prev.model, "client");
            }
        }
    }
}

#[test]
fn passing_trace_replays_and_other_seed_diverges() {
    let cat = Catalog::new();
    let config = SuiteConfig::new(21).tests(5);
    let (text, _) = suite_traces("server-main", &config, SocketOptions::default());
    let traces = parse_traces(&text).unwrap();
    let mut factory = SocketFactory::sim(SocketOptions::default());
    for t in &traces {
        let run = replay(t, &cat.server_main, &config, &mut factory).unwrap();
        assert_eq!(&run.trace, t);
    }
    let other = SuiteConfig::new(22).tests(5);
    match replay(&traces[0], &cat.server_main, &other, &mut factory) {
        Err(ReplayError::Divergence(_)) => {}
        r => panic!("expected a divergence, got {r:?}"),
    }
}

#[test]
fn fault_failure_replays_to_the_same_step() {
    let cat = Catalog::new();
    let options = SocketOptions {
        fault: Some(FaultSpec {
            kind: FaultKind::DuplicateBytes,
            trigger_step: 0,
        }),
        ..SocketOptions::default()
    };
    let config = SuiteConfig::new(5).tests(200);
    let report = run_suite(&cat.minimalist, &config, &mut SocketFactory::sim(options)).unwrap();
    let failed = report.failures.first().expect("the fault is detected");
    let Verdict::Fail { failing_step, .. } = &failed.trace.verdict else {
        unreachable!()
    };
    let again = replay(
        &failed.trace,
        &cat.minimalist,
        &config,
        &mut SocketFactory::sim(options),
    )
    .unwrap();
    assert!(matches!(
        &again.trace.verdict,
        Verdict::Fail { failing_step: s, .. } if s == failing_step
    ));
}
