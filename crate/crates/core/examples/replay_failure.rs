//! Fault injection and replay. The simulated network duplicates a chunk
//! of bytes; the read oracle catches it, and the failing test is replayed
//! from its trace text alone. Replaying without the fault diverges.
//!
//! ```text
//! cargo run --example replay_failure -- [duplicate-bytes|phantom-readiness|drop-bytes]
//! ```

use netmbt::explorer::{parse_traces, replay, run_suite, SuiteConfig, Verdict};
use netmbt::models::{Catalog, SocketFactory, SocketOptions};
use netmbt::simnet::{FaultKind, FaultSpec};

fn main() {
    let kind: FaultKind = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("unknown fault"))
        .unwrap_or(FaultKind::DuplicateBytes);
    let catalog = Catalog::new();
    let config = SuiteConfig::new(5).tests(1000);
    let faulty = SocketOptions {
        fault: Some(FaultSpec {
            kind,
            trigger_step: 0,
        }),
        ..SocketOptions::default()
    };

    let report = run_suite(
        &catalog.minimalist,
        &config,
        &mut SocketFactory::sim(faulty),
    )
    .expect("suite runs");
    println!(
        "{kind}: {} of {} tests failed",
        report.failed, report.tests_run
    );
    let Some(failure) = report.failures.first() else {
        println!("the oracle did not notice this fault");
        return;
    };

    // Round-trip through the text format, as a saved trace file would.
    let text = failure.trace.to_string();
    print!("{text}");
    let saved = parse_traces(&text).expect("well-formed").remove(0);

    let again = replay(
        &saved,
        &catalog.minimalist,
        &config,
        &mut SocketFactory::sim(faulty),
    )
    .expect("replays step for step");
    if let Verdict::Fail {
        failing_step,
        message,
    } = &again.trace.verdict
    {
        println!("replayed: fails again at step {failing_step:?}: {message}");
    }

    let clean = SocketOptions::default();
    match replay(
        &saved,
        &catalog.minimalist,
        &config,
        &mut SocketFactory::sim(clean),
    ) {
        Ok(_) => println!("without the fault: identical (unexpected)"),
        Err(e) => println!("without the fault: {e}"),
    }
}
