//! Runs the scripted probe sequence on the simulated network (zero
//! latency) and on loopback sockets, printing both outcomes per probe.
//!
//! ```text
//! cargo run --example conformance
//! ```

use netmbt::conformance::run_conformance;

fn main() {
    let report = run_conformance();
    for (s, r) in report.sim.iter().zip(&report.real) {
        let mark = if s.outcome == r.outcome { ' ' } else { '!' };
        println!(
            "{mark} {:<42} {:<28} {}",
            format!("{}/{}", s.scenario, s.probe),
            s.outcome,
            r.outcome
        );
    }
    print!("{report}");
    let kinds: Vec<String> = report
        .error_kinds_covered()
        .iter()
        .map(|k| k.to_string())
        .collect();
    println!("error kinds: {}", kinds.join(" "));
    std::process::exit(if report.is_clean() { 0 } else { 1 });
}
