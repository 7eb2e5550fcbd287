//! The minimalist server: each session launches a client, accepts its
//! connection and hands it to a worker. One test's trace is printed in
//! full, then a short suite runs.
//!
//! ```text
//! cargo run --example minimalist_session -- [sim|real] [tests]
//! ```

use netmbt::explorer::{run_suite, run_test, SuiteConfig};
use netmbt::models::{Catalog, SocketFactory, SocketOptions};
use netmbt::sut::BackendKind;

fn main() {
    let mut args = std::env::args().skip(1);
    let backend: BackendKind = args
        .next()
        .map(|s| s.parse().expect("backend is sim or real"))
        .unwrap_or(BackendKind::Sim);
    let tests = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);

    let catalog = Catalog::new();
    let config = SuiteConfig::new(7)
        .tests(tests)
        .backend(backend)
        .max_steps(30);
    let mut factory = SocketFactory::new(&config, SocketOptions::default()).expect("valid options");

    // Columns: step, instance, model, transition, exception, new state.
    let first = run_test(&catalog.minimalist, &config, &mut factory, 0).expect("test runs");
    print!("{}", first.trace);
    println!();

    let report = run_suite(&catalog.minimalist, &config, &mut factory).expect("suite runs");
    print!("{report}");
    if let Some(f) = report.failures.first() {
        print!("{}", f.trace);
    }
    std::process::exit(if report.all_passed() { 0 } else { 1 });
}
