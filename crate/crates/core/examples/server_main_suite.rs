//! Runs the selector-based server model and prints the suite summary with
//! per-model coverage.
//!
//! ```text
//! cargo run --example server_main_suite -- [seed] [tests] [sim|real]
//! ```

use netmbt::explorer::{run_suite, SuiteConfig};
use netmbt::models::{Catalog, SocketFactory, SocketOptions};
use netmbt::sut::BackendKind;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let tests = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);
    let backend: BackendKind = args
        .next()
        .map(|s| s.parse().expect("backend is sim or real"))
        .unwrap_or(BackendKind::Sim);

    let catalog = Catalog::new();
    let config = SuiteConfig::new(seed).tests(tests).backend(backend);
    let mut factory = SocketFactory::new(&config, SocketOptions::default()).expect("valid options");
    let report = run_suite(&catalog.server_main, &config, &mut factory).expect("suite runs");
    print!("{report}");
    std::process::exit(if report.all_passed() { 0 } else { 1 });
}
