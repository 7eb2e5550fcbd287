//! Why orchestration order matters. The reordered minimalist server calls
//! a blocking accept before launching the client that would connect, so
//! the accept can never complete. On the simulated network this is seen
//! at once; on loopback sockets the watchdog ends the test.
//!
//! ```text
//! cargo run --example deadlock_watchdog -- [watchdog-ms]
//! ```

use std::time::{Duration, Instant};

use netmbt::explorer::{run_suite, SuiteConfig};
use netmbt::models::{Catalog, SocketFactory, SocketOptions};
use netmbt::sut::BackendKind;

fn main() {
    let ms = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1000);
    let options = SocketOptions {
        watchdog: Duration::from_millis(ms),
        ..SocketOptions::default()
    };
    let catalog = Catalog::new();
    for backend in [BackendKind::Sim, BackendKind::Real] {
        let mut config = SuiteConfig::new(7).tests(20).backend(backend);
        config.abort_on_first_failure = true;
        let mut factory = SocketFactory::new(&config, options).expect("valid options");
        let started = Instant::now();
        let report =
            run_suite(&catalog.minimalist_reordered, &config, &mut factory).expect("suite runs");
        println!("[{backend}] {:.2}s", started.elapsed().as_secs_f64());
        print!("{report}");
    }
}
