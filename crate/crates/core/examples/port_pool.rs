//! Listen-port leasing for real-socket suites: lowest free port first,
//! released ports rest for a few tests before reuse, and an exhausted
//! range is an error rather than a silent wait.
//!
//! ```text
//! cargo run --example port_pool
//! ```

use netmbt::portman::{PortPool, PortRange};

fn main() {
    let range: PortRange = "20000:20003".parse().unwrap();
    let mut pool = PortPool::with_cooldown(range, 2);

    let leased: Vec<u16> = (0..4).map(|_| pool.acquire().unwrap()).collect();
    println!("leased {leased:?}");
    println!("fifth acquire: {}", pool.acquire().unwrap_err());

    pool.release(20001).unwrap();
    for test in 1..=3 {
        pool.tick();
        println!(
            "after test {test}: free={} cooling={} next={:?}",
            pool.free(),
            pool.cooling(),
            pool.acquire().ok()
        );
    }
    pool.check_invariants().unwrap();
}
