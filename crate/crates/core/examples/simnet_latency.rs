//! The simulated network on its own: writes are split into cohorts that
//! arrive over the next steps, readiness follows arrival, and every byte
//! is accounted for.
//!
//! ```text
//! cargo run --example simnet_latency -- [seed]
//! ```

use netmbt::simnet::{LatencyModel, SimNetwork};
use netmbt::sut::{Interest, ReadResult, Sut, LOOPBACK};

fn main() {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let mut sut = Sut::new(Box::new(SimNetwork::new(seed, LatencyModel::uniform())));

    let server = sut.open_server().unwrap();
    let port = sut.bind(server, 0).unwrap();
    let client = sut.connect(LOOPBACK, port).unwrap();
    let conn = sut.accept(server).unwrap().expect("connection is queued");
    sut.configure_blocking(conn, false).unwrap();
    let sel = sut.open_selector();
    let key = sut.register(sel, conn, Interest::READ).unwrap();

    sut.write(client, b"hello, network").unwrap();
    sut.shutdown_output(client).unwrap();
    for step in 0..5 {
        let ready = sut.select_now(sel).unwrap().get(key).is_some();
        let mut buf = [0u8; 64];
        let got = match sut.read_into(conn, &mut buf).unwrap() {
            ReadResult::Bytes(n) => format!("{:?}", String::from_utf8_lossy(&buf[..n])),
            ReadResult::EndOfStream => "end of stream".to_owned(),
        };
        println!("step {step}: readable={ready:<5} read {got}");
        sut.advance();
    }

    let net = sut
        .transport()
        .as_any()
        .downcast_ref::<SimNetwork>()
        .expect("simulated");
    println!("client->server {:?}", net.flow_stats(0, 0));
    net.check_conservation().expect("bytes conserved");
}
