//! Helpers shared by several integration test targets.

#![allow(dead_code)]

use netmbt::rng::SeededRng;
use netmbt::simnet::{LatencyModel, SimNetwork};
use netmbt::sut::{ConnId, ReadResult, Sut, LOOPBACK};

/// One call on a single simulated connection. `side` 0 is the client,
/// 1 the accepted server end.
#[derive(Debug, Clone, Copy)]
pub enum NetOp {
    Write { side: usize, len: usize },
    Read { side: usize, cap: usize },
    Advance,
    ShutdownOutput { side: usize },
    ShutdownInput { side: usize },
    Close { side: usize },
}

impl NetOp {
    /// Draws an op, biased towards traffic.
    pub fn random(rng: &mut SeededRng) -> NetOp {
        let side = rng.range_inclusive(0, 1) as usize;
        match rng.range_inclusive(0, 19) {
            0..=6 => NetOp::Write {
                side,
                len: rng.range_inclusive(1, 32) as usize,
            },
            7..=13 => NetOp::Read {
                side,
                cap: rng.range_inclusive(1, 48) as usize,
            },
            14..=16 => NetOp::Advance,
            17 => NetOp::ShutdownOutput { side },
            18 => NetOp::ShutdownInput { side },
            _ => NetOp::Close { side },
        }
    }
}

fn sim(sut: &Sut) -> &SimNetwork {
    sut.transport()
        .as_any()
        .downcast_ref::<SimNetwork>()
        .expect("simulated backend")
}

/// Runs `ops` on a fresh connected pair and checks, after every op, that
/// every flow conserves bytes and that each side has read a prefix of what
/// the other side wrote. Errors from illegal calls are part of the game
/// and are ignored.
pub fn check_sequence(seed: u64, latency: LatencyModel, ops: &[NetOp]) -> Result<(), String> {
    let mut sut = Sut::new(Box::new(SimNetwork::new(seed, latency)));
    let server = sut.open_server().map_err(|e| e.to_string())?;
    let port = sut.bind(server, 0).map_err(|e| e.to_string())?;
    let client = sut.connect(LOOPBACK, port).map_err(|e| e.to_string())?;
    let accepted = sut
        .accept(server)
        .map_err(|e| e.to_string())?
        .ok_or("accept returned nothing")?;
    let ends: [ConnId; 2] = [client, accepted];
    for &c in &ends {
        sut.configure_blocking(c, false)
            .map_err(|e| e.to_string())?;
    }

    // written[d]: bytes side d handed to the network; seen[d]: bytes the
    // other side has read from flow d.
    let mut written: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
    let mut seen: [Vec<u8>; 2] = [Vec::new(), Vec::new()];
    let mut counter = 0u8;
    for (i, op) in ops.iter().enumerate() {
        match *op {
            NetOp::Write { side, len } => {
                let payload: Vec<u8> = (0..len)
                    .map(|_| {
                        counter = counter.wrapping_add(1);
                        counter
                    })
                    .collect();
                if let Ok(n) = sut.write(ends[side], &payload) {
                    written[side].extend_from_slice(&payload[..n]);
                }
            }
            NetOp::Read { side, cap } => {
                let mut buf = vec![0u8; cap];
                if let Ok(ReadResult::Bytes(n)) = sut.read_into(ends[side], &mut buf) {
                    seen[1 - side].extend_from_slice(&buf[..n]);
                }
            }
            NetOp::Advance => sut.advance(),
            NetOp::ShutdownOutput { side } => {
                let _ = sut.shutdown_output(ends[side]);
            }
            NetOp::ShutdownInput { side } => {
                let _ = sut.shutdown_input(ends[side]);
            }
            NetOp::Close { side } => {
                let _ = sut.close_conn(ends[side]);
            }
        }
        let net = sim(&sut);
        for dir in 0..2 {
            let stats = net.flow_stats(0, dir);
            if !stats.conserved() {
                return Err(format!(
                    "op {i} {op:?}: flow {dir} not conserved: {stats:?}"
                ));
            }
            if stats.written != written[dir].len() as u64 {
                return Err(format!(
                    "op {i} {op:?}: flow {dir} counts {} written, caller wrote {}",
                    stats.written,
                    written[dir].len()
                ));
            }
            if stats.read != seen[dir].len() as u64 {
                return Err(format!("op {i} {op:?}: flow {dir} read count mismatch"));
            }
            if !written[dir].starts_with(&seen[dir]) {
                return Err(format!(
                    "op {i} {op:?}: flow {dir} read is not a prefix of the writes"
                ));
            }
        }
    }
    Ok(())
}

/// `n` draws of `pick` on a fixed rng, counted per outcome.
pub fn tally<T: Ord, F: FnMut(&mut SeededRng) -> T>(
    seed: u64,
    n: usize,
    mut pick: F,
) -> std::collections::BTreeMap<T, usize> {
    let mut rng = SeededRng::new(seed);
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..n {
        *counts.entry(pick(&mut rng)).or_insert(0) += 1;
    }
    counts
}

/// Output of one in-process CLI invocation.
pub struct CliRun {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

/// Runs `netmbt <args>` in process.
pub fn cli(args: &[&str]) -> CliRun {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("netmbt").chain(args.iter().copied());
    let code = netmbt::cli::run_cli(argv, &mut out, &mut err);
    CliRun {
        code,
        stdout: String::from_utf8(out).expect("utf-8 output"),
        stderr: String::from_utf8(err).expect("utf-8 output"),
    }
}

/// The step number in `... verdict FAIL at step N` report lines, in order.
pub fn failing_steps(text: &str) -> Vec<u64> {
    text.lines()
        .filter_map(|l| l.split(" at step ").nth(1))
        .filter_map(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
        .filter_map(|n| n.parse().ok())
        .collect()
}
