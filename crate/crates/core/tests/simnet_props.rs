//! Property tests for the simulated network.

mod common;

use common::{check_sequence, NetOp};
use netmbt::simnet::LatencyModel;
use netmbt::simnet::SimNetwork;
use netmbt::sut::{ReadResult, Sut, LOOPBACK};
use proptest::prelude::*;

fn op() -> impl Strategy<Value = NetOp> {
    let side = 0usize..2;
    prop_oneof![
        4 => (side.clone(), 1usize..33).prop_map(|(side, len)| NetOp::Write { side, len }),
        4 => (side.clone(), 1usize..49).prop_map(|(side, cap)| NetOp::Read { side, cap }),
        2 => Just(NetOp::Advance),
        1 => side.clone().prop_map(|side| NetOp::ShutdownOutput { side }),
        1 => side.clone().prop_map(|side| NetOp::ShutdownInput { side }),
        1 => side.prop_map(|side| NetOp::Close { side }),
    ]
}

fn latency() -> impl Strategy<Value = LatencyModel> {
    prop_oneof![
        Just(LatencyModel::zero()),
        Just(LatencyModel::uniform()),
        (0usize..3).prop_map(LatencyModel::fixed),
    ]
}

proptest! {
    #[test]
    fn bytes_are_conserved_and_fifo(
        seed in any::<u64>(),
        latency in latency(),
        ops in proptest::collection::vec(op(), 1..120),
    ) {
        if let Err(e) = check_sequence(seed, latency, &ops) {
            return Err(TestCaseError::fail(e));
        }
    }

    #[test]
    fn same_seed_same_results(seed in any::<u64>(), ops in proptest::collection::vec(op(), 1..80)) {
        prop_assert_eq!(observe(seed, &ops), observe(seed, &ops));
    }
}

/// Every call result, rendered, on one connected pair.
fn observe(seed: u64, ops: &[NetOp]) -> Vec<String> {
    let mut sut = Sut::new(Box::new(SimNetwork::new(seed, LatencyModel::uniform())));
    let server = sut.open_server().unwrap();
    let port = sut.bind(server, 0).unwrap();
    let client = sut.connect(LOOPBACK, port).unwrap();
    let accepted = sut.accept(server).unwrap().unwrap();
    let ends = [client, accepted];
    let sel = sut.open_selector();
    let mut out = Vec::new();
    for &c in &ends {
        sut.configure_blocking(c, false).unwrap();
        sut.register(sel, c, netmbt::sut::Interest::READ).unwrap();
    }
    for op in ops {
        let r = match *op {
            NetOp::Write { side, len } => format!("{:?}", sut.write(ends[side], &vec![7; len])),
            NetOp::Read { side, cap } => format!("{:?}", sut.read(ends[side], cap)),
            NetOp::Advance => {
                sut.advance();
                String::new()
            }
            NetOp::ShutdownOutput { side } => format!("{:?}", sut.shutdown_output(ends[side])),
            NetOp::ShutdownInput { side } => format!("{:?}", sut.shutdown_input(ends[side])),
            NetOp::Close { side } => format!("{:?}", sut.close_conn(ends[side])),
        };
        out.push(r);
        out.push(format!("{:?}", sut.select_now(sel)));
    }
    out
}

#[test]
fn split_cohorts_reassemble_in_order() {
    // A write of 8 bytes under the default latency arrives in at most two
    // pieces; whatever the split, reads add up to the write.
    for seed in 0..200 {
        let mut sut = Sut::new(Box::new(SimNetwork::new(seed, LatencyModel::uniform())));
        let server = sut.open_server().unwrap();
        let port = sut.bind(server, 0).unwrap();
        let client = sut.connect(LOOPBACK, port).unwrap();
        let accepted = sut.accept(server).unwrap().unwrap();
        sut.configure_blocking(accepted, false).unwrap();
        sut.write(client, b"abcdefgh").unwrap();
        let mut got = Vec::new();
        for _ in 0..4 {
            let mut buf = [0u8; 16];
            if let ReadResult::Bytes(n) = sut.read_into(accepted, &mut buf).unwrap() {
                got.extend_from_slice(&buf[..n]);
            }
            sut.advance();
        }
        assert_eq!(got, b"abcdefgh", "seed {seed}");
    }
}
