//! Scripted runs of the socket models: instead of random scheduling, each
//! test fires named transitions on named instances and checks the states
//! and oracle verdicts that result.

use netmbt::efsm::{instantiate, IdAllocator, ModelInstance, StepKind, Vars};
use netmbt::explorer::{run_suite, SuiteConfig};
use netmbt::models::{
    Catalog, LinkId, ModelSettings, Side, SocketEnv, SocketFactory, SocketOptions, Spec,
};
use netmbt::rng::SeededRng;
use netmbt::simnet::{FaultKind, FaultSpec, LatencyModel};

struct Script {
    env: SocketEnv,
    rng: SeededRng,
    ids: IdAllocator,
    instances: Vec<ModelInstance<SocketEnv>>,
}

impl Script {
    fn new(root: &Spec, env: SocketEnv) -> Self {
        let mut s = Script {
            env,
            rng: SeededRng::new(1),
            ids: IdAllocator::new(),
            instances: Vec::new(),
        };
        let created = instantiate(root, Vars::new(), &mut s.env, &mut s.rng, &mut s.ids)
            .expect("constructor succeeds");
        s.instances.extend(created.into_iter().map(|l| l.instance));
        s
    }

    fn sim(root: &Spec) -> Self {
        Self::new(root, SocketEnv::sim(3, LatencyModel::zero(), None))
    }

    /// Position of the `n`th live instance of `model` (creation order).
    fn find(&self, model: &str, n: usize) -> usize {
        self.instances
            .iter()
            .enumerate()
            .filter(|(_, i)| i.spec().name() == model)
            .nth(n)
            .unwrap_or_else(|| panic!("no {model} #{n}"))
            .0
    }

    fn state(&self, model: &str, n: usize) -> String {
        self.instances[self.find(model, n)]
            .current_state()
            .to_string()
    }

    fn count(&self, model: &str) -> usize {
        self.instances
            .iter()
            .filter(|i| i.spec().name() == model)
            .count()
    }

    fn enabled(&self, model: &str, n: usize) -> Vec<String> {
        self.instances[self.find(model, n)]
            .enabled_transitions(&self.env)
            .iter()
            .map(|t| t.label().to_owned())
            .collect()
    }

    /// Fires `label` on the `n`th `model` instance and returns how the step
    /// ended.
    fn fire(&mut self, model: &str, n: usize, label: &str) -> StepKind {
        let pos = self.find(model, n);
        let inst = &self.instances[pos];
        let index = inst
            .enabled_indices(&self.env)
            .into_iter()
            .find(|&i| inst.spec().transitions()[i].label() == label)
            .unwrap_or_else(|| {
                panic!(
                    "`{label}` not enabled on {model} #{n} in {}",
                    inst.current_state()
                )
            });
        let out = self.instances[pos].fire(index, &mut self.env, &mut self.rng, &mut self.ids);
        self.instances
            .extend(out.launched.into_iter().map(|l| l.instance));
        self.env.sut.advance();
        out.kind
    }

    fn ok(&mut self, model: &str, n: usize, label: &str) -> String {
        match self.fire(model, n, label) {
            StepKind::Completed(s) => s.to_string(),
            other => panic!("{model} #{n} {label}: {other:?}"),
        }
    }
}

#[test]
fn minimalist_session_pairs_client_and_worker() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.minimalist);
    assert_eq!(s.state("minimalist", 0), "bound");
    assert_eq!(s.ok("minimalist", 0, "session"), "bound");
    assert_eq!((s.count("client"), s.count("worker")), (1, 1));
    assert_eq!(s.env.ledger.len(), 1);
    assert_eq!(s.env.ledger.pending(), 0);

    assert_eq!(s.ok("client", 0, "write"), "connected");
    // Reads take a random capacity, so draining may need several.
    for _ in 0..64 {
        assert_eq!(s.ok("worker", 0, "read"), "connected");
    }
    let link = s.env.ledger.link(LinkId(0));
    assert_eq!(link.read(Side::Server), link.wrote(Side::Client));

    assert_eq!(s.ok("minimalist", 0, "close"), "closed");
    assert!(s.enabled("minimalist", 0).is_empty());
}

#[test]
fn minimalist_with_zero_sessions_passes() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.minimalist);
    assert_eq!(s.ok("minimalist", 0, "close"), "closed");
    assert_eq!(s.count("client"), 0);
}

#[test]
fn reordered_minimalist_deadlocks() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.minimalist_reordered);
    match s.fire("minimalist-reordered", 0, "session") {
        StepKind::Watchdog(m) => assert!(m.contains("accept"), "{m}"),
        other => panic!("expected a watchdog failure, got {other:?}"),
    }
}

#[test]
fn non_blocking_accept_waits_for_a_client() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.server_main);
    assert_eq!(s.state("server-main", 0), "bound");
    // Blocking accept is only offered once a client is queued.
    assert!(!s
        .enabled("server-main", 0)
        .contains(&"acceptBlocking".to_owned()));
    assert_eq!(s.ok("server-main", 0, "toggleBlocking"), "bound");
    assert_eq!(
        s.ok("server-main", 0, "configureSelector"),
        "selectorConfigured"
    );
    assert_eq!(s.ok("server-main", 0, "accept"), "accepting");
    assert_eq!(s.ok("server-main", 0, "accept"), "accepting");
    assert_eq!(s.ok("server-main", 0, "checkSelector"), "accepting");
    assert_eq!(s.ok("server-main", 0, "launchClient"), "accepting");
    assert_eq!(s.ok("server-main", 0, "checkSelector"), "accepting");
    assert_eq!(s.ok("server-main", 0, "accept"), "connected");
    assert_eq!(s.count("worker"), 1);
    // Registered: going back to blocking mode is refused.
    assert_eq!(s.ok("server-main", 0, "toggleBlocking"), "connected");
    assert_eq!(s.ok("server-main", 0, "bindAgain"), "connected");
    assert_eq!(s.ok("server-main", 0, "close"), "closed");
    assert_eq!(s.ok("server-main", 0, "checkSelector"), "closed");
    assert_eq!(s.ok("server-main", 0, "getLocalPort"), "err");
    assert!(s.enabled("server-main", 0).is_empty());
}

#[test]
fn blocking_accept_in_bound() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.server_main);
    assert_eq!(s.ok("server-main", 0, "registerBlocking"), "bound");
    assert_eq!(s.ok("server-main", 0, "launchClient"), "bound");
    assert_eq!(s.ok("server-main", 0, "acceptBlocking"), "bound");
    assert_eq!(s.count("worker"), 1);
    // The client was accepted, so nothing is pending any more.
    assert!(!s
        .enabled("server-main", 0)
        .contains(&"acceptBlocking".to_owned()));
}

#[test]
fn client_that_always_closes() {
    let cat = Catalog::new();
    let env = SocketEnv::sim(3, LatencyModel::zero(), None).with_settings(ModelSettings {
        p_close: 1.0,
        ..ModelSettings::default()
    });
    let mut s = Script::new(&cat.minimalist, env);
    s.ok("minimalist", 0, "session");
    assert_eq!(s.ok("client", 0, "maybeClose"), "closed");
    // First write to the closed peer goes out, the reset comes back.
    assert_eq!(s.ok("worker", 0, "write"), "connected");
    assert_eq!(s.ok("worker", 0, "write"), "reset");
    assert_eq!(s.ok("worker", 0, "close"), "closed");
}

#[test]
fn client_reads_at_most_what_the_worker_wrote() {
    let cat = Catalog::new();
    let env = SocketEnv::sim(5, LatencyModel::uniform(), None);
    let mut s = Script::new(&cat.minimalist, env);
    s.ok("minimalist", 0, "session");
    for _ in 0..3 {
        s.ok("worker", 0, "write");
    }
    for _ in 0..8 {
        s.ok("client", 0, "read");
    }
    let link = s.env.ledger.link(LinkId(0));
    assert!(link.read(Side::Client) <= link.wrote(Side::Server));
}

#[test]
fn client_sees_end_of_stream_after_server_side_close() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.minimalist);
    s.ok("minimalist", 0, "session");
    s.ok("worker", 0, "write");
    s.ok("worker", 0, "close");
    let mut reads = 0;
    while s.ok("client", 0, "read") == "connected" {
        reads += 1;
        assert!(reads < 64, "client never saw end of stream");
    }
    assert!(reads >= 1);
    assert_eq!(s.state("client", 0), "peerClosed");
    let link = s.env.ledger.link(LinkId(0));
    assert_eq!(link.read(Side::Client), link.wrote(Side::Server));
    assert_eq!(s.ok("client", 0, "close"), "closed");
    assert!(s.enabled("client", 0).is_empty());
}

#[test]
fn half_closed_worker_rejects_the_closed_direction() {
    let cat = Catalog::new();
    let mut s = Script::sim(&cat.minimalist);
    s.ok("minimalist", 0, "session");
    assert_eq!(s.ok("worker", 0, "shutdownOutput"), "outShut");
    assert_eq!(s.ok("worker", 0, "write"), "outShut");
    assert_eq!(s.ok("client", 0, "read"), "peerClosed");
    assert_eq!(s.ok("worker", 0, "shutdownInput"), "bothShut");
    assert_eq!(s.ok("worker", 0, "read"), "bothShut");
    assert_eq!(s.ok("worker", 0, "close"), "closed");
    assert_eq!(s.ok("worker", 0, "read"), "closed");
    assert_eq!(s.ok("worker", 0, "write"), "closed");
    // Two probes, then the instance is finished.
    assert!(s.enabled("worker", 0).is_empty());
}

#[test]
fn duplicated_bytes_break_the_ledger() {
    let cat = Catalog::new();
    let fault = FaultSpec {
        kind: FaultKind::DuplicateBytes,
        trigger_step: 0,
    };
    let mut s = Script::new(
        &cat.minimalist,
        SocketEnv::sim(3, LatencyModel::zero(), Some(fault)),
    );
    s.ok("minimalist", 0, "session");
    s.ok("client", 0, "write");
    let mut verdict = None;
    for _ in 0..4 {
        match s.fire("worker", 0, "read") {
            StepKind::Completed(_) => {}
            other => {
                verdict = Some(other);
                break;
            }
        }
    }
    match verdict {
        Some(StepKind::Violation(m)) => assert!(m.contains("read exceeds ledger"), "{m}"),
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn standalone_worker_and_client_suites() {
    let cat = Catalog::new();
    let config = SuiteConfig::new(11).tests(300);
    let mut factory = SocketFactory::sim(SocketOptions::default());
    let report = run_suite(&cat.worker, &config, &mut factory).unwrap();
    assert!(report.all_passed(), "{report}");
    assert!(report.coverage.is_complete(), "{report}");

    // A lone client's fixture peer never closes, so peerClosed stays
    // unreachable; the run must still pass.
    let report = run_suite(&cat.client, &config, &mut factory).unwrap();
    assert!(report.all_passed(), "{report}");
}
