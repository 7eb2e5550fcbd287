//! Scripted comparison of the simulated network against real sockets.
//!
//! The same fixed call sequence runs once per backend, the simulated one
//! with zero latency. Every call is a probe: a named (channel state,
//! operation) pair whose outcome is rendered backend-independently
//! (ports and handles are abstracted away) and compared. On real sockets
//! the driver lets the kernel settle after every call.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use crate::simnet::{LatencyModel, SimNetwork};
use crate::sut::{
    ConnId, ErrorKind, Interest, ReadResult, ReadinessSet, RealTransport, SelectionKey, SelectorId,
    ServerId, Sut, SutError, SutResult, LOOPBACK,
};

/// One probe's outcome on one backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub scenario: &'static str,
    pub probe: String,
    pub outcome: String,
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} -> {}", self.scenario, self.probe, self.outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub scenario: &'static str,
    pub probe: String,
    pub sim: String,
    pub real: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}: sim `{}`, real `{}`",
            self.scenario, self.probe, self.sim, self.real
        )
    }
}

#[derive(Debug, Clone)]
pub struct ConformanceReport {
    pub sim: Vec<Observation>,
    pub real: Vec<Observation>,
    pub divergences: Vec<Divergence>,
}

impl ConformanceReport {
    pub fn probe_count(&self) -> usize {
        self.sim.len().max(self.real.len())
    }

    /// Error kinds raised by at least one probe on both backends.
    pub fn error_kinds_covered(&self) -> BTreeSet<ErrorKind> {
        let kinds = |obs: &[Observation]| -> BTreeSet<ErrorKind> {
            obs.iter()
                .filter_map(|o| o.outcome.strip_prefix("err:"))
                .filter_map(ErrorKind::from_name)
                .collect()
        };
        kinds(&self.sim)
            .intersection(&kinds(&self.real))
            .copied()
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.divergences.is_empty()
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "conformance: {} probes, {} divergences, {}/{} error kinds raised",
            self.probe_count(),
            self.divergences.len(),
            self.error_kinds_covered().len(),
            ErrorKind::ALL.len()
        )?;
        for d in &self.divergences {
            writeln!(f, "  DIVERGED {d}")?;
        }
        Ok(())
    }
}

/// Pairs up two observation lists probe by probe.
pub fn compare(sim: &[Observation], real: &[Observation]) -> Vec<Divergence> {
    let missing = "<missing>".to_owned();
    (0..sim.len().max(real.len()))
        .filter_map(|i| {
            let (s, r) = (sim.get(i), real.get(i));
            let (scenario, probe) = s.or(r).map(|o| (o.scenario, o.probe.clone()))?;
            let so = s.map_or(&missing, |o| &o.outcome);
            let ro = r.map_or(&missing, |o| &o.outcome);
            (so != ro || s.map(|o| &o.probe) != r.map(|o| &o.probe)).then(|| Divergence {
                scenario,
                probe,
                sim: so.clone(),
                real: ro.clone(),
            })
        })
        .collect()
}

/// Runs the script on both backends and compares.
pub fn run_conformance() -> ConformanceReport {
    let mut sim = Sut::new(Box::new(SimNetwork::new(0, LatencyModel::zero())));
    // Short blocking bound: the script deliberately blocks with nothing
    // to wait for.
    let mut real = Sut::new(Box::new(RealTransport::new(Duration::from_millis(200))));
    let sim_obs = run_script(&mut sim);
    let real_obs = run_script(&mut real);
    let divergences = compare(&sim_obs, &real_obs);
    ConformanceReport {
        sim: sim_obs,
        real: real_obs,
        divergences,
    }
}

fn render_err(e: &SutError) -> String {
    match e {
        SutError::Raised { kind, .. } => format!("err:{kind}"),
        SutError::Watchdog(_) => "watchdog".into(),
        SutError::Backend(m) => format!("backend:{m}"),
    }
}

fn render_read(r: &ReadResult) -> String {
    match r {
        ReadResult::Bytes(n) => format!("bytes:{n}"),
        ReadResult::EndOfStream => "eof".into(),
    }
}

struct Script<'a> {
    sut: &'a mut Sut,
    scenario: &'static str,
    keys: BTreeMap<SelectionKey, &'static str>,
    out: Vec<Observation>,
}

impl Script<'_> {
    fn record<T>(
        &mut self,
        probe: &str,
        result: SutResult<T>,
        show: impl FnOnce(&T) -> String,
    ) -> Option<T> {
        self.sut.settle();
        let outcome = match &result {
            Ok(v) => show(v),
            Err(e) => render_err(e),
        };
        self.out.push(Observation {
            scenario: self.scenario,
            probe: probe.to_owned(),
            outcome,
        });
        result.ok()
    }

    fn unit(&mut self, probe: &str, result: SutResult<()>) {
        self.record(probe, result, |_| "ok".into());
    }

    fn op(&mut self, probe: &str, f: impl FnOnce(&mut Sut) -> SutResult<()>) {
        let r = f(self.sut);
        self.unit(probe, r);
    }

    fn server(&mut self, probe: &str) -> Option<ServerId> {
        let r = self.sut.open_server();
        self.record(probe, r, |_| "server".into())
    }

    fn bind(&mut self, probe: &str, s: ServerId, port: u16) -> Option<u16> {
        let r = self.sut.bind(s, port);
        self.record(probe, r, |p| if *p == 0 { "port:0" } else { "port" }.into())
    }

    fn accept(&mut self, probe: &str, s: ServerId) -> Option<ConnId> {
        let r = self.sut.accept(s);
        self.record(probe, r, |c| {
            if c.is_some() { "conn" } else { "none" }.into()
        })
        .flatten()
    }

    fn connect(&mut self, probe: &str, port: u16) -> Option<ConnId> {
        let r = self.sut.connect(LOOPBACK, port);
        self.record(probe, r, |_| "conn".into())
    }

    fn read(&mut self, probe: &str, c: ConnId, cap: usize) {
        let r = self.sut.read(c, cap);
        self.record(probe, r, render_read);
    }

    fn write(&mut self, probe: &str, c: ConnId, data: &[u8]) {
        let r = self.sut.write(c, data);
        self.record(probe, r, |n| format!("wrote:{n}"));
    }

    fn register(
        &mut self,
        probe: &str,
        sel: SelectorId,
        ch: impl Into<crate::sut::Channel>,
        interest: Interest,
        name: &'static str,
    ) {
        let r = self.sut.register(sel, ch, interest);
        if let Some(k) = self.record(probe, r, |_| "key".into()) {
            self.keys.insert(k, name);
        }
    }

    fn select(&mut self, probe: &str, sel: SelectorId) {
        let r = self.sut.select_now(sel);
        let keys = self.keys.clone();
        self.record(probe, r, |set: &ReadinessSet| {
            let mut parts: Vec<String> = set
                .ready
                .iter()
                .map(|(k, i)| format!("{}:{i}", keys.get(k).copied().unwrap_or("?")))
                .collect();
            parts.sort();
            format!("ready[{}]", parts.join(","))
        });
    }

    /// Connected pair, both ends non-blocking.
    fn pair(&mut self) -> Option<(ServerId, ConnId, ConnId)> {
        let s = self.server("open")?;
        let port = self.bind("bind", s, 0)?;
        let c = self.connect("connect", port)?;
        let w = self.accept("accept queued", s)?;
        self.op("client non-blocking", |u| u.configure_blocking(c, false));
        self.op("worker non-blocking", |u| u.configure_blocking(w, false));
        Some((s, c, w))
    }
}

/// Runs the conformance script against `sut` and returns one observation
/// per probe. Handles are released at the end.
pub fn run_script(sut: &mut Sut) -> Vec<Observation> {
    let mut s = Script {
        sut,
        scenario: "",
        keys: BTreeMap::new(),
        out: Vec::new(),
    };
    server_lifecycle(&mut s);
    address_errors(&mut s);
    data_and_half_close(&mut s);
    resets(&mut s);
    blocking_calls(&mut s);
    s.sut.close_all();
    s.out
}

fn server_lifecycle(s: &mut Script<'_>) -> Option<()> {
    s.scenario = "server";
    let srv = s.server("open")?;
    let r = s.sut.accept(srv);
    s.record("accept unbound", r, |_| "conn".into());
    let r = s.sut.local_port(srv);
    s.record("local port unbound", r, |_| "port".into());
    let port = s.bind("bind", srv, 0)?;
    s.bind("bind again", srv, port);
    let r = s.sut.local_port(srv);
    s.record("local port", r, |p| {
        if *p == port { "same" } else { "other" }.into()
    });
    let sel = s.sut.open_selector();
    s.register("register blocking", sel, srv, Interest::ACCEPT, "listener");
    let r = s.sut.configure_blocking(srv, false);
    s.unit("non-blocking", r);
    s.register("register READ", sel, srv, Interest::READ, "listener");
    s.register("register ACCEPT", sel, srv, Interest::ACCEPT, "listener");
    s.select("select idle", sel);
    let r = s.sut.configure_blocking(srv, true);
    s.unit("blocking while registered", r);
    s.accept("accept idle", srv);
    let client = s.connect("connect", port)?;
    s.select("select pending", sel);
    let conn = s.accept("accept pending", srv)?;
    s.select("select drained", sel);
    s.register(
        "register blocking conn",
        sel,
        conn,
        Interest::ACCEPT,
        "conn",
    );
    s.op("client close", |u| u.close_conn(client));
    s.op("close", |u| u.close_server(srv));
    s.accept("accept closed", srv);
    s.bind("bind closed", srv, port);
    let r = s.sut.local_port(srv);
    s.record("local port closed", r, |_| "port".into());
    let r = s.sut.configure_blocking(srv, true);
    s.unit("blocking closed", r);
    s.select("select closed", sel);
    s.register("register closed", sel, srv, Interest::ACCEPT, "listener");
    s.op("close again", |u| u.close_server(srv));
    Some(())
}

fn address_errors(s: &mut Script<'_>) -> Option<()> {
    s.scenario = "address";
    let a = s.server("open first")?;
    let port = s.bind("bind first", a, 0)?;
    let b = s.server("open second")?;
    s.bind("bind same port", b, port);
    s.op("close first", |u| u.close_server(a));
    s.connect("connect to closed port", port);
    s.op("close second", |u| u.close_server(b));
    Some(())
}

fn data_and_half_close(s: &mut Script<'_>) -> Option<()> {
    s.scenario = "data";
    let (srv, c, w) = s.pair()?;
    let sel = s.sut.open_selector();
    s.register(
        "register worker",
        sel,
        w,
        Interest::READ.union(Interest::WRITE),
        "worker",
    );
    s.select("select quiet", sel);
    s.read("read nothing", w, 16);
    s.write("client write", c, b"hello");
    s.select("select data", sel);
    s.read("worker read", w, 16);
    s.write("worker write", w, b"abc");
    s.read("client partial read", c, 2);
    s.read("client rest", c, 16);
    s.read("client drained", c, 16);
    s.op("client shutdown output", |u| u.shutdown_output(c));
    s.write("client write after shutdown", c, b"x");
    s.op("client shutdown output again", |u| u.shutdown_output(c));
    s.select("select peer shut", sel);
    s.read("worker read eof", w, 16);
    s.op("worker shutdown input", |u| u.shutdown_input(w));
    s.read("worker read after shutdown", w, 16);
    s.select("select input shut", sel);
    s.write("worker write half-open", w, b"tail");
    s.read("client read half-open", c, 16);
    s.op("worker close", |u| u.close_conn(w));
    s.select("select worker closed", sel);
    s.read("client read after close", c, 16);
    s.read("worker read closed", w, 16);
    s.write("worker write closed", w, b"x");
    s.op("worker shutdown closed", |u| u.shutdown_output(w));
    s.op("worker close again", |u| u.close_conn(w));
    s.op("client close", |u| u.close_conn(c));
    s.op("server close", |u| u.close_server(srv));
    Some(())
}

fn resets(s: &mut Script<'_>) -> Option<()> {
    s.scenario = "reset";
    // Closing with unread input aborts the connection.
    let (srv, c, w) = s.pair()?;
    s.write("worker write", w, b"ab");
    s.write("client write", c, b"zz");
    s.op("worker close unread", |u| u.close_conn(w));
    s.read("client read delivered", c, 16);
    s.read("client read reset", c, 16);
    s.read("client read after reset", c, 16);
    s.write("client write after reset", c, b"x");
    s.op("client close", |u| u.close_conn(c));
    s.op("server close", |u| u.close_server(srv));

    // Writing to a cleanly closed peer draws a reset.
    let (srv, c, w) = s.pair()?;
    s.op("worker close clean", |u| u.close_conn(w));
    s.read("client read eof", c, 16);
    s.write("client first write", c, b"x");
    s.write("client second write", c, b"y");
    s.read("client read after", c, 16);
    s.op("client close", |u| u.close_conn(c));

    // A peer that shut both directions answers data with a reset.
    let c2 = s.connect("connect", s.sut.local_port(srv).ok()?)?;
    let w2 = s.accept("accept", srv)?;
    s.op("worker shutdown input", |u| u.shutdown_input(w2));
    s.op("worker shutdown output", |u| u.shutdown_output(w2));
    s.read("client read eof", c2, 16);
    s.write("client write", c2, b"x");
    s.write("client write again", c2, b"y");

    // Queued connections die with their listener.
    let c3 = s.connect("connect queued", s.sut.local_port(srv).ok()?)?;
    s.op("server close", |u| u.close_server(srv));
    s.read("orphan read", c3, 16);
    s.read("orphan read again", c3, 16);
    Some(())
}

fn blocking_calls(s: &mut Script<'_>) -> Option<()> {
    s.scenario = "blocking";
    let srv = s.server("open")?;
    let port = s.bind("bind", srv, 0)?;
    s.accept("blocking accept idle", srv);
    let c = s.connect("connect", port)?;
    let w = s.accept("blocking accept queued", srv)?;
    s.write("client write", c, b"ping");
    s.read("blocking read data", w, 16);
    s.read("blocking read idle", w, 16);
    s.op("client shutdown output", |u| u.shutdown_output(c));
    s.read("blocking read eof", w, 16);
    s.op("close server", |u| u.close_server(srv));
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_script_is_deterministic() {
        let run = || {
            let mut sut = Sut::new(Box::new(SimNetwork::new(9, LatencyModel::zero())));
            run_script(&mut sut)
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.len() >= 30, "{} probes", a.len());
        assert!(a.iter().all(|o| !o.outcome.starts_with("backend")), "{a:?}");
    }

    #[test]
    fn compare_flags_each_mismatch() {
        let o = |p: &str, out: &str| Observation {
            scenario: "x",
            probe: p.into(),
            outcome: out.into(),
        };
        let sim = vec![o("a", "ok"), o("b", "eof"), o("c", "ok")];
        let real = vec![o("a", "ok"), o("b", "bytes:0")];
        let d = compare(&sim, &real);
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].probe, "b");
        assert_eq!(d[1].real, "<missing>");
    }
}
