//! Deterministic in-memory network.
//!
//! [`SimNetwork`] implements [`Transport`] over byte queues. Time is a step
//! counter advanced once per fired transition; each write is delayed by a
//! latency of 0, 1 or 2 steps and may be split into two delivery cohorts,
//! which reproduces incomplete non-blocking reads without wall-clock
//! timing. All randomness comes from a dedicated [`SeededRng`] stream, so
//! behavior is a pure function of the seed and the call sequence.
//!
//! Draw discipline: every non-empty write takes exactly one latency draw,
//! plus one split draw when cohort splitting is enabled.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::net::{IpAddr, SocketAddr};

use crate::rng::{SeededRng, NETWORK_STREAM};
use crate::sut::{
    BackendKind, Endpoint, ErrorKind, ReadResult, Shutdown, SutError, SutResult, Token, Transport,
    LOOPBACK,
};

const FIRST_EPHEMERAL_LISTEN_PORT: u16 = 32768;
const FIRST_CLIENT_PORT: u16 = 49152;

/// Distribution of per-write latency, in steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    /// Relative weights of latency 0, 1 and 2.
    pub weights: [f64; 3],
    /// Whether a write may be split into two cohorts one step apart.
    pub split_cohorts: bool,
}

impl LatencyModel {
    /// Everything is readable as soon as it is written.
    pub fn zero() -> Self {
        Self {
            weights: [1.0, 0.0, 0.0],
            split_cohorts: false,
        }
    }

    /// Uniform over {0, 1, 2} with cohort splitting.
    pub fn uniform() -> Self {
        Self {
            weights: [1.0, 1.0, 1.0],
            split_cohorts: true,
        }
    }

    /// Constant latency, no splitting.
    pub fn fixed(steps: usize) -> Self {
        assert!(steps <= 2, "latency is limited to 2 steps");
        let mut weights = [0.0; 3];
        weights[steps] = 1.0;
        Self {
            weights,
            split_cohorts: false,
        }
    }

    fn is_valid(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite() && *w >= 0.0)
            && self.weights.iter().sum::<f64>() > 0.0
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::uniform()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// The next delivered cohort is delivered twice.
    DuplicateBytes,
    /// The next cohort due for delivery is discarded.
    DropBytes,
    /// One readiness query on an idle stream reports READ.
    PhantomReadiness,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::DuplicateBytes => "duplicate-bytes",
            FaultKind::DropBytes => "drop-bytes",
            FaultKind::PhantomReadiness => "phantom-readiness",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FaultKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duplicate-bytes" => Ok(FaultKind::DuplicateBytes),
            "drop-bytes" => Ok(FaultKind::DropBytes),
            "phantom-readiness" => Ok(FaultKind::PhantomReadiness),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

/// A single fault, armed from `trigger_step` on and fired at the first
/// opportunity at or after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub trigger_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowStats {
    pub written: u64,
    pub in_flight: u64,
    pub delivered: u64,
    pub read: u64,
    /// Bytes thrown away because an endpoint closed or was reset.
    pub discarded: u64,
    pub dropped: u64,
    pub duplicated: u64,
}

impl FlowStats {
    /// `written + duplicated == in_flight + delivered + read + discarded + dropped`.
    pub fn conserved(&self) -> bool {
        self.written + self.duplicated
            == self.in_flight + self.delivered + self.read + self.discarded + self.dropped
    }
}

#[derive(Debug, Clone)]
struct Cohort {
    bytes: Vec<u8>,
    available_at: u64,
}

/// One direction of a connection.
#[derive(Debug, Default)]
struct FlowQueue {
    in_flight: VecDeque<Cohort>,
    delivered: VecDeque<u8>,
    eof: bool,
    stats: FlowStats,
}

impl FlowQueue {
    fn has_unread(&self) -> bool {
        !self.delivered.is_empty() || !self.in_flight.is_empty()
    }

    fn discard_in_flight(&mut self) {
        self.in_flight.clear();
        self.stats.discarded += self.stats.in_flight;
        self.stats.in_flight = 0;
    }

    fn discard_all(&mut self) {
        let n = self.delivered.len() as u64 + self.stats.in_flight;
        self.delivered.clear();
        self.in_flight.clear();
        self.stats.delivered = 0;
        self.stats.in_flight = 0;
        self.stats.discarded += n;
    }
}

#[derive(Debug, Default)]
struct EndState {
    token: Option<Token>,
    closed: bool,
    input_shut: bool,
    /// A reset was received; every further write fails.
    reset: bool,
    /// A read already reported the reset.
    reset_reported: bool,
}

#[derive(Debug)]
struct SimConn {
    /// `flows[0]`: client to server, `flows[1]`: server to client.
    flows: [FlowQueue; 2],
    /// `ends[0]`: client, `ends[1]`: server.
    ends: [EndState; 2],
    client: Endpoint,
    server: Endpoint,
}

#[derive(Debug)]
struct SimListener {
    port: Option<u16>,
    backlog: VecDeque<usize>,
}

/// Deterministic implementation of the socket transport.
#[derive(Debug)]
pub struct SimNetwork {
    rng: SeededRng,
    latency: LatencyModel,
    clock: u64,
    listeners: BTreeMap<Token, SimListener>,
    ports: BTreeMap<u16, Token>,
    conns: Vec<SimConn>,
    streams: BTreeMap<Token, (usize, usize)>,
    next_token: u32,
    next_client_port: u16,
    fault: Option<FaultSpec>,
    fault_fired_at: Option<u64>,
}

impl SimNetwork {
    /// A network whose randomness comes from the network stream of `seed`.
    pub fn new(seed: u64, latency: LatencyModel) -> Self {
        assert!(
            latency.is_valid(),
            "invalid latency weights {:?}",
            latency.weights
        );
        Self {
            rng: SeededRng::with_stream(seed, NETWORK_STREAM),
            latency,
            clock: 0,
            listeners: BTreeMap::new(),
            ports: BTreeMap::new(),
            conns: Vec::new(),
            streams: BTreeMap::new(),
            next_token: 1,
            next_client_port: FIRST_CLIENT_PORT,
            fault: None,
            fault_fired_at: None,
        }
    }

    /// Arms a fault. Must be called before any traffic.
    pub fn inject_fault(&mut self, fault: FaultSpec) {
        assert!(
            self.conns.is_empty(),
            "faults must be injected before any traffic"
        );
        self.fault = Some(fault);
        self.fault_fired_at = None;
    }

    pub fn fault(&self) -> Option<FaultSpec> {
        self.fault
    }

    /// Step at which the armed fault fired, if it has.
    pub fn fault_fired_at(&self) -> Option<u64> {
        self.fault_fired_at
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Draws the availability step of each of `byte_count` bytes written
    /// now: one latency draw, then (if enabled) one split draw.
    pub fn assign_latency(&mut self, byte_count: usize) -> Vec<u64> {
        assert!(
            byte_count > 0,
            "latency is only assigned to non-empty writes"
        );
        let total: f64 = self.latency.weights.iter().sum();
        let mut x = self.rng.next_f64() * total;
        let mut latency = 2;
        for (steps, w) in self.latency.weights.iter().enumerate() {
            if x < *w {
                latency = steps as u64;
                break;
            }
            x -= w;
        }
        // Guard against rounding at the top of the range.
        while self.latency.weights[latency as usize] == 0.0 {
            latency -= 1;
        }
        let at = self.clock + latency;
        let split = if self.latency.split_cohorts {
            self.rng.range_inclusive(0, byte_count as u64 - 1) as usize
        } else {
            0
        };
        (0..byte_count)
            .map(|i| if split > 0 && i >= split { at + 1 } else { at })
            .collect()
    }

    /// Moves simulated time forward one step and delivers due bytes.
    pub fn advance(&mut self) {
        self.clock += 1;
        for c in 0..self.conns.len() {
            for dir in 0..2 {
                self.deliver(c, dir);
            }
        }
    }

    /// Per-direction accounting. `dir` 0 is client to server.
    pub fn flow_stats(&self, conn: usize, dir: usize) -> FlowStats {
        self.conns[conn].flows[dir].stats
    }

    pub fn connection_count(&self) -> usize {
        self.conns.len()
    }

    /// Checks byte conservation on every flow.
    pub fn check_conservation(&self) -> Result<(), String> {
        for (i, c) in self.conns.iter().enumerate() {
            for (dir, f) in c.flows.iter().enumerate() {
                if !f.stats.conserved() {
                    return Err(format!("flow {i}/{dir} not conserved: {:?}", f.stats));
                }
            }
        }
        Ok(())
    }

    /// Human-readable notes about fault activity.
    pub fn diagnostics(&self) -> Vec<String> {
        match (self.fault, self.fault_fired_at) {
            (Some(f), Some(at)) => vec![format!("fault {} fired at step {at}", f.kind)],
            (Some(f), None) => vec![format!(
                "fault {} armed from step {} (not fired)",
                f.kind, f.trigger_step
            )],
            _ => Vec::new(),
        }
    }

    fn token(&mut self) -> Token {
        let t = Token(self.next_token);
        self.next_token += 1;
        t
    }

    fn fault_due(&self, kind: FaultKind) -> bool {
        matches!(self.fault, Some(f) if f.kind == kind && self.clock >= f.trigger_step)
            && self.fault_fired_at.is_none()
    }

    fn fire_fault(&mut self) {
        self.fault_fired_at = Some(self.clock);
    }

    /// Delivers due cohorts of one flow in FIFO order.
    fn deliver(&mut self, conn: usize, dir: usize) {
        loop {
            let due = matches!(
                self.conns[conn].flows[dir].in_flight.front(),
                Some(c) if c.available_at <= self.clock
            );
            if !due {
                return;
            }
            let drop_it = self.fault_due(FaultKind::DropBytes);
            let dup_it = !drop_it && self.fault_due(FaultKind::DuplicateBytes);
            if drop_it || dup_it {
                self.fire_fault();
            }
            let flow = &mut self.conns[conn].flows[dir];
            let cohort = flow.in_flight.pop_front().expect("checked above");
            let n = cohort.bytes.len() as u64;
            flow.stats.in_flight -= n;
            if drop_it {
                flow.stats.dropped += n;
                continue;
            }
            flow.delivered.extend(cohort.bytes.iter().copied());
            flow.stats.delivered += n;
            if dup_it {
                flow.delivered.extend(cohort.bytes.iter().copied());
                flow.stats.delivered += n;
                flow.stats.duplicated += n;
            }
        }
    }

    fn stream(&self, t: Token) -> SutResult<(usize, usize)> {
        self.streams
            .get(&t)
            .copied()
            .ok_or_else(|| SutError::Backend(format!("stale stream token {}", t.0)))
    }

    /// Abortive close of one end: its unread input and its unsent output
    /// are discarded and the peer sees a reset. Bytes already delivered to
    /// the peer stay readable.
    fn reset_connection(&mut self, conn: usize, resetter: usize) {
        let c = &mut self.conns[conn];
        c.flows[1 - resetter].discard_all();
        c.flows[resetter].discard_in_flight();
        c.ends[1 - resetter].reset = true;
    }
}

fn reset_error(what: &str) -> SutError {
    SutError::raised(
        ErrorKind::ConnectionReset,
        format!("{what}: connection reset by peer"),
    )
}

impl Transport for SimNetwork {
    fn kind(&self) -> BackendKind {
        BackendKind::Sim
    }

    fn open_listener(&mut self) -> SutResult<Token> {
        let t = self.token();
        self.listeners.insert(
            t,
            SimListener {
                port: None,
                backlog: VecDeque::new(),
            },
        );
        Ok(t)
    }

    fn bind_listen(&mut self, listener: Token, port: u16) -> SutResult<u16> {
        if !self.listeners.contains_key(&listener) {
            return Err(SutError::Backend("stale listener token".into()));
        }
        let port = if port == 0 {
            (FIRST_EPHEMERAL_LISTEN_PORT..=u16::MAX)
                .find(|p| !self.ports.contains_key(p))
                .ok_or_else(|| SutError::Backend("simulated port space exhausted".into()))?
        } else if self.ports.contains_key(&port) {
            return Err(SutError::raised(
                ErrorKind::AddrInUse,
                format!("port {port} is already in use"),
            ));
        } else {
            port
        };
        self.ports.insert(port, listener);
        self.listeners.get_mut(&listener).expect("checked").port = Some(port);
        Ok(port)
    }

    fn close_listener(&mut self, listener: Token) {
        let Some(l) = self.listeners.remove(&listener) else {
            return;
        };
        if let Some(p) = l.port {
            self.ports.remove(&p);
        }
        // Connections still queued are reset.
        for conn in l.backlog {
            self.reset_connection(conn, 1);
            self.conns[conn].ends[1].closed = true;
        }
    }

    fn accept(
        &mut self,
        listener: Token,
        blocking: bool,
    ) -> SutResult<Option<(Token, Endpoint, Endpoint)>> {
        let l = self
            .listeners
            .get_mut(&listener)
            .ok_or_else(|| SutError::Backend("stale listener token".into()))?;
        match l.backlog.pop_front() {
            Some(conn) => {
                let t = self.token();
                self.conns[conn].ends[1].token = Some(t);
                self.streams.insert(t, (conn, 1));
                let c = &self.conns[conn];
                Ok(Some((t, c.server, c.client)))
            }
            None if blocking => Err(SutError::Watchdog(
                "blocking accept with no queued connection can never complete".into(),
            )),
            None => Ok(None),
        }
    }

    fn connect(&mut self, host: IpAddr, port: u16) -> SutResult<(Token, Endpoint, Endpoint)> {
        let refused = || {
            SutError::raised(
                ErrorKind::ConnectionRefused,
                format!("nothing listening on {host}:{port}"),
            )
        };
        if host != LOOPBACK {
            return Err(refused());
        }
        let listener = *self.ports.get(&port).ok_or_else(refused)?;
        let client_port = self.next_client_port;
        self.next_client_port = self
            .next_client_port
            .checked_add(1)
            .unwrap_or(FIRST_CLIENT_PORT);
        let client = SocketAddr::new(LOOPBACK, client_port);
        let server = SocketAddr::new(LOOPBACK, port);
        let t = self.token();
        let conn = self.conns.len();
        self.conns.push(SimConn {
            flows: [FlowQueue::default(), FlowQueue::default()],
            ends: [
                EndState {
                    token: Some(t),
                    ..EndState::default()
                },
                EndState::default(),
            ],
            client,
            server,
        });
        self.streams.insert(t, (conn, 0));
        self.listeners
            .get_mut(&listener)
            .expect("port map is consistent")
            .backlog
            .push_back(conn);
        Ok((t, client, server))
    }

    fn read(&mut self, stream: Token, buf: &mut [u8], blocking: bool) -> SutResult<ReadResult> {
        let (conn, side) = self.stream(stream)?;
        let inbound = 1 - side;
        loop {
            let c = &mut self.conns[conn];
            let end = &mut c.ends[side];
            let flow = &mut c.flows[inbound];
            if !flow.delivered.is_empty() {
                let n = buf.len().min(flow.delivered.len());
                for (slot, b) in buf.iter_mut().zip(flow.delivered.drain(..n)) {
                    *slot = b;
                }
                flow.stats.delivered -= n as u64;
                flow.stats.read += n as u64;
                return Ok(ReadResult::Bytes(n));
            }
            if flow.in_flight.is_empty() {
                // As on Linux: data that arrived before a reset is still
                // readable, the reset is reported once unless a FIN came
                // first, and afterwards the stream reads as ended.
                if end.reset && !flow.eof && !end.reset_reported {
                    end.reset_reported = true;
                    return Err(reset_error("read"));
                }
                if flow.eof || end.reset {
                    return Ok(ReadResult::EndOfStream);
                }
                if blocking {
                    return Err(SutError::Watchdog(
                        "blocking read with nothing in flight can never complete".into(),
                    ));
                }
                return Ok(ReadResult::Bytes(0));
            }
            if !blocking {
                return Ok(ReadResult::Bytes(0));
            }
            // Blocking read waits out the latency of in-flight bytes.
            self.advance();
        }
    }

    fn write(&mut self, stream: Token, data: &[u8], _blocking: bool) -> SutResult<usize> {
        let (conn, side) = self.stream(stream)?;
        let c = &mut self.conns[conn];
        if c.ends[side].reset {
            return Err(reset_error("write"));
        }
        let peer = 1 - side;
        if c.ends[peer].closed || (c.ends[peer].input_shut && c.flows[peer].eof) {
            // The peer is gone, or has shut down both directions (data
            // arriving in FIN_WAIT after SHUT_RD aborts on Linux): the data
            // is lost and a reset comes back.
            c.flows[side].stats.written += data.len() as u64;
            c.flows[side].stats.discarded += data.len() as u64;
            c.ends[side].reset = true;
            return Ok(data.len());
        }
        let steps = self.assign_latency(data.len());
        let flow = &mut self.conns[conn].flows[side];
        let mut start = 0;
        while start < data.len() {
            let at = steps[start];
            let end = steps[start..]
                .iter()
                .position(|s| *s != at)
                .map_or(data.len(), |p| start + p);
            flow.in_flight.push_back(Cohort {
                bytes: data[start..end].to_vec(),
                available_at: at,
            });
            start = end;
        }
        flow.stats.written += data.len() as u64;
        flow.stats.in_flight += data.len() as u64;
        self.deliver(conn, side);
        Ok(data.len())
    }

    fn shutdown(&mut self, stream: Token, how: Shutdown) -> SutResult<()> {
        let (conn, side) = self.stream(stream)?;
        let c = &mut self.conns[conn];
        if c.ends[side].reset {
            return Err(reset_error("shutdown"));
        }
        match how {
            Shutdown::Write => c.flows[side].eof = true,
            Shutdown::Read => c.ends[side].input_shut = true,
        }
        Ok(())
    }

    fn close_stream(&mut self, stream: Token) {
        let Ok((conn, side)) = self.stream(stream) else {
            return;
        };
        self.streams.remove(&stream);
        let c = &mut self.conns[conn];
        if c.ends[side].closed {
            return;
        }
        c.ends[side].closed = true;
        if c.ends[side].reset {
            return;
        }
        if c.flows[1 - side].has_unread() {
            // Closing with unread input aborts the connection.
            self.reset_connection(conn, side);
        } else {
            c.flows[side].eof = true;
        }
    }

    fn acceptable(&mut self, listener: Token) -> bool {
        self.listeners
            .get(&listener)
            .is_some_and(|l| !l.backlog.is_empty())
    }

    fn readable(&mut self, stream: Token) -> bool {
        let Ok((conn, side)) = self.stream(stream) else {
            return false;
        };
        let c = &self.conns[conn];
        let flow = &c.flows[1 - side];
        let ready = c.ends[side].reset
            || !flow.delivered.is_empty()
            || (flow.eof && flow.in_flight.is_empty());
        if !ready && self.fault_due(FaultKind::PhantomReadiness) {
            self.fire_fault();
            return true;
        }
        ready
    }

    fn writable(&mut self, stream: Token) -> bool {
        self.stream(stream).is_ok()
    }

    fn advance(&mut self) {
        SimNetwork::advance(self);
    }

    fn close_all(&mut self) {
        for c in &mut self.conns {
            for f in &mut c.flows {
                f.discard_all();
            }
            c.ends[0].closed = true;
            c.ends[1].closed = true;
        }
        self.streams.clear();
        self.listeners.clear();
        self.ports.clear();
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
