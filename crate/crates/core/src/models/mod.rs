//! The socket test models and the environment they run in.
//!
//! * `minimalist`: a blocking server that, per session, launches a client,
//!   accepts its connection and hands it to a worker.
//! * `server-main`: a selector-based server with blocking-mode toggling,
//!   non-blocking accepts and the operations that are illegal per state.
//! * `worker`: one server-side connection (read, write, half-close, close).
//! * `client`: one client connection that reads, writes and eventually
//!   closes.
//!
//! `minimalist-reordered` accepts before launching the client and exists
//! to show that this ordering deadlocks.
//!
//! Every read is checked against the [`OracleLedger`].

pub mod client;
pub mod ledger;
pub mod server;
pub mod worker;

use std::time::{Duration, Instant};

use crate::efsm::{ActionCtx, ActionError, ActionResult, ModelSpec, Transition, Vars};
use crate::explorer::{EnvFactory, Environment, ModelShape, SuiteConfig, SuiteError};
use crate::portman::{PortPool, PortRange};
use crate::simnet::{FaultSpec, LatencyModel, SimNetwork};
use crate::sut::{BackendKind, ErrorKind, ReadResult, Sut, SutError, SutResult};
use crate::sut::{RealTransport, DEFAULT_WATCHDOG};

pub use ledger::{LinkId, LinkRecord, OracleLedger, Side};

pub type Spec = ModelSpec<SocketEnv>;
pub(crate) type T = Transition<SocketEnv>;
pub(crate) type Ctx<'a> = ActionCtx<'a, SocketEnv>;

/// Tunables shared by the models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    /// Chance that a client's close decision closes.
    pub p_close: f64,
    /// Clients a server launches per test.
    pub max_clients: i64,
    /// Largest write, in bytes.
    pub max_payload: u64,
    /// Operations a closed channel is still probed with.
    pub post_close_probes: i64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            p_close: 0.1,
            max_clients: 4,
            max_payload: 64,
            post_close_probes: 2,
        }
    }
}

/// What the models act on: the API under test plus the oracle.
pub struct SocketEnv {
    pub sut: Sut,
    pub ledger: OracleLedger,
    pub settings: ModelSettings,
    listen_port: u16,
    watchdog: Option<Duration>,
}

impl std::fmt::Debug for SocketEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SocketEnv")
            .field("sut", &self.sut)
            .field("ledger", &self.ledger)
            .field("listen_port", &self.listen_port)
            .finish()
    }
}

impl SocketEnv {
    pub fn new(
        sut: Sut,
        settings: ModelSettings,
        listen_port: u16,
        watchdog: Option<Duration>,
    ) -> Self {
        Self {
            sut,
            ledger: OracleLedger::new(),
            settings,
            listen_port,
            watchdog,
        }
    }

    /// Simulated network; servers bind an ephemeral port.
    pub fn sim(seed: u64, latency: LatencyModel, fault: Option<FaultSpec>) -> Self {
        let mut net = SimNetwork::new(seed, latency);
        if let Some(f) = fault {
            net.inject_fault(f);
        }
        Self::new(Sut::new(Box::new(net)), ModelSettings::default(), 0, None)
    }

    /// Loopback sockets; servers bind `listen_port`.
    pub fn real(listen_port: u16, watchdog: Duration) -> Self {
        Self::new(
            Sut::new(Box::new(RealTransport::new(watchdog))),
            ModelSettings::default(),
            listen_port,
            Some(watchdog),
        )
    }

    pub fn with_settings(mut self, settings: ModelSettings) -> Self {
        self.settings = settings;
        self
    }

    /// Port servers should bind; 0 lets the backend pick.
    pub fn listen_port(&self) -> u16 {
        self.listen_port
    }

    pub fn sim_network(&self) -> Option<&SimNetwork> {
        self.sut.transport().as_any().downcast_ref::<SimNetwork>()
    }
}

impl Environment for SocketEnv {
    fn begin_step(&mut self) {
        if let Some(w) = self.watchdog {
            self.sut.arm_watchdog(Some(Instant::now() + w));
        }
    }

    fn end_step(&mut self) {
        self.sut.advance();
    }

    fn teardown(&mut self) {
        self.sut.close_all();
        self.ledger.reset();
    }

    fn diagnostics(&self) -> Vec<String> {
        self.sim_network()
            .map(SimNetwork::diagnostics)
            .unwrap_or_default()
    }
}

/// Backend options beyond what [`SuiteConfig`] carries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SocketOptions {
    pub latency: LatencyModel,
    pub fault: Option<FaultSpec>,
    pub settings: ModelSettings,
    pub watchdog: Duration,
    /// Tests a released port waits before reuse.
    pub port_cooldown: u64,
}

impl Default for SocketOptions {
    fn default() -> Self {
        Self {
            latency: LatencyModel::default(),
            fault: None,
            settings: ModelSettings::default(),
            watchdog: DEFAULT_WATCHDOG,
            port_cooldown: PortPool::DEFAULT_COOLDOWN,
        }
    }
}

/// Creates one [`SocketEnv`] per test and recycles listen ports.
#[derive(Debug)]
pub struct SocketFactory {
    backend: BackendKind,
    options: SocketOptions,
    pool: Option<PortPool>,
    leased: Option<u16>,
    max_leased: usize,
}

impl SocketFactory {
    pub fn new(config: &SuiteConfig, options: SocketOptions) -> Result<Self, SuiteError> {
        let pool = match config.backend {
            BackendKind::Real => {
                if options.fault.is_some() {
                    return Err(SuiteError::Config(
                        "faults can only be injected into the simulated network".into(),
                    ));
                }
                let range = config.port_range.unwrap_or(PortRange::DEFAULT);
                Some(PortPool::with_cooldown(range, options.port_cooldown))
            }
            BackendKind::Sim => None,
        };
        Ok(Self {
            backend: config.backend,
            options,
            pool,
            leased: None,
            max_leased: 0,
        })
    }

    pub fn sim(options: SocketOptions) -> Self {
        Self {
            backend: BackendKind::Sim,
            options,
            pool: None,
            leased: None,
            max_leased: 0,
        }
    }

    pub fn options(&self) -> &SocketOptions {
        &self.options
    }

    pub fn pool(&self) -> Option<&PortPool> {
        self.pool.as_ref()
    }

    /// Most ports ever leased at once.
    pub fn max_concurrent_leases(&self) -> usize {
        self.max_leased
    }
}

impl EnvFactory<SocketEnv> for SocketFactory {
    fn backend(&self) -> BackendKind {
        self.backend
    }

    fn create(&mut self, _test_index: u64, test_seed: u64) -> Result<SocketEnv, SuiteError> {
        let env = match self.pool.as_mut() {
            None => SocketEnv::sim(test_seed, self.options.latency, self.options.fault),
            Some(pool) => {
                let port = pool
                    .acquire()
                    .map_err(|e| SuiteError::Backend(e.to_string()))?;
                self.leased = Some(port);
                self.max_leased = self.max_leased.max(pool.leased());
                SocketEnv::real(port, self.options.watchdog)
            }
        };
        Ok(env.with_settings(self.options.settings))
    }

    fn recycle(&mut self, env: SocketEnv) {
        drop(env);
        if let Some(pool) = self.pool.as_mut() {
            if let Some(port) = self.leased.take() {
                let _ = pool.release(port);
            }
            pool.tick();
        }
    }
}

/// Every bundled model, wired together.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub client: Spec,
    pub worker: Spec,
    pub server_main: Spec,
    pub minimalist: Spec,
    pub minimalist_reordered: Spec,
}

/// Registered model names.
pub const MODEL_NAMES: [&str; 5] = [
    "minimalist",
    "server-main",
    "worker",
    "client",
    "minimalist-reordered",
];

impl Catalog {
    pub fn new() -> Self {
        let client = client::client_model();
        let worker = worker::worker_model(&client);
        let server_main = server::server_main_model(&client, &worker);
        let minimalist = server::minimalist_model(&client, &worker, false);
        let minimalist_reordered = server::minimalist_model(&client, &worker, true);
        Self {
            client,
            worker,
            server_main,
            minimalist,
            minimalist_reordered,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Spec> {
        match name {
            "minimalist" => Some(&self.minimalist),
            "server-main" => Some(&self.server_main),
            "worker" => Some(&self.worker),
            "client" => Some(&self.client),
            "minimalist-reordered" => Some(&self.minimalist_reordered),
            _ => None,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = (&'static str, &Spec)> {
        MODEL_NAMES
            .iter()
            .map(move |n| (*n, self.get(n).expect("registered")))
    }

    pub fn shapes(&self) -> Vec<ModelShape> {
        self.all().map(|(_, s)| ModelShape::of(s)).collect()
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Self::new()
    }
}

// ---- helpers shared by the models ----

pub(crate) fn violation(msg: impl Into<String>) -> ActionError {
    ActionError::Violation(msg.into())
}

/// For transitions that exist to provoke `kind`: success is a violation,
/// an error is passed on so the transition's override can route it.
pub(crate) fn expect_raised<V>(result: SutResult<V>, kind: ErrorKind, what: &str) -> ActionResult {
    match result {
        Ok(_) => Err(violation(format!("{what} succeeded; expected {kind}"))),
        Err(e) => Err(e.into()),
    }
}

pub(crate) fn link_of(vars: &Vars) -> Result<LinkId, ActionError> {
    Ok(LinkId(vars.int("link")? as usize))
}

fn io_error(env: &SocketEnv, link: LinkId, side: Side, e: SutError) -> ActionError {
    if e.kind() == Some(ErrorKind::ConnectionReset) {
        if let Err(m) = env.ledger.check_reset(link, side) {
            return violation(m);
        }
    }
    e.into()
}

/// Reads up to `capacity` bytes from the instance's `conn` and checks the
/// result against the ledger.
pub(crate) fn read_checked(
    ctx: &mut Ctx<'_>,
    side: Side,
    capacity: usize,
) -> Result<ReadResult, ActionError> {
    let conn = ctx.vars.conn("conn")?;
    let link = link_of(ctx.vars)?;
    match ctx.env.sut.read(conn, capacity) {
        Ok(ReadResult::Bytes(n)) => {
            ctx.env
                .ledger
                .record_read(link, side, n)
                .map_err(violation)?;
            Ok(ReadResult::Bytes(n))
        }
        Ok(ReadResult::EndOfStream) => {
            ctx.env.ledger.check_eof(link, side).map_err(violation)?;
            Ok(ReadResult::EndOfStream)
        }
        Err(e) => Err(io_error(ctx.env, link, side, e)),
    }
}

/// Random capacity for a read.
pub(crate) fn read_capacity(ctx: &mut Ctx<'_>) -> usize {
    let max = ctx.env.settings.max_payload.max(1);
    ctx.rng.range_inclusive(1, max) as usize
}

/// Writes a random-length payload to `conn` and records what was taken.
pub(crate) fn write_checked(ctx: &mut Ctx<'_>, side: Side) -> ActionResult {
    let conn = ctx.vars.conn("conn")?;
    let link = link_of(ctx.vars)?;
    let len = read_capacity(ctx);
    let payload: Vec<u8> = (0..len).map(|i| b'a' + (i % 26) as u8).collect();
    match ctx.env.sut.write(conn, &payload) {
        Ok(n) => {
            if n > len {
                return Err(violation(format!("write reported {n} bytes of {len}")));
            }
            ctx.env.ledger.record_write(link, side, n);
            Ok(())
        }
        Err(e) => Err(io_error(ctx.env, link, side, e)),
    }
}

/// Shuts down output and tells the ledger.
pub(crate) fn shutdown_output_checked(ctx: &mut Ctx<'_>, side: Side) -> ActionResult {
    let conn = ctx.vars.conn("conn")?;
    let link = link_of(ctx.vars)?;
    match ctx.env.sut.shutdown_output(conn) {
        Ok(()) => {
            ctx.env.ledger.record_output_shutdown(link, side);
            Ok(())
        }
        Err(e) => Err(io_error(ctx.env, link, side, e)),
    }
}

pub(crate) fn shutdown_input_checked(ctx: &mut Ctx<'_>, side: Side) -> ActionResult {
    let conn = ctx.vars.conn("conn")?;
    let link = link_of(ctx.vars)?;
    match ctx.env.sut.shutdown_input(conn) {
        Ok(()) => {
            ctx.env.ledger.record_input_shutdown(link, side);
            Ok(())
        }
        Err(e) => Err(io_error(ctx.env, link, side, e)),
    }
}

pub(crate) fn close_checked(ctx: &mut Ctx<'_>, side: Side) -> ActionResult {
    let conn = ctx.vars.conn("conn")?;
    let link = link_of(ctx.vars)?;
    ctx.env.sut.close_conn(conn)?;
    ctx.env.ledger.record_close(link, side);
    Ok(())
}

pub(crate) fn probes_left(vars: &Vars, env: &SocketEnv) -> bool {
    vars.int_or_zero("probes") < env.settings.post_close_probes
}

pub(crate) fn count_probe(vars: &mut Vars) {
    let n = vars.int_or_zero("probes") + 1;
    vars.set("probes", crate::efsm::Value::Int(n));
}
