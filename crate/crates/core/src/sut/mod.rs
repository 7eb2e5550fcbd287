//! The socket API under test.
//!
//! [`Sut`] exposes server channels, connection channels and selectors with
//! blocking and non-blocking call modes. It owns the per-channel state
//! machine (which operation is legal in which state, and which
//! [`ErrorKind`] an illegal call raises) and delegates actual I/O to a
//! [`Transport`]: [`RealTransport`] for loopback OS sockets, or the
//! deterministic simulated network in [`crate::simnet`].

mod real;

use std::collections::BTreeMap;
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::time::Instant;

pub use real::{RealTransport, DEFAULT_WATCHDOG};

/// Closed set of exceptions the API can raise. Models map these onto
/// exceptional target states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ErrorKind {
    AlreadyBound,
    NotYetBound,
    ClosedChannel,
    ConnectionRefused,
    InputShutdown,
    OutputShutdown,
    IllegalBlockingMode,
    IllegalArgument,
    AddrInUse,
    ConnectionReset,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 10] = [
        ErrorKind::AlreadyBound,
        ErrorKind::NotYetBound,
        ErrorKind::ClosedChannel,
        ErrorKind::ConnectionRefused,
        ErrorKind::InputShutdown,
        ErrorKind::OutputShutdown,
        ErrorKind::IllegalBlockingMode,
        ErrorKind::IllegalArgument,
        ErrorKind::AddrInUse,
        ErrorKind::ConnectionReset,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::AlreadyBound => "AlreadyBound",
            ErrorKind::NotYetBound => "NotYetBound",
            ErrorKind::ClosedChannel => "ClosedChannel",
            ErrorKind::ConnectionRefused => "ConnectionRefused",
            ErrorKind::InputShutdown => "InputShutdown",
            ErrorKind::OutputShutdown => "OutputShutdown",
            ErrorKind::IllegalBlockingMode => "IllegalBlockingMode",
            ErrorKind::IllegalArgument => "IllegalArgument",
            ErrorKind::AddrInUse => "AddrInUse",
            ErrorKind::ConnectionReset => "ConnectionReset",
        }
    }

    pub fn from_name(name: &str) -> Option<ErrorKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Failure of an adapter call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SutError {
    /// An API exception. `detail` carries the OS message, if any, for
    /// diagnostics only.
    #[error("{kind}: {detail}")]
    Raised { kind: ErrorKind, detail: String },
    /// A blocking call could not complete: either the wall-clock bound
    /// elapsed (real sockets) or no progress is possible (simulation).
    #[error("watchdog: {0}")]
    Watchdog(String),
    /// The backend itself is broken (stale handle, unexpected OS error).
    #[error("backend failure: {0}")]
    Backend(String),
}

impl SutError {
    pub fn raised(kind: ErrorKind, detail: impl Into<String>) -> Self {
        SutError::Raised {
            kind,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> Option<ErrorKind> {
        match self {
            SutError::Raised { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

pub type SutResult<T> = Result<T, SutError>;

/// Which transport backs a [`Sut`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Real,
    Sim,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Real => "real",
            BackendKind::Sim => "sim",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(BackendKind::Real),
            "sim" => Ok(BackendKind::Sim),
            other => Err(format!("unknown backend `{other}` (expected real or sim)")),
        }
    }
}

macro_rules! handle {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

handle!(ServerId, "server#");
handle!(ConnId, "conn#");
handle!(SelectorId, "selector#");
handle!(SelectionKey, "key#");

/// Transport-level handle for a listener or a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u32);

/// Either kind of channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Server(ServerId),
    Conn(ConnId),
}

impl From<ServerId> for Channel {
    fn from(id: ServerId) -> Self {
        Channel::Server(id)
    }
}

impl From<ConnId> for Channel {
    fn from(id: ConnId) -> Self {
        Channel::Conn(id)
    }
}

/// Address of one end of a connection.
pub type Endpoint = SocketAddr;

pub const LOOPBACK: IpAddr = IpAddr::V4(Ipv4Addr::LOCALHOST);

/// Result of a read call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReadResult {
    Bytes(usize),
    EndOfStream,
}

impl fmt::Display for ReadResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadResult::Bytes(n) => write!(f, "Bytes({n})"),
            ReadResult::EndOfStream => f.write_str("EndOfStream"),
        }
    }
}

/// Interest set of a selector registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Interest {
    pub accept: bool,
    pub read: bool,
    pub write: bool,
}

impl Interest {
    pub const ACCEPT: Interest = Interest {
        accept: true,
        read: false,
        write: false,
    };
    pub const READ: Interest = Interest {
        accept: false,
        read: true,
        write: false,
    };
    pub const WRITE: Interest = Interest {
        accept: false,
        read: false,
        write: true,
    };

    pub fn union(self, other: Interest) -> Interest {
        Interest {
            accept: self.accept || other.accept,
            read: self.read || other.read,
            write: self.write || other.write,
        }
    }

    pub fn is_empty(self) -> bool {
        !(self.accept || self.read || self.write)
    }
}

impl fmt::Display for Interest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.accept {
            parts.push("ACCEPT");
        }
        if self.read {
            parts.push("READ");
        }
        if self.write {
            parts.push("WRITE");
        }
        if parts.is_empty() {
            f.write_str("NONE")
        } else {
            f.write_str(&parts.join("|"))
        }
    }
}

/// Keys reported ready by one `select_now`, with the ready subset of
/// their interest set. Ordered by key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReadinessSet {
    pub ready: Vec<(SelectionKey, Interest)>,
}

impl ReadinessSet {
    pub fn is_empty(&self) -> bool {
        self.ready.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ready.len()
    }

    pub fn get(&self, key: SelectionKey) -> Option<Interest> {
        self.ready.iter().find(|(k, _)| *k == key).map(|(_, i)| *i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shutdown {
    Read,
    Write,
}

/// Lifecycle of a server channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerState {
    OpenUnbound,
    Bound,
    Closed,
}

/// Lifecycle of a connection channel. The two shutdown flags are
/// independent; `closed` is absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConnState {
    pub input_shutdown: bool,
    pub output_shutdown: bool,
    pub closed: bool,
}

/// Raw I/O underneath the adapter's state machine.
///
/// Implementations do not check channel state: the adapter only calls
/// them for operations that are legal. Blocking calls must either
/// complete or return [`SutError::Watchdog`]; they must never hang.
pub trait Transport {
    fn kind(&self) -> BackendKind;
    /// Creates an unbound listening socket.
    fn open_listener(&mut self) -> SutResult<Token>;
    /// Binds to `port` on loopback (0 picks an ephemeral port) and starts
    /// listening. Returns the bound port.
    fn bind_listen(&mut self, listener: Token, port: u16) -> SutResult<u16>;
    fn close_listener(&mut self, listener: Token);
    /// Returns the accepted stream with its local and peer endpoints.
    fn accept(
        &mut self,
        listener: Token,
        blocking: bool,
    ) -> SutResult<Option<(Token, Endpoint, Endpoint)>>;
    /// Blocking connect. Returns the stream with its local and peer
    /// endpoints.
    fn connect(&mut self, host: IpAddr, port: u16) -> SutResult<(Token, Endpoint, Endpoint)>;
    /// `buf` is never empty.
    fn read(&mut self, stream: Token, buf: &mut [u8], blocking: bool) -> SutResult<ReadResult>;
    /// `data` is never empty.
    fn write(&mut self, stream: Token, data: &[u8], blocking: bool) -> SutResult<usize>;
    fn shutdown(&mut self, stream: Token, how: Shutdown) -> SutResult<()>;
    fn close_stream(&mut self, stream: Token);
    fn acceptable(&mut self, listener: Token) -> bool;
    fn readable(&mut self, stream: Token) -> bool;
    fn writable(&mut self, stream: Token) -> bool;
    /// One tick of simulated time. No-op on real sockets.
    fn advance(&mut self) {}
    /// Deadline for blocking calls made until the next call.
    fn arm_watchdog(&mut self, _deadline: Option<Instant>) {}
    /// Lets in-flight network events land before the next call. Used by
    /// the conformance driver; a no-op in simulation.
    fn settle(&mut self) {}
    /// Force-closes every socket opened so far.
    fn close_all(&mut self);
    /// Downcasting hook for diagnostics.
    fn as_any(&self) -> &dyn std::any::Any;
}

#[derive(Debug)]
struct ServerEntry {
    token: Token,
    state: ServerState,
    blocking: bool,
    local_port: Option<u16>,
}

#[derive(Debug)]
struct ConnEntry {
    token: Token,
    state: ConnState,
    blocking: bool,
    local: Endpoint,
    peer: Endpoint,
}

#[derive(Debug)]
struct Registration {
    channel: Channel,
    interest: Interest,
}

#[derive(Debug, Default)]
struct SelectorEntry {
    keys: BTreeMap<SelectionKey, Registration>,
    last_ready: ReadinessSet,
}

/// The socket API: channel state machine over a [`Transport`].
pub struct Sut {
    transport: Box<dyn Transport>,
    servers: BTreeMap<ServerId, ServerEntry>,
    conns: BTreeMap<ConnId, ConnEntry>,
    selectors: BTreeMap<SelectorId, SelectorEntry>,
    next_handle: u32,
}

impl fmt::Debug for Sut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sut")
            .field("backend", &self.transport.kind())
            .field("servers", &self.servers)
            .field("conns", &self.conns)
            .field("selectors", &self.selectors.len())
            .finish()
    }
}

fn closed(what: impl fmt::Display) -> SutError {
    SutError::raised(ErrorKind::ClosedChannel, format!("{what} is closed"))
}

impl Sut {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            transport,
            servers: BTreeMap::new(),
            conns: BTreeMap::new(),
            selectors: BTreeMap::new(),
            next_handle: 1,
        }
    }

    pub fn backend(&self) -> BackendKind {
        self.transport.kind()
    }

    pub fn transport(&self) -> &dyn Transport {
        self.transport.as_ref()
    }

    pub fn transport_mut(&mut self) -> &mut dyn Transport {
        self.transport.as_mut()
    }

    fn fresh(&mut self) -> u32 {
        let id = self.next_handle;
        self.next_handle += 1;
        id
    }

    fn server(&self, id: ServerId) -> SutResult<&ServerEntry> {
        self.servers
            .get(&id)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {id}")))
    }

    fn server_mut(&mut self, id: ServerId) -> SutResult<&mut ServerEntry> {
        self.servers
            .get_mut(&id)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {id}")))
    }

    fn conn(&self, id: ConnId) -> SutResult<&ConnEntry> {
        self.conns
            .get(&id)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {id}")))
    }

    fn conn_mut(&mut self, id: ConnId) -> SutResult<&mut ConnEntry> {
        self.conns
            .get_mut(&id)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {id}")))
    }

    // ---- server channels ----

    pub fn open_server(&mut self) -> SutResult<ServerId> {
        let token = self.transport.open_listener()?;
        let id = ServerId(self.fresh());
        self.servers.insert(
            id,
            ServerEntry {
                token,
                state: ServerState::OpenUnbound,
                blocking: true,
                local_port: None,
            },
        );
        Ok(id)
    }

    /// Binds and starts listening. Port 0 selects an ephemeral port.
    pub fn bind(&mut self, id: ServerId, port: u16) -> SutResult<u16> {
        let entry = self.server(id)?;
        match entry.state {
            ServerState::Closed => return Err(closed(id)),
            ServerState::Bound => {
                return Err(SutError::raised(
                    ErrorKind::AlreadyBound,
                    format!("{id} is already bound"),
                ))
            }
            ServerState::OpenUnbound => {}
        }
        let token = entry.token;
        let bound = self.transport.bind_listen(token, port)?;
        let entry = self.server_mut(id)?;
        entry.state = ServerState::Bound;
        entry.local_port = Some(bound);
        Ok(bound)
    }

    pub fn local_port(&self, id: ServerId) -> SutResult<u16> {
        let entry = self.server(id)?;
        match entry.state {
            ServerState::Closed => Err(closed(id)),
            ServerState::OpenUnbound => Err(SutError::raised(
                ErrorKind::NotYetBound,
                format!("{id} is not bound"),
            )),
            ServerState::Bound => Ok(entry.local_port.expect("bound server has a port")),
        }
    }

    pub fn server_state(&self, id: ServerId) -> SutResult<ServerState> {
        Ok(self.server(id)?.state)
    }

    /// Port the server was bound to, retained after close.
    pub fn last_bound_port(&self, id: ServerId) -> SutResult<Option<u16>> {
        Ok(self.server(id)?.local_port)
    }

    /// Closing twice is a no-op.
    pub fn close_server(&mut self, id: ServerId) -> SutResult<()> {
        let entry = self.server_mut(id)?;
        if entry.state == ServerState::Closed {
            return Ok(());
        }
        entry.state = ServerState::Closed;
        let token = entry.token;
        self.transport.close_listener(token);
        self.cancel_keys(Channel::Server(id));
        Ok(())
    }

    pub fn accept(&mut self, id: ServerId) -> SutResult<Option<ConnId>> {
        let entry = self.server(id)?;
        match entry.state {
            ServerState::Closed => return Err(closed(id)),
            ServerState::OpenUnbound => {
                return Err(SutError::raised(
                    ErrorKind::NotYetBound,
                    format!("accept on unbound {id}"),
                ))
            }
            ServerState::Bound => {}
        }
        let (token, blocking) = (entry.token, entry.blocking);
        match self.transport.accept(token, blocking)? {
            None => Ok(None),
            Some((stream, local, peer)) => Ok(Some(self.insert_conn(stream, local, peer))),
        }
    }

    // ---- connection channels ----

    fn insert_conn(&mut self, token: Token, local: Endpoint, peer: Endpoint) -> ConnId {
        let id = ConnId(self.fresh());
        self.conns.insert(
            id,
            ConnEntry {
                token,
                state: ConnState::default(),
                blocking: true,
                local,
                peer,
            },
        );
        id
    }

    pub fn connect(&mut self, host: IpAddr, port: u16) -> SutResult<ConnId> {
        let (token, local, peer) = self.transport.connect(host, port)?;
        Ok(self.insert_conn(token, local, peer))
    }

    pub fn conn_state(&self, id: ConnId) -> SutResult<ConnState> {
        Ok(self.conn(id)?.state)
    }

    pub fn local_endpoint(&self, id: ConnId) -> SutResult<Endpoint> {
        Ok(self.conn(id)?.local)
    }

    pub fn peer_endpoint(&self, id: ConnId) -> SutResult<Endpoint> {
        Ok(self.conn(id)?.peer)
    }

    /// Reads up to `capacity` bytes, discarding the payload.
    pub fn read(&mut self, id: ConnId, capacity: usize) -> SutResult<ReadResult> {
        let mut buf = vec![0u8; capacity];
        self.read_into(id, &mut buf)
    }

    /// Reads into `buf`; `Bytes(n)` fills `buf[..n]`.
    pub fn read_into(&mut self, id: ConnId, buf: &mut [u8]) -> SutResult<ReadResult> {
        let entry = self.conn(id)?;
        if entry.state.closed {
            return Err(closed(id));
        }
        if entry.state.input_shutdown {
            return Err(SutError::raised(
                ErrorKind::InputShutdown,
                format!("input of {id} is shut down"),
            ));
        }
        if buf.is_empty() {
            return Ok(ReadResult::Bytes(0));
        }
        let (token, blocking) = (entry.token, entry.blocking);
        self.transport.read(token, buf, blocking)
    }

    pub fn write(&mut self, id: ConnId, payload: &[u8]) -> SutResult<usize> {
        let entry = self.conn(id)?;
        if entry.state.closed {
            return Err(closed(id));
        }
        if entry.state.output_shutdown {
            return Err(SutError::raised(
                ErrorKind::OutputShutdown,
                format!("output of {id} is shut down"),
            ));
        }
        if payload.is_empty() {
            return Ok(0);
        }
        let (token, blocking) = (entry.token, entry.blocking);
        self.transport.write(token, payload, blocking)
    }

    pub fn shutdown_input(&mut self, id: ConnId) -> SutResult<()> {
        self.shutdown(id, Shutdown::Read)
    }

    pub fn shutdown_output(&mut self, id: ConnId) -> SutResult<()> {
        self.shutdown(id, Shutdown::Write)
    }

    fn shutdown(&mut self, id: ConnId, how: Shutdown) -> SutResult<()> {
        let entry = self.conn(id)?;
        if entry.state.closed {
            return Err(closed(id));
        }
        let already = match how {
            Shutdown::Read => entry.state.input_shutdown,
            Shutdown::Write => entry.state.output_shutdown,
        };
        if already {
            return Ok(());
        }
        let token = entry.token;
        self.transport.shutdown(token, how)?;
        let entry = self.conn_mut(id)?;
        match how {
            Shutdown::Read => entry.state.input_shutdown = true,
            Shutdown::Write => entry.state.output_shutdown = true,
        }
        Ok(())
    }

    /// Closing twice is a no-op.
    pub fn close_conn(&mut self, id: ConnId) -> SutResult<()> {
        let entry = self.conn_mut(id)?;
        if entry.state.closed {
            return Ok(());
        }
        entry.state.closed = true;
        let token = entry.token;
        self.transport.close_stream(token);
        self.cancel_keys(Channel::Conn(id));
        Ok(())
    }

    // ---- either channel ----

    /// A channel registered with a selector cannot go back to blocking.
    pub fn configure_blocking(&mut self, ch: impl Into<Channel>, blocking: bool) -> SutResult<()> {
        let ch = ch.into();
        if blocking && !self.is_closed(ch)? && self.is_registered(ch) {
            return Err(SutError::raised(
                ErrorKind::IllegalBlockingMode,
                "a registered channel must stay non-blocking",
            ));
        }
        match ch {
            Channel::Server(id) => {
                let entry = self.server_mut(id)?;
                if entry.state == ServerState::Closed {
                    return Err(closed(id));
                }
                entry.blocking = blocking;
            }
            Channel::Conn(id) => {
                let entry = self.conn_mut(id)?;
                if entry.state.closed {
                    return Err(closed(id));
                }
                entry.blocking = blocking;
            }
        }
        Ok(())
    }

    pub fn is_blocking(&self, ch: impl Into<Channel>) -> SutResult<bool> {
        Ok(match ch.into() {
            Channel::Server(id) => self.server(id)?.blocking,
            Channel::Conn(id) => self.conn(id)?.blocking,
        })
    }

    fn is_closed(&self, ch: Channel) -> SutResult<bool> {
        Ok(match ch {
            Channel::Server(id) => self.server(id)?.state == ServerState::Closed,
            Channel::Conn(id) => self.conn(id)?.state.closed,
        })
    }

    // ---- selectors ----

    pub fn open_selector(&mut self) -> SelectorId {
        let id = SelectorId(self.fresh());
        self.selectors.insert(id, SelectorEntry::default());
        id
    }

    pub fn register(
        &mut self,
        sel: SelectorId,
        ch: impl Into<Channel>,
        interest: Interest,
    ) -> SutResult<SelectionKey> {
        let ch = ch.into();
        if !self.selectors.contains_key(&sel) {
            return Err(SutError::Backend(format!("unknown handle {sel}")));
        }
        if self.is_closed(ch)? {
            return Err(SutError::raised(
                ErrorKind::ClosedChannel,
                "cannot register a closed channel",
            ));
        }
        if self.is_blocking(ch)? {
            return Err(SutError::raised(
                ErrorKind::IllegalBlockingMode,
                "channel must be non-blocking to register",
            ));
        }
        let valid = match ch {
            Channel::Server(_) => !interest.read && !interest.write,
            Channel::Conn(_) => !interest.accept,
        };
        if interest.is_empty() || !valid {
            return Err(SutError::raised(
                ErrorKind::IllegalArgument,
                format!("interest {interest} is invalid for this channel"),
            ));
        }
        let key = SelectionKey(self.fresh());
        self.selectors
            .get_mut(&sel)
            .expect("checked above")
            .keys
            .insert(
                key,
                Registration {
                    channel: ch,
                    interest,
                },
            );
        Ok(key)
    }

    /// Cancelling an unknown or already cancelled key is a no-op.
    pub fn deregister(&mut self, sel: SelectorId, key: SelectionKey) -> SutResult<()> {
        let entry = self
            .selectors
            .get_mut(&sel)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {sel}")))?;
        entry.keys.remove(&key);
        Ok(())
    }

    pub fn registered_keys(&self, sel: SelectorId) -> SutResult<Vec<SelectionKey>> {
        let entry = self
            .selectors
            .get(&sel)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {sel}")))?;
        Ok(entry.keys.keys().copied().collect())
    }

    fn is_registered(&self, ch: Channel) -> bool {
        self.selectors
            .values()
            .any(|sel| sel.keys.values().any(|reg| reg.channel == ch))
    }

    fn cancel_keys(&mut self, ch: Channel) {
        for sel in self.selectors.values_mut() {
            sel.keys.retain(|_, reg| reg.channel != ch);
        }
    }

    /// Keys whose channel is ready for at least one interest op, without
    /// waiting.
    pub fn select_now(&mut self, sel: SelectorId) -> SutResult<ReadinessSet> {
        let regs: Vec<(SelectionKey, Channel, Interest)> = self
            .selectors
            .get(&sel)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {sel}")))?
            .keys
            .iter()
            .map(|(k, r)| (*k, r.channel, r.interest))
            .collect();
        let mut ready = Vec::new();
        for (key, ch, interest) in regs {
            let mut got = Interest::default();
            match ch {
                Channel::Server(id) => {
                    let entry = self.server(id)?;
                    if interest.accept && entry.state == ServerState::Bound {
                        let token = entry.token;
                        got.accept = self.transport.acceptable(token);
                    }
                }
                Channel::Conn(id) => {
                    let entry = self.conn(id)?;
                    let (token, state) = (entry.token, entry.state);
                    if interest.read && !state.input_shutdown {
                        got.read = self.transport.readable(token);
                    }
                    if interest.write && !state.output_shutdown {
                        got.write = self.transport.writable(token);
                    }
                }
            }
            if !got.is_empty() {
                ready.push((key, got));
            }
        }
        let set = ReadinessSet { ready };
        self.selectors
            .get_mut(&sel)
            .expect("checked above")
            .last_ready = set.clone();
        Ok(set)
    }

    /// Result of the most recent `select_now` on `sel`.
    pub fn last_ready(&self, sel: SelectorId) -> SutResult<&ReadinessSet> {
        self.selectors
            .get(&sel)
            .map(|s| &s.last_ready)
            .ok_or_else(|| SutError::Backend(format!("unknown handle {sel}")))
    }

    // ---- harness hooks ----

    pub fn advance(&mut self) {
        self.transport.advance();
    }

    pub fn arm_watchdog(&mut self, deadline: Option<Instant>) {
        self.transport.arm_watchdog(deadline);
    }

    pub fn settle(&mut self) {
        self.transport.settle();
    }

    /// Number of channels not yet closed.
    pub fn open_channels(&self) -> usize {
        self.servers
            .values()
            .filter(|s| s.state != ServerState::Closed)
            .count()
            + self.conns.values().filter(|c| !c.state.closed).count()
    }

    /// Force-closes every channel and forgets all handles.
    pub fn close_all(&mut self) {
        self.transport.close_all();
        self.servers.clear();
        self.conns.clear();
        self.selectors.clear();
    }
}

impl Drop for Sut {
    fn drop(&mut self) {
        self.transport.close_all();
    }
}
