//! Loopback TCP through the operating system.
//!
//! All OS sockets are kept in non-blocking mode; blocking calls are
//! emulated with `poll(2)` up to the armed watchdog deadline so a
//! mis-orchestrated call fails instead of hanging the harness.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::os::fd::{AsRawFd, RawFd};
use std::time::{Duration, Instant};

use socket2::{Domain, SockRef, Socket, Type};

use super::{
    BackendKind, Endpoint, ErrorKind, ReadResult, Shutdown, SutError, SutResult, Token, Transport,
};

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(5);

enum Listener {
    Unbound(Socket),
    Listening(TcpListener),
}

impl Listener {
    fn fd(&self) -> RawFd {
        match self {
            Listener::Unbound(s) => s.as_raw_fd(),
            Listener::Listening(l) => l.as_raw_fd(),
        }
    }
}

pub struct RealTransport {
    listeners: BTreeMap<Token, Listener>,
    streams: BTreeMap<Token, TcpStream>,
    next: u32,
    deadline: Option<Instant>,
    bound: Duration,
    settle_delay: Duration,
}

impl Default for RealTransport {
    fn default() -> Self {
        Self::new(DEFAULT_WATCHDOG)
    }
}

impl RealTransport {
    /// `watchdog` bounds each blocking call when no deadline is armed.
    pub fn new(watchdog: Duration) -> Self {
        Self {
            listeners: BTreeMap::new(),
            streams: BTreeMap::new(),
            next: 1,
            deadline: None,
            bound: watchdog,
            settle_delay: Duration::from_millis(20),
        }
    }

    fn token(&mut self) -> Token {
        let t = Token(self.next);
        self.next += 1;
        t
    }

    fn deadline(&self) -> Instant {
        self.deadline.unwrap_or_else(|| Instant::now() + self.bound)
    }

    fn stream(&mut self, t: Token) -> SutResult<&mut TcpStream> {
        self.streams
            .get_mut(&t)
            .ok_or_else(|| SutError::Backend(format!("stale stream token {}", t.0)))
    }

    fn listener(&self, t: Token) -> SutResult<&Listener> {
        self.listeners
            .get(&t)
            .ok_or_else(|| SutError::Backend(format!("stale listener token {}", t.0)))
    }
}

fn poll_fd(fd: RawFd, events: libc::c_short, timeout: Duration) -> libc::c_short {
    let mut pfd = libc::pollfd {
        fd,
        events,
        revents: 0,
    };
    let ms = timeout.as_millis().min(i32::MAX as u128) as libc::c_int;
    // SAFETY: `pfd` is a valid pollfd for the duration of the call and the
    // count matches.
    let rc = unsafe { libc::poll(&mut pfd, 1, ms) };
    if rc <= 0 {
        0
    } else {
        pfd.revents
    }
}

/// Waits until `fd` reports one of `events` or the deadline passes.
fn wait_for(fd: RawFd, events: libc::c_short, deadline: Instant, what: &str) -> SutResult<()> {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Err(SutError::Watchdog(format!(
                "blocking {what} did not complete"
            )));
        }
        let slice = (deadline - now).min(Duration::from_millis(50));
        if poll_fd(fd, events | libc::POLLERR | libc::POLLHUP, slice) != 0 {
            return Ok(());
        }
    }
}

fn map_io(err: io::Error, what: &str) -> SutError {
    use io::ErrorKind as K;
    match err.kind() {
        K::ConnectionRefused => SutError::raised(ErrorKind::ConnectionRefused, err.to_string()),
        K::ConnectionReset | K::BrokenPipe | K::ConnectionAborted | K::NotConnected => {
            SutError::raised(ErrorKind::ConnectionReset, err.to_string())
        }
        K::AddrInUse => SutError::raised(ErrorKind::AddrInUse, err.to_string()),
        K::TimedOut => SutError::Watchdog(format!("{what}: {err}")),
        _ => SutError::Backend(format!("{what}: {err}")),
    }
}

fn endpoints(stream: &TcpStream) -> SutResult<(Endpoint, Endpoint)> {
    let local = stream.local_addr().map_err(|e| map_io(e, "local_addr"))?;
    let peer = stream.peer_addr().map_err(|e| map_io(e, "peer_addr"))?;
    Ok((local, peer))
}

impl Transport for RealTransport {
    fn kind(&self) -> BackendKind {
        BackendKind::Real
    }

    fn open_listener(&mut self) -> SutResult<Token> {
        let socket =
            Socket::new(Domain::IPV4, Type::STREAM, None).map_err(|e| map_io(e, "socket"))?;
        socket
            .set_reuse_address(true)
            .map_err(|e| map_io(e, "SO_REUSEADDR"))?;
        let t = self.token();
        self.listeners.insert(t, Listener::Unbound(socket));
        Ok(t)
    }

    fn bind_listen(&mut self, listener: Token, port: u16) -> SutResult<u16> {
        let socket = match self.listeners.remove(&listener) {
            Some(Listener::Unbound(s)) => s,
            Some(other) => {
                self.listeners.insert(listener, other);
                return Err(SutError::Backend("listener already bound".into()));
            }
            None => return Err(SutError::Backend("stale listener token".into())),
        };
        let addr = SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), port);
        let result = socket
            .bind(&addr.into())
            .and_then(|_| socket.listen(128))
            .and_then(|_| socket.set_nonblocking(true));
        if let Err(e) = result {
            self.listeners.insert(listener, Listener::Unbound(socket));
            return Err(map_io(e, "bind"));
        }
        let l: TcpListener = socket.into();
        let bound = l.local_addr().map_err(|e| map_io(e, "local_addr"))?.port();
        self.listeners.insert(listener, Listener::Listening(l));
        Ok(bound)
    }

    fn close_listener(&mut self, listener: Token) {
        self.listeners.remove(&listener);
    }

    fn accept(
        &mut self,
        listener: Token,
        blocking: bool,
    ) -> SutResult<Option<(Token, Endpoint, Endpoint)>> {
        let deadline = self.deadline();
        loop {
            let Listener::Listening(l) = self.listener(listener)? else {
                return Err(SutError::Backend("accept on unbound listener".into()));
            };
            match l.accept() {
                Ok((stream, _)) => {
                    stream
                        .set_nonblocking(true)
                        .map_err(|e| map_io(e, "set_nonblocking"))?;
                    let _ = stream.set_nodelay(true);
                    let (local, peer) = endpoints(&stream)?;
                    let t = self.token();
                    self.streams.insert(t, stream);
                    return Ok(Some((t, local, peer)));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if !blocking {
                        return Ok(None);
                    }
                    let fd = l.as_raw_fd();
                    wait_for(fd, libc::POLLIN, deadline, "accept")?;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(map_io(e, "accept")),
            }
        }
    }

    fn connect(&mut self, host: IpAddr, port: u16) -> SutResult<(Token, Endpoint, Endpoint)> {
        let deadline = self.deadline();
        let timeout = deadline
            .saturating_duration_since(Instant::now())
            .max(Duration::from_millis(1));
        let stream = TcpStream::connect_timeout(&SocketAddr::new(host, port), timeout)
            .map_err(|e| map_io(e, "connect"))?;
        stream
            .set_nonblocking(true)
            .map_err(|e| map_io(e, "set_nonblocking"))?;
        let _ = stream.set_nodelay(true);
        let (local, peer) = endpoints(&stream)?;
        let t = self.token();
        self.streams.insert(t, stream);
        Ok((t, local, peer))
    }

    fn read(&mut self, stream: Token, buf: &mut [u8], blocking: bool) -> SutResult<ReadResult> {
        let deadline = self.deadline();
        loop {
            let s = self.stream(stream)?;
            match s.read(buf) {
                Ok(0) => return Ok(ReadResult::EndOfStream),
                Ok(n) => return Ok(ReadResult::Bytes(n)),
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if !blocking {
                        return Ok(ReadResult::Bytes(0));
                    }
                    let fd = s.as_raw_fd();
                    wait_for(fd, libc::POLLIN, deadline, "read")?;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(map_io(e, "read")),
            }
        }
    }

    fn write(&mut self, stream: Token, data: &[u8], blocking: bool) -> SutResult<usize> {
        let deadline = self.deadline();
        let mut written = 0;
        while written < data.len() {
            let s = self.stream(stream)?;
            match s.write(&data[written..]) {
                Ok(n) => {
                    written += n;
                    if !blocking {
                        break;
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if !blocking {
                        break;
                    }
                    let fd = s.as_raw_fd();
                    wait_for(fd, libc::POLLOUT, deadline, "write")?;
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(map_io(e, "write")),
            }
        }
        Ok(written)
    }

    fn shutdown(&mut self, stream: Token, how: Shutdown) -> SutResult<()> {
        let s = self.stream(stream)?;
        let how = match how {
            Shutdown::Read => std::net::Shutdown::Read,
            Shutdown::Write => std::net::Shutdown::Write,
        };
        s.shutdown(how).map_err(|e| map_io(e, "shutdown"))
    }

    fn close_stream(&mut self, stream: Token) {
        self.streams.remove(&stream);
    }

    fn acceptable(&mut self, listener: Token) -> bool {
        match self.listeners.get(&listener) {
            Some(l @ Listener::Listening(_)) => {
                poll_fd(l.fd(), libc::POLLIN, Duration::ZERO) & libc::POLLIN != 0
            }
            _ => false,
        }
    }

    fn readable(&mut self, stream: Token) -> bool {
        match self.streams.get(&stream) {
            Some(s) => {
                let ev = poll_fd(s.as_raw_fd(), libc::POLLIN, Duration::ZERO);
                ev & (libc::POLLIN | libc::POLLHUP | libc::POLLERR) != 0
            }
            None => false,
        }
    }

    fn writable(&mut self, stream: Token) -> bool {
        match self.streams.get(&stream) {
            Some(s) => poll_fd(s.as_raw_fd(), libc::POLLOUT, Duration::ZERO) & libc::POLLOUT != 0,
            None => false,
        }
    }

    fn arm_watchdog(&mut self, deadline: Option<Instant>) {
        self.deadline = deadline;
    }

    fn settle(&mut self) {
        std::thread::sleep(self.settle_delay);
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }

    fn close_all(&mut self) {
        // Abortive close so torn-down tests leave no TIME_WAIT behind.
        for s in self.streams.values() {
            let _ = SockRef::from(s).set_linger(Some(Duration::ZERO));
        }
        self.streams.clear();
        self.listeners.clear();
    }
}
