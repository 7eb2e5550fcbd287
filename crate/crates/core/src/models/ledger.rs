//! Per-connection byte accounting used as the test oracle.
//!
//! The ledger only knows what the models did: bytes handed to `write` and
//! bytes returned by `read`, plus which ends shut down or closed. Network
//! latency means a reader may legitimately see less than was written, so
//! every check is one-sided: a read may never return more than the peer
//! wrote, end-of-stream and resets need a peer that actually shut down or
//! closed, and readiness needs data behind it.

use std::collections::BTreeMap;
use std::fmt;

use crate::sut::Endpoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Client = 0,
    Server = 1,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }

    fn i(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Client => "client",
            Side::Server => "server",
        })
    }
}

/// Index of a connection in the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LinkId(pub usize);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link {}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRecord {
    pub client_endpoint: Endpoint,
    pub accepted: bool,
    /// The listener closed before this connection was accepted.
    pub orphaned: bool,
    pub wrote: [u64; 2],
    pub read: [u64; 2],
    pub output_shut: [bool; 2],
    pub input_shut: [bool; 2],
    pub closed: [bool; 2],
}

impl LinkRecord {
    pub fn wrote(&self, side: Side) -> u64 {
        self.wrote[side.i()]
    }

    pub fn read(&self, side: Side) -> u64 {
        self.read[side.i()]
    }

    pub fn output_shut(&self, side: Side) -> bool {
        self.output_shut[side.i()]
    }

    pub fn closed(&self, side: Side) -> bool {
        self.closed[side.i()]
    }

    /// The peer of `side` can no longer send: it shut its output, closed,
    /// or (for a client) was never accepted before the listener went away.
    fn peer_finished_sending(&self, side: Side) -> bool {
        let p = side.peer().i();
        self.output_shut[p] || self.closed[p] || (side == Side::Client && self.orphaned)
    }

    /// A peer that shut down both directions also answers new data with
    /// a reset.
    fn peer_gone(&self, side: Side) -> bool {
        let p = side.peer().i();
        self.closed[p]
            || (self.input_shut[p] && self.output_shut[p])
            || (side == Side::Client && self.orphaned)
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleLedger {
    links: Vec<LinkRecord>,
    by_client: BTreeMap<Endpoint, LinkId>,
}

impl OracleLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forgets everything; called between tests.
    pub fn reset(&mut self) {
        self.links.clear();
        self.by_client.clear();
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn link(&self, id: LinkId) -> &LinkRecord {
        &self.links[id.0]
    }

    pub fn links(&self) -> impl Iterator<Item = (LinkId, &LinkRecord)> {
        self.links.iter().enumerate().map(|(i, l)| (LinkId(i), l))
    }

    /// Records a client connection, keyed by the client's local endpoint.
    pub fn open_link(&mut self, client_endpoint: Endpoint) -> Result<LinkId, String> {
        // An endpoint may come back once its previous owner has closed.
        let live = self
            .by_client
            .get(&client_endpoint)
            .is_some_and(|old| !self.links[old.0].closed[Side::Client.i()]);
        if live {
            return Err(format!(
                "oracle: two live clients share the endpoint {client_endpoint}"
            ));
        }
        let id = LinkId(self.links.len());
        self.links.push(LinkRecord {
            client_endpoint,
            accepted: false,
            orphaned: false,
            wrote: [0; 2],
            read: [0; 2],
            output_shut: [false; 2],
            input_shut: [false; 2],
            closed: [false; 2],
        });
        self.by_client.insert(client_endpoint, id);
        Ok(id)
    }

    /// Pairs an accepted connection with the client that opened it.
    pub fn accept(&mut self, peer: Endpoint) -> Result<LinkId, String> {
        let id = *self.by_client.get(&peer).ok_or_else(|| {
            format!("oracle: accepted a connection from {peer} that no client opened")
        })?;
        let link = &mut self.links[id.0];
        if link.accepted {
            return Err(format!("oracle: connection from {peer} accepted twice"));
        }
        if link.orphaned {
            return Err(format!(
                "oracle: connection from {peer} accepted after its listener closed"
            ));
        }
        link.accepted = true;
        Ok(id)
    }

    /// Connections opened by clients and not yet accepted.
    pub fn pending(&self) -> usize {
        self.links
            .iter()
            .filter(|l| !l.accepted && !l.orphaned)
            .count()
    }

    /// The listener closed: every pending connection is dead.
    pub fn orphan_pending(&mut self) {
        for l in &mut self.links {
            if !l.accepted {
                l.orphaned = true;
            }
        }
    }

    pub fn record_write(&mut self, id: LinkId, side: Side, n: usize) {
        self.links[id.0].wrote[side.i()] += n as u64;
    }

    /// Adds `n` bytes read by `side`; fails if that exceeds what the peer
    /// wrote.
    pub fn record_read(&mut self, id: LinkId, side: Side, n: usize) -> Result<(), String> {
        let link = &mut self.links[id.0];
        let total = link.read[side.i()] + n as u64;
        let available = link.wrote[side.peer().i()];
        if total > available {
            return Err(format!(
                "oracle: {side} read exceeds ledger on {id}: {total} bytes read in total, \
                 {} wrote only {available}",
                side.peer()
            ));
        }
        link.read[side.i()] = total;
        Ok(())
    }

    /// `side` saw end-of-stream.
    pub fn check_eof(&self, id: LinkId, side: Side) -> Result<(), String> {
        let link = &self.links[id.0];
        if link.peer_finished_sending(side) {
            Ok(())
        } else {
            Err(format!(
                "oracle: {side} saw end-of-stream on {id} but the {} neither shut its output \
                 nor closed",
                side.peer()
            ))
        }
    }

    /// `side` saw a connection reset.
    pub fn check_reset(&self, id: LinkId, side: Side) -> Result<(), String> {
        let link = &self.links[id.0];
        if link.peer_gone(side) {
            Ok(())
        } else {
            Err(format!(
                "oracle: {side} saw a connection reset on {id} but the {} is still open",
                side.peer()
            ))
        }
    }

    pub fn record_output_shutdown(&mut self, id: LinkId, side: Side) {
        self.links[id.0].output_shut[side.i()] = true;
    }

    pub fn record_input_shutdown(&mut self, id: LinkId, side: Side) {
        self.links[id.0].input_shut[side.i()] = true;
    }

    pub fn record_close(&mut self, id: LinkId, side: Side) {
        self.links[id.0].closed[side.i()] = true;
    }

    /// Checks the ledger's own invariant on every connection.
    pub fn check_all(&self) -> Result<(), String> {
        for (id, l) in self.links() {
            for side in [Side::Client, Side::Server] {
                if l.read(side) > l.wrote(side.peer()) {
                    return Err(format!("oracle: {side} over-read on {id}"));
                }
            }
        }
        Ok(())
    }
}
