//! Message delivery between logical parties.
//!
//! The session drives rounds: every party's outgoing messages for a phase
//! are sent, then each receiver collects the number it expects. A transport
//! only moves messages; it never inspects values.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::message::{Message, PartyId};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("{party} received {got} of {expected} messages before the round deadline")]
    Timeout {
        party: PartyId,
        got: usize,
        expected: usize,
    },
    #[error("no endpoint for {0}")]
    UnknownParty(PartyId),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait Transport {
    /// Delivers `msg` to `msg.to`, which must be a single party.
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;

    /// Waits for exactly `count` messages addressed to `party`, in arrival order.
    fn collect(
        &mut self,
        party: PartyId,
        count: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, TransportError>;

    /// Drops everything still in flight. Called before a round is retried.
    fn reset(&mut self);

    fn name(&self) -> &'static str;
}

/// Single-threaded mailboxes. Delivery order equals send order.
#[derive(Debug, Default)]
pub struct InProcTransport {
    mailboxes: BTreeMap<PartyId, VecDeque<Message>>,
}

impl InProcTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InProcTransport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.mailboxes
            .entry(msg.to)
            .or_default()
            .push_back(msg.clone());
        Ok(())
    }

    fn collect(
        &mut self,
        party: PartyId,
        count: usize,
        _timeout: Duration,
    ) -> Result<Vec<Message>, TransportError> {
        let queue = self.mailboxes.entry(party).or_default();
        if queue.len() < count {
            return Err(TransportError::Timeout {
                party,
                got: queue.len(),
                expected: count,
            });
        }
        Ok(queue.drain(..count).collect())
    }

    fn reset(&mut self) {
        self.mailboxes.clear();
    }

    fn name(&self) -> &'static str {
        "inproc"
    }
}

/// One loopback listener per party. Each sender keeps one connection per
/// receiver and writes NDJSON lines; reader threads parse lines into the
/// receiver's channel. Arrival order across senders is not fixed, so the
/// session sorts what it collects.
pub struct TcpTransport {
    endpoints: BTreeMap<PartyId, SocketAddr>,
    inboxes: BTreeMap<PartyId, Receiver<Message>>,
    stash: BTreeMap<PartyId, Vec<Message>>,
    connections: HashMap<(PartyId, PartyId), BufWriter<TcpStream>>,
    stop: Arc<AtomicBool>,
}

impl TcpTransport {
    /// Binds a listener for every party. With port 0 in `listen` each
    /// listener gets an ephemeral port; otherwise ports are assigned
    /// consecutively from the given one.
    pub fn bind(parties: &[PartyId], listen: SocketAddr) -> Result<Self, TransportError> {
        let stop = Arc::new(AtomicBool::new(false));
        let mut endpoints = BTreeMap::new();
        let mut inboxes = BTreeMap::new();
        for (k, &party) in parties.iter().enumerate() {
            let mut addr = listen;
            if listen.port() != 0 {
                let port = listen.port() as usize + k;
                let port = u16::try_from(port).map_err(|_| TransportError::Io {
                    context: format!("port for {party}"),
                    source: std::io::Error::other("port range exhausted"),
                })?;
                addr.set_port(port);
            }
            let listener = TcpListener::bind(addr).map_err(|source| TransportError::Io {
                context: format!("bind {addr} for {party}"),
                source,
            })?;
            let local = listener.local_addr().map_err(|source| TransportError::Io {
                context: format!("local address of {party}"),
                source,
            })?;
            let (tx, rx) = channel();
            spawn_acceptor(listener, tx, Arc::clone(&stop));
            endpoints.insert(party, local);
            inboxes.insert(party, rx);
        }
        Ok(TcpTransport {
            endpoints,
            inboxes,
            stash: BTreeMap::new(),
            connections: HashMap::new(),
            stop,
        })
    }

    pub fn endpoint(&self, party: PartyId) -> Option<SocketAddr> {
        self.endpoints.get(&party).copied()
    }
}

fn spawn_acceptor(listener: TcpListener, tx: Sender<Message>, stop: Arc<AtomicBool>) {
    thread::spawn(move || {
        for stream in listener.incoming() {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let tx = tx.clone();
            thread::spawn(move || {
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { break };
                    match serde_json::from_str::<Message>(&line) {
                        Ok(m) => {
                            if tx.send(m).is_err() {
                                break;
                            }
                        }
                        Err(e) => log::warn!("dropping malformed frame: {e}"),
                    }
                }
            });
        }
    });
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let key = (msg.from, msg.to);
        if !self.connections.contains_key(&key) {
            let addr = *self
                .endpoints
                .get(&msg.to)
                .ok_or(TransportError::UnknownParty(msg.to))?;
            let stream = TcpStream::connect(addr).map_err(|source| TransportError::Io {
                context: format!("connect {} -> {}", msg.from, msg.to),
                source,
            })?;
            // Frames are small and latency-bound.
            let _ = stream.set_nodelay(true);
            self.connections.insert(key, BufWriter::new(stream));
        }
        let conn = self.connections.get_mut(&key).expect("inserted above");
        writeln!(conn, "{}", msg.to_ndjson())
            .and_then(|_| conn.flush())
            .map_err(|source| TransportError::Io {
                context: format!("send {} -> {}", msg.from, msg.to),
                source,
            })
    }

    fn collect(
        &mut self,
        party: PartyId,
        count: usize,
        timeout: Duration,
    ) -> Result<Vec<Message>, TransportError> {
        let rx = self
            .inboxes
            .get(&party)
            .ok_or(TransportError::UnknownParty(party))?;
        let got = self.stash.entry(party).or_default();
        let deadline = Instant::now() + timeout;
        while got.len() < count {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(m) => got.push(m),
                Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => {
                    return Err(TransportError::Timeout {
                        party,
                        got: got.len(),
                        expected: count,
                    })
                }
            }
        }
        Ok(got.drain(..count).collect())
    }

    fn reset(&mut self) {
        self.stash.clear();
        for rx in self.inboxes.values() {
            while rx.try_recv().is_ok() {}
        }
    }

    fn name(&self) -> &'static str {
        "tcp"
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for conn in self.connections.values_mut() {
            let _ = conn.get_ref().shutdown(Shutdown::Both);
        }
        self.stop.store(true, Ordering::Relaxed);
        // Wake every acceptor so it sees the flag.
        for addr in self.endpoints.values() {
            let _ = TcpStream::connect(addr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(t: &mut dyn Transport) {
        let a = Message::share(0, 1, 1, vec![10]);
        let b = Message::share(0, 2, 1, vec![20]);
        t.send(&a).unwrap();
        t.send(&b).unwrap();
        let mut got = t
            .collect(PartyId::Cloud(1), 2, Duration::from_secs(5))
            .unwrap();
        got.sort_by_key(|m| m.from);
        assert_eq!(got, vec![a.clone(), b]);
        assert!(matches!(
            t.collect(PartyId::Cloud(1), 1, Duration::from_millis(50)),
            Err(TransportError::Timeout {
                got: 0,
                expected: 1,
                ..
            })
        ));
        t.send(&a).unwrap();
        if t.name() == "tcp" {
            // let the frame land before it is discarded
            thread::sleep(Duration::from_millis(50));
        }
        t.reset();
        assert!(t
            .collect(PartyId::Cloud(1), 1, Duration::from_millis(50))
            .is_err());
    }

    #[test]
    fn inproc_delivers_in_order() {
        exercise(&mut InProcTransport::new());
    }

    #[test]
    fn tcp_delivers_over_loopback() {
        let parties = [PartyId::Bus(1), PartyId::Bus(2), PartyId::Cloud(1)];
        let mut t = TcpTransport::bind(&parties, "127.0.0.1:0".parse().unwrap()).unwrap();
        assert!(t.endpoint(PartyId::Cloud(1)).is_some());
        exercise(&mut t);
        assert!(matches!(
            t.send(&Message::share(0, 1, 9, vec![])),
            Err(TransportError::UnknownParty(PartyId::Cloud(9)))
        ));
    }
}
