//! Multi-process TCP transport.
//!
//! Every process owns one listener. Outgoing frames to a peer use a single
//! connection dialed on first use, so each ordered node pair has exactly one
//! stream and per-key FIFO order follows from TCP ordering. The first frame on
//! every connection is a HELLO naming the sender's rank and listen address.
//! Workers HELLO the head on startup; once all have arrived the head sends a
//! PEERS table so workers can dial each other directly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{BlockingPort, Capture, Frame, Mailbox, Port, TransportError, DEFAULT_MAX_FRAME};
use crate::graph::NodeId;

const CONTROL_TAG: u64 = u64::MAX;
const CONTROL_CHANNEL: u16 = u16::MAX;
const HELLO: u8 = 0xF0;
const PEERS: u8 = 0xF1;

struct Inner {
    node: NodeId,
    listen: SocketAddr,
    mailbox: Mailbox,
    peers: Mutex<BTreeMap<u16, SocketAddr>>,
    peers_changed: Condvar,
    ready: AtomicBool,
    conns: Mutex<HashMap<u16, Arc<Mutex<BufWriter<TcpStream>>>>>,
    down: Mutex<HashSet<u16>>,
    start: Instant,
    max_frame: usize,
    capture: Option<Capture>,
}

#[derive(Clone)]
pub struct TcpPort {
    inner: Arc<Inner>,
}

fn control(origin: NodeId, etype: u8, payload: Vec<u8>) -> Frame {
    Frame { origin: origin.0, tag: CONTROL_TAG, channel: CONTROL_CHANNEL, etype, payload }
}

impl TcpPort {
    fn bind(node: NodeId, addr: &str, capture: Option<Capture>) -> Result<TcpPort, TransportError> {
        let listener = TcpListener::bind(addr)?;
        let listen = listener.local_addr()?;
        let port = TcpPort {
            inner: Arc::new(Inner {
                node,
                listen,
                mailbox: Mailbox::new(),
                peers: Mutex::new(BTreeMap::new()),
                peers_changed: Condvar::new(),
                ready: AtomicBool::new(false),
                conns: Mutex::new(HashMap::new()),
                down: Mutex::new(HashSet::new()),
                start: Instant::now(),
                max_frame: DEFAULT_MAX_FRAME,
                capture,
            }),
        };
        let p = port.clone();
        thread::Builder::new().name(format!("tm-accept-{}", node.0)).spawn(move || p.accept_loop(listener))?;
        Ok(port)
    }

    /// Bind the head's listener (use port 0 for an ephemeral port).
    pub fn bind_head(addr: &str, capture: Option<Capture>) -> Result<TcpPort, TransportError> {
        Self::bind(NodeId::HEAD, addr, capture)
    }

    /// Start a worker and register it with the head; returns once the peer
    /// table has arrived.
    pub fn connect_worker(
        rank: u16,
        head: SocketAddr,
        timeout: Duration,
        capture: Option<Capture>,
    ) -> Result<TcpPort, TransportError> {
        assert!(rank > 0, "rank 0 is the head");
        let bind_ip = if head.ip().is_loopback() { "127.0.0.1:0".to_string() } else { "0.0.0.0:0".to_string() };
        let port = Self::bind(NodeId(rank), &bind_ip, capture)?;
        port.inner.peers.lock().unwrap().insert(0, head);
        port.connection(NodeId::HEAD)?;
        let deadline = Instant::now() + timeout;
        let mut peers = port.inner.peers.lock().unwrap();
        while !port.inner.ready.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            peers = port.inner.peers_changed.wait_timeout(peers, deadline - now).unwrap().0;
        }
        drop(peers);
        Ok(port)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.listen
    }

    /// Head only: block until `workers` ranks have said HELLO, then share
    /// the peer table with all of them.
    pub fn wait_for_workers(&self, workers: usize, timeout: Duration) -> Result<(), TransportError> {
        let deadline = Instant::now() + timeout;
        let mut peers = self.inner.peers.lock().unwrap();
        while peers.len() < workers {
            let now = Instant::now();
            if now >= deadline {
                return Err(TransportError::Timeout);
            }
            peers = self.inner.peers_changed.wait_timeout(peers, deadline - now).unwrap().0;
        }
        let mut table = format!("0 {}\n", self.inner.listen);
        for (rank, addr) in peers.iter() {
            table.push_str(&format!("{rank} {addr}\n"));
        }
        let ranks: Vec<u16> = peers.keys().copied().collect();
        drop(peers);
        for r in ranks {
            self.send_raw(NodeId(r), control(self.inner.node, PEERS, table.clone().into_bytes()))?;
        }
        Ok(())
    }

    pub fn peer_count(&self) -> usize {
        self.inner.peers.lock().unwrap().len()
    }

    fn accept_loop(&self, listener: TcpListener) {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let p = self.clone();
            let _ = thread::Builder::new().name(format!("tm-read-{}", self.inner.node.0)).spawn(move || p.read_loop(stream));
        }
    }

    fn read_loop(&self, stream: TcpStream) {
        let mut r = BufReader::with_capacity(1 << 16, stream);
        let mut peer: Option<u16> = None;
        loop {
            match Frame::read_from(&mut r, self.inner.max_frame) {
                Ok(Some(f)) if f.tag == CONTROL_TAG && f.channel == CONTROL_CHANNEL => {
                    if f.etype == HELLO {
                        peer = Some(f.origin);
                    }
                    self.on_control(f);
                }
                Ok(Some(f)) => self.inner.mailbox.deliver(f),
                Ok(None) => break,
                Err(e) => {
                    log::warn!("node {}: dropping connection from {:?}: {e}", self.inner.node, peer);
                    break;
                }
            }
        }
        if let Some(p) = peer {
            self.inner.down.lock().unwrap().insert(p);
            if p == 0 {
                self.inner.mailbox.close();
            }
        }
    }

    fn on_control(&self, f: Frame) {
        let text = String::from_utf8_lossy(&f.payload);
        let mut peers = self.inner.peers.lock().unwrap();
        match f.etype {
            HELLO => {
                if let Ok(addr) = text.trim().parse() {
                    if self.inner.node == NodeId::HEAD {
                        peers.insert(f.origin, addr);
                    }
                }
            }
            PEERS => {
                for line in text.lines() {
                    let mut it = line.split_whitespace();
                    if let (Some(r), Some(a)) = (it.next(), it.next()) {
                        if let (Ok(r), Ok(a)) = (r.parse::<u16>(), a.parse()) {
                            if r != self.inner.node.0 {
                                peers.insert(r, a);
                            }
                        }
                    }
                }
                self.inner.ready.store(true, Ordering::SeqCst);
            }
            other => log::warn!("unknown control frame type {other:#x}"),
        }
        drop(peers);
        self.inner.peers_changed.notify_all();
    }

    fn connection(&self, dst: NodeId) -> Result<Arc<Mutex<BufWriter<TcpStream>>>, TransportError> {
        let mut conns = self.inner.conns.lock().unwrap();
        if let Some(c) = conns.get(&dst.0) {
            return Ok(c.clone());
        }
        let addr = *self.inner.peers.lock().unwrap().get(&dst.0).ok_or(TransportError::PeerDown(dst))?;
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut w = BufWriter::with_capacity(1 << 16, stream);
        control(self.inner.node, HELLO, self.inner.listen.to_string().into_bytes()).write_to(&mut w)?;
        w.flush()?;
        let c = Arc::new(Mutex::new(w));
        conns.insert(dst.0, c.clone());
        Ok(c)
    }

    fn send_raw(&self, dst: NodeId, frame: Frame) -> Result<(), TransportError> {
        let conn = self.connection(dst)?;
        let mut w = conn.lock().unwrap();
        let res = frame.write_to(&mut *w).and_then(|_| w.flush());
        if res.is_err() {
            self.inner.down.lock().unwrap().insert(dst.0);
            self.inner.conns.lock().unwrap().remove(&dst.0);
            return Err(TransportError::PeerDown(dst));
        }
        Ok(())
    }
}

impl Port for TcpPort {
    fn node(&self) -> NodeId {
        self.inner.node
    }

    fn mailbox(&self) -> &Mailbox {
        &self.inner.mailbox
    }

    fn send(&self, dst: NodeId, frame: Frame) -> Result<(), TransportError> {
        if self.inner.down.lock().unwrap().contains(&dst.0) {
            return Err(TransportError::PeerDown(dst));
        }
        if frame.encoded_len() > self.inner.max_frame {
            return Err(super::FrameError::TooLarge(frame.encoded_len(), self.inner.max_frame).into());
        }
        if dst == self.inner.node {
            self.inner.mailbox.deliver(frame);
            return Ok(());
        }
        if let Some(c) = &self.inner.capture {
            c.record(&frame);
        }
        self.send_raw(dst, frame)
    }

    fn is_alive(&self, node: NodeId) -> bool {
        !self.inner.down.lock().unwrap().contains(&node.0)
    }

    fn now_us(&self) -> f64 {
        self.inner.start.elapsed().as_secs_f64() * 1e6
    }

    fn max_frame(&self) -> usize {
        self.inner.max_frame
    }
}

impl BlockingPort for TcpPort {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MatchKey;

    #[test]
    fn three_node_mesh_over_loopback() {
        let head = TcpPort::bind_head("127.0.0.1:0", None).unwrap();
        let addr = head.local_addr();
        let workers: Vec<_> = (1..=2u16)
            .map(|r| thread::spawn(move || TcpPort::connect_worker(r, addr, Duration::from_secs(10), None).unwrap()))
            .collect();
        head.wait_for_workers(2, Duration::from_secs(10)).unwrap();
        let w: Vec<TcpPort> = workers.into_iter().map(|h| h.join().unwrap()).collect();

        let big = vec![0xab; 3 << 20];
        w[0].send(NodeId(2), Frame { origin: 1, tag: 9, channel: 1, etype: 5, payload: big.clone() }).unwrap();
        w[0].send(NodeId(2), Frame { origin: 1, tag: 9, channel: 1, etype: 5, payload: vec![1] }).unwrap();
        head.send(NodeId(1), Frame { origin: 0, tag: 0, channel: 0, etype: 6, payload: vec![2] }).unwrap();

        let t = Some(Duration::from_secs(10));
        assert_eq!(w[1].recv_match(MatchKey::new(1, 9, 1), t).unwrap().payload, big);
        assert_eq!(w[1].recv_match(MatchKey::new(1, 9, 1), t).unwrap().payload, vec![1]);
        assert_eq!(w[0].recv_notification(t).unwrap().payload, vec![2]);
    }
}
