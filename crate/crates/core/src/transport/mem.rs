//! In-process threaded transport: each node is a mailbox in shared memory.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use super::{BlockingPort, Capture, Frame, Mailbox, Port, TransportError, DEFAULT_MAX_FRAME};
use crate::graph::NodeId;

pub struct MemNet {
    mailboxes: Vec<Mailbox>,
    alive: Vec<AtomicBool>,
    start: Instant,
    max_frame: usize,
    capture: Option<Capture>,
}

impl MemNet {
    pub fn new(nodes: usize) -> Arc<Self> {
        Self::with_options(nodes, DEFAULT_MAX_FRAME, None)
    }

    pub fn with_options(nodes: usize, max_frame: usize, capture: Option<Capture>) -> Arc<Self> {
        Arc::new(MemNet {
            mailboxes: (0..nodes).map(|_| Mailbox::new()).collect(),
            alive: (0..nodes).map(|_| AtomicBool::new(true)).collect(),
            start: Instant::now(),
            max_frame,
            capture,
        })
    }

    pub fn port(self: &Arc<Self>, node: NodeId) -> MemPort {
        MemPort { net: self.clone(), node }
    }

    pub fn nodes(&self) -> usize {
        self.mailboxes.len()
    }

    /// Mark a node dead: later sends to it fail and its mailbox closes.
    pub fn kill(&self, node: NodeId) {
        self.alive[node.index()].store(false, Ordering::SeqCst);
        self.mailboxes[node.index()].close();
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        self.alive.get(node.index()).is_some_and(|a| a.load(Ordering::SeqCst))
    }
}

#[derive(Clone)]
pub struct MemPort {
    net: Arc<MemNet>,
    node: NodeId,
}

impl MemPort {
    pub fn net(&self) -> &Arc<MemNet> {
        &self.net
    }
}

impl Port for MemPort {
    fn node(&self) -> NodeId {
        self.node
    }

    fn mailbox(&self) -> &Mailbox {
        &self.net.mailboxes[self.node.index()]
    }

    fn send(&self, dst: NodeId, frame: Frame) -> Result<(), TransportError> {
        if !self.net.is_alive(dst) {
            return Err(TransportError::PeerDown(dst));
        }
        if frame.encoded_len() > self.net.max_frame {
            return Err(super::FrameError::TooLarge(frame.encoded_len(), self.net.max_frame).into());
        }
        if let Some(c) = &self.net.capture {
            c.record(&frame);
        }
        self.net.mailboxes[dst.index()].deliver(frame);
        Ok(())
    }

    fn is_alive(&self, node: NodeId) -> bool {
        self.net.is_alive(node)
    }

    fn now_us(&self) -> f64 {
        self.net.start.elapsed().as_secs_f64() * 1e6
    }

    fn max_frame(&self) -> usize {
        self.net.max_frame
    }
}

impl BlockingPort for MemPort {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MatchKey;

    #[test]
    fn send_then_recv_round_trip() {
        let net = MemNet::new(2);
        let a = net.port(NodeId(0));
        let b = net.port(NodeId(1));
        let f = Frame { origin: 0, tag: 3, channel: 3, etype: 2, payload: b"hello".to_vec() };
        a.send(NodeId(1), f.clone()).unwrap();
        assert_eq!(b.try_recv(MatchKey::new(0, 3, 3)), Some(f));
        assert_eq!(b.try_recv(MatchKey::new(0, 3, 3)), None);
    }

    #[test]
    fn dead_peer_rejects() {
        let net = MemNet::new(2);
        net.kill(NodeId(1));
        let err = net.port(NodeId(0)).send(NodeId(1), Frame { origin: 0, tag: 1, channel: 1, etype: 0, payload: vec![] });
        assert!(matches!(err, Err(TransportError::PeerDown(NodeId(1)))));
    }
}
