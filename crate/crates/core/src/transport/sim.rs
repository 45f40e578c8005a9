//! Deterministic discrete-event network with a latency/bandwidth model and a
//! virtual clock. All nodes live in one process; a single driver advances
//! time by popping the next delivery or wakeup.
//!
//! A sender's outgoing link carries one frame at a time: a frame departs once
//! the previous one from the same node has been serialized, so delivery is
//! `depart + latency + payload_len / bandwidth`.

use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Capture, Frame, Mailbox, MatchKey, Port, TransportError, DEFAULT_MAX_FRAME};
use crate::graph::NodeId;

#[derive(Clone, Debug, PartialEq)]
pub struct NetModel {
    pub latency_us: f64,
    /// Bytes per microsecond.
    pub bandwidth: f64,
    pub seed: u64,
    /// Uniform extra delay in `[0, jitter_us)` drawn from the seeded RNG.
    pub jitter_us: f64,
}

impl NetModel {
    pub fn new(latency_us: f64, bandwidth: f64, seed: u64) -> Self {
        assert!(latency_us >= 0.0 && bandwidth > 0.0);
        NetModel { latency_us, bandwidth, seed, jitter_us: 0.0 }
    }

    pub fn delivery_delay(&self, payload_len: usize) -> f64 {
        self.latency_us + payload_len as f64 / self.bandwidth
    }
}

#[derive(Debug)]
enum Item {
    Deliver { dst: NodeId, frame: Frame },
    Wakeup { node: NodeId },
}

struct Pending {
    at: f64,
    seq: u64,
    item: Item,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> Ordering {
        self.at.total_cmp(&o.at).then(self.seq.cmp(&o.seq))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Advance {
    /// Nothing left to deliver.
    Idle,
    Delivered { at_us: f64, dst: NodeId, origin: u16, tag: u64 },
    Woke { at_us: f64, node: NodeId },
}

struct State {
    now: f64,
    seq: u64,
    queue: BinaryHeap<Reverse<Pending>>,
    last_on_key: BTreeMap<(u16, MatchKey), f64>,
    /// Wakeups already queued, by node and time bits.
    wakeups: BTreeSet<(u16, u64)>,
    cpu_free: Vec<f64>,
    link_free: Vec<f64>,
    dead: Vec<bool>,
    rng: ChaCha8Rng,
    frames_sent: u64,
    bytes_sent: u64,
}

pub struct SimNet {
    model: NetModel,
    mailboxes: Vec<Mailbox>,
    state: RefCell<State>,
    capture: Option<Capture>,
}

impl SimNet {
    pub fn new(nodes: usize, model: NetModel) -> Rc<Self> {
        Self::with_capture(nodes, model, None)
    }

    pub fn with_capture(nodes: usize, model: NetModel, capture: Option<Capture>) -> Rc<Self> {
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Rc::new(SimNet {
            model,
            mailboxes: (0..nodes).map(|_| Mailbox::new()).collect(),
            state: RefCell::new(State {
                now: 0.0,
                seq: 0,
                queue: BinaryHeap::new(),
                last_on_key: BTreeMap::new(),
                wakeups: BTreeSet::new(),
                cpu_free: vec![0.0; nodes],
                link_free: vec![0.0; nodes],
                dead: vec![false; nodes],
                rng,
                frames_sent: 0,
                bytes_sent: 0,
            }),
            capture,
        })
    }

    pub fn port(self: &Rc<Self>, node: NodeId) -> SimPort {
        SimPort { net: self.clone(), node }
    }

    pub fn model(&self) -> &NetModel {
        &self.model
    }

    pub fn now(&self) -> f64 {
        self.state.borrow().now
    }

    pub fn nodes(&self) -> usize {
        self.mailboxes.len()
    }

    pub fn mailbox(&self, node: NodeId) -> &Mailbox {
        &self.mailboxes[node.index()]
    }

    pub fn kill(&self, node: NodeId) {
        self.state.borrow_mut().dead[node.index()] = true;
    }

    pub fn is_alive(&self, node: NodeId) -> bool {
        !self.state.borrow().dead[node.index()]
    }

    pub fn frames_sent(&self) -> u64 {
        self.state.borrow().frames_sent
    }

    pub fn bytes_sent(&self) -> u64 {
        self.state.borrow().bytes_sent
    }

    pub fn has_pending(&self) -> bool {
        !self.state.borrow().queue.is_empty()
    }

    pub fn send(&self, src: NodeId, dst: NodeId, frame: Frame) -> Result<f64, TransportError> {
        let mut st = self.state.borrow_mut();
        if st.dead[dst.index()] {
            return Err(TransportError::PeerDown(dst));
        }
        if let Some(c) = &self.capture {
            c.record(&frame);
        }
        let depart = st.now.max(st.cpu_free[src.index()]).max(st.link_free[src.index()]);
        st.link_free[src.index()] = depart + frame.payload.len() as f64 / self.model.bandwidth;
        let jitter = if self.model.jitter_us > 0.0 { st.rng.gen_range(0.0..self.model.jitter_us) } else { 0.0 };
        let mut at = depart + self.model.delivery_delay(frame.payload.len()) + jitter;
        let fifo = st.last_on_key.entry((dst.0, frame.key())).or_insert(0.0);
        at = at.max(*fifo);
        *fifo = at;
        st.frames_sent += 1;
        st.bytes_sent += frame.payload.len() as u64;
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse(Pending { at, seq, item: Item::Deliver { dst, frame } }));
        Ok(at)
    }

    pub fn schedule_wakeup(&self, node: NodeId, at: f64) {
        let mut st = self.state.borrow_mut();
        let at = at.max(st.now);
        if !st.wakeups.insert((node.0, at.to_bits())) {
            return;
        }
        let seq = st.seq;
        st.seq += 1;
        st.queue.push(Reverse(Pending { at, seq, item: Item::Wakeup { node } }));
    }

    pub fn charge_cpu(&self, node: NodeId, us: f64) {
        let mut st = self.state.borrow_mut();
        let free = st.cpu_free[node.index()].max(st.now);
        st.cpu_free[node.index()] = free + us;
    }

    pub fn cpu_free_at(&self, node: NodeId) -> f64 {
        self.state.borrow().cpu_free[node.index()]
    }

    /// Jump the clock forward without delivering anything.
    pub fn advance_to(&self, at: f64) {
        let mut st = self.state.borrow_mut();
        st.now = st.now.max(at);
    }

    /// Move the clock to the next pending item and apply it.
    pub fn advance(&self) -> Advance {
        let next = self.state.borrow_mut().queue.pop();
        let Some(Reverse(p)) = next else {
            return Advance::Idle;
        };
        {
            let mut st = self.state.borrow_mut();
            st.now = st.now.max(p.at);
        }
        match p.item {
            Item::Deliver { dst, frame } => {
                let (origin, tag) = (frame.origin, frame.tag);
                if self.is_alive(dst) {
                    self.mailboxes[dst.index()].deliver(frame);
                }
                Advance::Delivered { at_us: p.at, dst, origin, tag }
            }
            Item::Wakeup { node } => {
                self.state.borrow_mut().wakeups.remove(&(node.0, p.at.to_bits()));
                Advance::Woke { at_us: p.at, node }
            }
        }
    }
}

#[derive(Clone)]
pub struct SimPort {
    net: Rc<SimNet>,
    node: NodeId,
}

impl SimPort {
    pub fn net(&self) -> &Rc<SimNet> {
        &self.net
    }
}

impl Port for SimPort {
    fn node(&self) -> NodeId {
        self.node
    }

    fn send(&self, dst: NodeId, frame: Frame) -> Result<(), TransportError> {
        self.net.send(self.node, dst, frame).map(|_| ())
    }

    fn mailbox(&self) -> &Mailbox {
        self.net.mailbox(self.node)
    }

    fn is_alive(&self, node: NodeId) -> bool {
        self.net.is_alive(node)
    }

    fn now_us(&self) -> f64 {
        self.net.now()
    }

    fn max_frame(&self) -> usize {
        DEFAULT_MAX_FRAME
    }

    fn charge_cpu(&self, us: f64) {
        self.net.charge_cpu(self.node, us)
    }

    fn cpu_idle(&self) -> bool {
        self.net.cpu_free_at(self.node) <= self.net.now()
    }

    fn cpu_free_at(&self) -> f64 {
        self.net.cpu_free_at(self.node).max(self.net.now())
    }

    fn request_wakeup(&self, at_us: f64) {
        self.net.schedule_wakeup(self.node, at_us)
    }

    fn virtual_time(&self) -> bool {
        true
    }
}
