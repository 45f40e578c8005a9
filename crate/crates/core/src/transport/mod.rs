//! Message layer beneath the event system.
//!
//! Every transport delivers [`Frame`]s into a per-node [`Mailbox`] that
//! matches on `(origin, tag, channel)`. Notifications travel on the reserved
//! key `(tag 0, channel 0)` and are queued separately, FIFO across origins.

pub mod frame;
pub mod mem;
pub mod sim;
pub mod tcp;

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use frame::{Frame, FrameError, MatchKey, DEFAULT_MAX_FRAME, HEADER_LEN};

use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer {0} is down")]
    PeerDown(NodeId),
    #[error("timed out waiting for a frame")]
    Timeout,
    #[error("mailbox closed")]
    Closed,
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Non-blocking view of one node's endpoint. Event handlers only use this
/// surface so they can run unchanged on the simulator and on real transports.
pub trait Port {
    fn node(&self) -> NodeId;
    fn mailbox(&self) -> &Mailbox;
    fn send(&self, dst: NodeId, frame: Frame) -> Result<(), TransportError>;
    fn try_recv(&self, key: MatchKey) -> Option<Frame> {
        self.mailbox().try_recv(key)
    }
    fn try_recv_notification(&self) -> Option<Frame> {
        self.mailbox().try_recv_notification()
    }
    /// Best-effort liveness of a peer.
    fn is_alive(&self, _node: NodeId) -> bool {
        true
    }
    /// Microseconds since the transport started (virtual on the simulator).
    fn now_us(&self) -> f64;
    fn max_frame(&self) -> usize {
        DEFAULT_MAX_FRAME
    }
    /// Account local CPU time; only the simulator models it.
    fn charge_cpu(&self, _us: f64) {}
    /// Whether the node's modelled CPU is free right now.
    fn cpu_idle(&self) -> bool {
        true
    }
    /// When the modelled CPU becomes free.
    fn cpu_free_at(&self) -> f64 {
        self.now_us()
    }
    /// Ask to be polled again no later than `at_us` (simulator only).
    fn request_wakeup(&self, _at_us: f64) {}
    /// True when compute is simulated rather than executed.
    fn virtual_time(&self) -> bool {
        false
    }
}

/// Thread-safe endpoint with blocking receive.
pub trait BlockingPort: Port + Send + Sync {
    fn recv_match(&self, key: MatchKey, timeout: Option<Duration>) -> Result<Frame, TransportError> {
        self.mailbox().recv(key, timeout)
    }

    fn recv_notification(&self, timeout: Option<Duration>) -> Result<Frame, TransportError> {
        self.mailbox().recv_notification(timeout)
    }
}

#[derive(Default)]
struct Inbox {
    by_key: HashMap<MatchKey, VecDeque<Frame>>,
    notifications: VecDeque<Frame>,
    generation: u64,
    closed: bool,
    dirty: Option<Vec<MatchKey>>,
}

/// Receive-side frame store with exact-key matching.
#[derive(Default)]
pub struct Mailbox {
    inner: Mutex<Inbox>,
    cond: Condvar,
}

pub fn is_notification_key(tag: u64, channel: u16) -> bool {
    tag == 0 && channel == 0
}

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn deliver(&self, frame: Frame) {
        let mut g = self.inner.lock().unwrap();
        if is_notification_key(frame.tag, frame.channel) {
            g.notifications.push_back(frame);
        } else {
            if let Some(d) = g.dirty.as_mut() {
                d.push(frame.key());
            }
            g.by_key.entry(frame.key()).or_default().push_back(frame);
        }
        g.generation += 1;
        drop(g);
        self.cond.notify_all();
    }

    pub fn try_recv(&self, key: MatchKey) -> Option<Frame> {
        let mut g = self.inner.lock().unwrap();
        let q = g.by_key.get_mut(&key)?;
        let f = q.pop_front();
        if q.is_empty() {
            g.by_key.remove(&key);
        }
        f
    }

    pub fn try_recv_notification(&self) -> Option<Frame> {
        self.inner.lock().unwrap().notifications.pop_front()
    }

    fn wait_until<T>(
        &self,
        timeout: Option<Duration>,
        mut take: impl FnMut(&mut Inbox) -> Option<T>,
    ) -> Result<T, TransportError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut g = self.inner.lock().unwrap();
        loop {
            if let Some(v) = take(&mut g) {
                return Ok(v);
            }
            if g.closed {
                return Err(TransportError::Closed);
            }
            match deadline {
                None => g = self.cond.wait(g).unwrap(),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(TransportError::Timeout);
                    }
                    g = self.cond.wait_timeout(g, d - now).unwrap().0;
                }
            }
        }
    }

    pub fn recv(&self, key: MatchKey, timeout: Option<Duration>) -> Result<Frame, TransportError> {
        self.wait_until(timeout, |g| {
            let q = g.by_key.get_mut(&key)?;
            let f = q.pop_front();
            if q.is_empty() {
                g.by_key.remove(&key);
            }
            f
        })
    }

    pub fn recv_notification(&self, timeout: Option<Duration>) -> Result<Frame, TransportError> {
        self.wait_until(timeout, |g| g.notifications.pop_front())
    }

    /// Start recording the key of every non-notification delivery.
    pub fn track_dirty(&self) {
        let mut g = self.inner.lock().unwrap();
        if g.dirty.is_none() {
            g.dirty = Some(Vec::new());
        }
    }

    /// Keys delivered since the previous call, in arrival order.
    pub fn take_dirty(&self) -> Vec<MatchKey> {
        self.inner.lock().unwrap().dirty.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap().closed
    }

    /// Counter bumped on every delivery.
    pub fn generation(&self) -> u64 {
        self.inner.lock().unwrap().generation
    }

    /// Block until a delivery after `since`, close, or timeout.
    pub fn wait_for_change(&self, since: u64, timeout: Duration) {
        let _ = self.wait_until(Some(timeout), |g| (g.generation != since).then_some(()));
    }

    /// Wake every blocked receiver; subsequent blocking receives on an empty
    /// queue fail with [`TransportError::Closed`].
    pub fn close(&self) {
        self.inner.lock().unwrap().closed = true;
        self.cond.notify_all();
    }

    pub fn pending(&self) -> usize {
        let g = self.inner.lock().unwrap();
        g.notifications.len() + g.by_key.values().map(VecDeque::len).sum::<usize>()
    }
}

/// Append-only capture of every frame sent, in wire format.
#[derive(Clone)]
pub struct Capture {
    out: Arc<Mutex<BufWriter<File>>>,
}

impl Capture {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Capture { out: Arc::new(Mutex::new(BufWriter::new(File::create(path)?))) })
    }

    pub fn record(&self, frame: &Frame) {
        let mut w = self.out.lock().unwrap();
        if let Err(e) = frame.write_to(&mut *w) {
            log::warn!("capture write failed: {e}");
        }
    }

    pub fn flush(&self) -> io::Result<()> {
        self.out.lock().unwrap().flush()
    }
}

/// Decode a capture file into frames.
pub fn read_capture(bytes: &[u8], max_frame: usize) -> Result<Vec<Frame>, FrameError> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        let (f, used) = Frame::decode(&bytes[off..], max_frame)?;
        out.push(f);
        off += used;
    }
    Ok(out)
}
