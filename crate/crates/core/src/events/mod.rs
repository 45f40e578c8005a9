//! Two-sided event protocol.
//!
//! An event carries one action from the head (origin) to a worker
//! (destination) over its own tag. The origin sends a notification on the
//! reserved key, then the arguments and any payload on the event key
//! `(sender, tag, tag mod C)`. The destination's gate turns the notification
//! into a destination half that handlers step until it finishes, after which a
//! completion (status byte plus optional result) goes back to the origin.
//!
//! `ExchangeData` has two destination halves: the source node streams the
//! buffer straight to the target node on the same tag, and both report
//! completion to the origin.

mod dest;
mod origin;
mod worker;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use dest::{DestHalf, NodeCtx, Step};
pub use origin::{EventClient, OriginEvent, Poll};
pub use worker::{run_worker, SimWorker, WorkerOptions};

use crate::graph::{BufferId, DepDirection, NodeId, TaskId};
use crate::kernel::KernelDep;
use crate::transport::{Frame, Port, TransportError, HEADER_LEN};

pub const DEFAULT_CHANNELS: u16 = 8;

pub(crate) const MSG_ARGS: u8 = 1;
pub(crate) const MSG_DATA: u8 = 2;
pub(crate) const MSG_COMPLETE: u8 = 3;

pub(crate) const STATUS_OK: u8 = 0;
pub(crate) const STATUS_FAILED: u8 = 1;

/// Bytes in a data chunk header: kind, sequence number, last flag.
const CHUNK_HEADER: usize = 6;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventType {
    AllocBuffer = 1,
    DeleteBuffer = 2,
    SubmitData = 3,
    RetrieveData = 4,
    ExchangeData = 5,
    Execute = 6,
    Sync = 7,
    Exit = 8,
}

impl EventType {
    pub const ALL: [EventType; 8] = [
        EventType::AllocBuffer,
        EventType::DeleteBuffer,
        EventType::SubmitData,
        EventType::RetrieveData,
        EventType::ExchangeData,
        EventType::Execute,
        EventType::Sync,
        EventType::Exit,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|e| *e as u8 == v)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::AllocBuffer => "alloc_buffer",
            EventType::DeleteBuffer => "delete_buffer",
            EventType::SubmitData => "submit_data",
            EventType::RetrieveData => "retrieve_data",
            EventType::ExchangeData => "exchange_data",
            EventType::Execute => "execute",
            EventType::Sync => "sync",
            EventType::Exit => "exit",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| format!("unknown event type '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecArgs {
    pub task: TaskId,
    pub iterations: u64,
    /// Duration charged on the simulator instead of spinning.
    pub cost_us: f64,
    pub deps: Vec<KernelDep>,
}

/// The action an event performs at its destination.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    AllocBuffer { buffer: BufferId, size: u64 },
    DeleteBuffer { buffer: BufferId },
    SubmitData { buffer: BufferId, data: Vec<u8> },
    RetrieveData { buffer: BufferId },
    ExchangeData { buffer: BufferId, src: NodeId, dst: NodeId },
    Execute(ExecArgs),
    Sync,
    Exit,
}

impl Action {
    pub fn etype(&self) -> EventType {
        match self {
            Action::AllocBuffer { .. } => EventType::AllocBuffer,
            Action::DeleteBuffer { .. } => EventType::DeleteBuffer,
            Action::SubmitData { .. } => EventType::SubmitData,
            Action::RetrieveData { .. } => EventType::RetrieveData,
            Action::ExchangeData { .. } => EventType::ExchangeData,
            Action::Execute(_) => EventType::Execute,
            Action::Sync => EventType::Sync,
            Action::Exit => EventType::Exit,
        }
    }
}

/// Which side of the event a destination half plays.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Role {
    Single = 0,
    ExchangeSend = 1,
    ExchangeRecv = 2,
}

impl Role {
    fn from_u8(v: u8) -> Option<Self> {
        [Role::Single, Role::ExchangeSend, Role::ExchangeRecv].into_iter().find(|r| *r as u8 == v)
    }
}

#[derive(Debug, Error)]
pub enum EventError {
    #[error("destination {0} is down")]
    DeadDestination(NodeId),
    #[error("an event cannot target its own origin node")]
    NotifySelf,
    #[error("event {tag} timed out")]
    Timeout { tag: u64 },
    #[error("event {tag} failed on node {node}: {message}")]
    Remote { tag: u64, node: NodeId, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub(crate) struct Notification {
    pub origin: NodeId,
    pub tag: u64,
    pub channel: u16,
    pub etype: EventType,
    pub role: Role,
}

pub(crate) fn notification_frame(origin: NodeId, tag: u64, channel: u16, etype: EventType, role: Role) -> Frame {
    let mut payload = Vec::with_capacity(11);
    payload.extend_from_slice(&tag.to_le_bytes());
    payload.extend_from_slice(&channel.to_le_bytes());
    payload.push(role as u8);
    Frame { origin: origin.0, tag: 0, channel: 0, etype: etype as u8, payload }
}

pub(crate) fn parse_notification(f: &Frame) -> Result<Notification, EventError> {
    let p = &f.payload;
    let etype = EventType::from_u8(f.etype).ok_or_else(|| EventError::Protocol(format!("etype {}", f.etype)))?;
    if p.len() != 11 {
        return Err(EventError::Protocol(format!("notification payload of {} bytes", p.len())));
    }
    let role = Role::from_u8(p[10]).ok_or_else(|| EventError::Protocol(format!("role {}", p[10])))?;
    Ok(Notification {
        origin: NodeId(f.origin),
        tag: u64::from_le_bytes(p[0..8].try_into().unwrap()),
        channel: u16::from_le_bytes(p[8..10].try_into().unwrap()),
        etype,
        role,
    })
}

/// Little-endian argument writer/reader.
#[derive(Default)]
pub(crate) struct Args(pub Vec<u8>);

impl Args {
    pub fn new() -> Self {
        Args(vec![MSG_ARGS])
    }
    pub fn u64(mut self, v: u64) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u16(mut self, v: u16) -> Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    pub fn u8(mut self, v: u8) -> Self {
        self.0.push(v);
        self
    }
    pub fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, off: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], EventError> {
        let s = self
            .buf
            .get(self.off..self.off + n)
            .ok_or_else(|| EventError::Protocol("truncated arguments".into()))?;
        self.off += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8, EventError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, EventError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32, EventError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, EventError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, EventError> {
        Ok(f64::from_bits(self.u64()?))
    }
    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.off..];
        self.off = self.buf.len();
        s
    }
}

pub(crate) fn encode_exec(a: &ExecArgs) -> Vec<u8> {
    let mut w = Args::new().u64(a.task.0 as u64).u64(a.iterations).f64(a.cost_us);
    w.0.extend_from_slice(&(a.deps.len() as u32).to_le_bytes());
    for d in &a.deps {
        w = w.u64(d.buffer.0).u8(d.dir.as_u8()).u64(d.size);
    }
    w.0
}

pub(crate) fn decode_exec(r: &mut Reader<'_>) -> Result<ExecArgs, EventError> {
    let task = TaskId(r.u64()? as usize);
    let iterations = r.u64()?;
    let cost_us = r.f64()?;
    let n = r.u32()? as usize;
    let mut deps = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let buffer = BufferId(r.u64()?);
        let dir = DepDirection::from_u8(r.u8()?).ok_or_else(|| EventError::Protocol("dep direction".into()))?;
        deps.push(KernelDep { buffer, dir, size: r.u64()? });
    }
    Ok(ExecArgs { task, iterations, cost_us, deps })
}

pub(crate) fn chunk_capacity(max_frame: usize) -> usize {
    max_frame.saturating_sub(HEADER_LEN + CHUNK_HEADER).max(1)
}

/// Stream `bytes` to `dst` on the event key as numbered chunks; the final
/// chunk carries the last flag (an empty buffer is one empty final chunk).
pub(crate) fn send_chunks<P: Port + ?Sized>(
    port: &P,
    dst: NodeId,
    tag: u64,
    channel: u16,
    etype: EventType,
    bytes: &[u8],
) -> Result<(), TransportError> {
    let cap = chunk_capacity(port.max_frame());
    let mut chunks: Vec<&[u8]> = bytes.chunks(cap).collect();
    if chunks.is_empty() {
        chunks.push(&[]);
    }
    let n = chunks.len();
    for (seq, c) in chunks.into_iter().enumerate() {
        let mut payload = Vec::with_capacity(CHUNK_HEADER + c.len());
        payload.push(MSG_DATA);
        payload.extend_from_slice(&(seq as u32).to_le_bytes());
        payload.push((seq + 1 == n) as u8);
        payload.extend_from_slice(c);
        port.send(dst, Frame { origin: port.node().0, tag, channel, etype: etype as u8, payload })?;
    }
    Ok(())
}

/// Reassembly state for a chunked payload.
#[derive(Default, Debug)]
pub(crate) struct Assembly {
    pub data: Vec<u8>,
    next_seq: u32,
    pub complete: bool,
}

impl Assembly {
    /// Feed one data frame payload (starting with the kind byte).
    pub fn push(&mut self, payload: &[u8]) -> Result<(), EventError> {
        let mut r = Reader::new(payload);
        let kind = r.u8()?;
        let seq = r.u32()?;
        let last = r.u8()? != 0;
        if kind != MSG_DATA || seq != self.next_seq || self.complete {
            return Err(EventError::Protocol(format!("unexpected chunk {seq} (want {})", self.next_seq)));
        }
        self.data.extend_from_slice(r.rest());
        self.next_seq += 1;
        self.complete = last;
        Ok(())
    }
}

pub(crate) fn completion_payload(result: Result<(), String>) -> Vec<u8> {
    match result {
        Ok(()) => vec![MSG_COMPLETE, STATUS_OK],
        Err(msg) => {
            let mut p = vec![MSG_COMPLETE, STATUS_FAILED];
            p.extend_from_slice(msg.as_bytes());
            p
        }
    }
}

pub fn channel_for(tag: u64, channels: u16) -> u16 {
    (tag % channels.max(1) as u64) as u16
}
