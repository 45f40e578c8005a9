use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{
    notification_frame, send_chunks, Action, Args, Assembly, EventError, EventType, Reader, Role, MSG_COMPLETE,
    MSG_DATA, STATUS_OK,
};
use crate::graph::NodeId;
use crate::trace::{EventState, Trace};
use crate::transport::{BlockingPort, Frame, MatchKey, Port};

/// Default time an origin waits for all completions.
pub const DEFAULT_TIMEOUT_US: f64 = 120e6;

/// Creates origin halves with run-unique tags. Clones share the tag counter.
#[derive(Clone)]
pub struct EventClient<P> {
    port: P,
    next_tag: Arc<AtomicU64>,
    channels: u16,
    timeout_us: f64,
    trace: Trace,
}

struct Half {
    node: NodeId,
    role: Role,
    done: bool,
    data: Assembly,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Phase {
    Created,
    Notified,
    Finished,
}

/// Origin side of one event. Owned by exactly one waiter.
pub struct OriginEvent {
    tag: u64,
    channel: u16,
    etype: EventType,
    origin: NodeId,
    halves: Vec<Half>,
    staged: Option<Action>,
    phase: Phase,
    deadline_us: f64,
    trace: Trace,
}

pub enum Poll {
    Pending,
    Ready(Result<Vec<u8>, EventError>),
}

impl<P: Port + Clone> EventClient<P> {
    pub fn new(port: P, channels: u16, trace: Trace) -> Self {
        EventClient {
            port,
            next_tag: Arc::new(AtomicU64::new(1)),
            channels: channels.max(1),
            timeout_us: DEFAULT_TIMEOUT_US,
            trace,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout_us = timeout.as_secs_f64() * 1e6;
        self
    }

    pub fn port(&self) -> &P {
        &self.port
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Tags issued so far.
    pub fn tags_issued(&self) -> u64 {
        self.next_tag.load(Ordering::SeqCst) - 1
    }

    /// Stage an event for `dest`. For `ExchangeData` the two halves go to the
    /// action's source and target and `dest` must be the target.
    pub fn create(&self, dest: NodeId, action: Action) -> Result<OriginEvent, EventError> {
        let me = self.port.node();
        let halves: Vec<(NodeId, Role)> = match &action {
            Action::ExchangeData { src, dst, .. } => {
                if *dst != dest {
                    return Err(EventError::Protocol(format!("exchange target {dst} differs from destination {dest}")));
                }
                vec![(*src, Role::ExchangeSend), (*dst, Role::ExchangeRecv)]
            }
            _ => vec![(dest, Role::Single)],
        };
        for &(n, _) in &halves {
            if n == me {
                return Err(EventError::NotifySelf);
            }
            if !self.port.is_alive(n) {
                return Err(EventError::DeadDestination(n));
            }
        }
        let tag = self.next_tag.fetch_add(1, Ordering::SeqCst);
        let etype = action.etype();
        let ev = OriginEvent {
            tag,
            channel: super::channel_for(tag, self.channels),
            etype,
            origin: me,
            halves: halves.into_iter().map(|(node, role)| Half { node, role, done: false, data: Assembly::default() }).collect(),
            staged: Some(action),
            phase: Phase::Created,
            deadline_us: self.port.now_us() + self.timeout_us,
            trace: self.trace.clone(),
        };
        self.trace.event(self.port.now_us(), me, tag, etype, EventState::Created);
        Ok(ev)
    }

    /// Send the notification, arguments and payload to every half.
    pub fn notify(&self, ev: &mut OriginEvent) -> Result<(), EventError> {
        let action = ev.staged.take().ok_or_else(|| EventError::Protocol(format!("event {} notified twice", ev.tag)))?;
        let res = self.send_all(ev, &action);
        match res {
            Ok(()) => {
                ev.phase = Phase::Notified;
                Ok(())
            }
            Err(e) => {
                ev.phase = Phase::Finished;
                self.trace.event(self.port.now_us(), ev.origin, ev.tag, ev.etype, EventState::Failed);
                Err(e)
            }
        }
    }

    fn send_all(&self, ev: &OriginEvent, action: &Action) -> Result<(), EventError> {
        let p = &self.port;
        for h in &ev.halves {
            p.send(h.node, notification_frame(ev.origin, ev.tag, ev.channel, ev.etype, h.role))?;
            self.trace.event(p.now_us(), ev.origin, ev.tag, ev.etype, EventState::Notified);
            let args = match (action, h.role) {
                (Action::AllocBuffer { buffer, size }, _) => Args::new().u64(buffer.0).u64(*size).0,
                (Action::DeleteBuffer { buffer }, _) | (Action::RetrieveData { buffer }, _) => Args::new().u64(buffer.0).0,
                (Action::SubmitData { buffer, data }, _) => Args::new().u64(buffer.0).u64(data.len() as u64).0,
                (Action::ExchangeData { buffer, dst, .. }, Role::ExchangeSend) => Args::new().u64(buffer.0).u16(dst.0).0,
                (Action::ExchangeData { buffer, src, .. }, _) => Args::new().u64(buffer.0).u16(src.0).0,
                (Action::Execute(a), _) => super::encode_exec(a),
                (Action::Sync, _) | (Action::Exit, _) => Args::new().0,
            };
            p.send(h.node, Frame { origin: ev.origin.0, tag: ev.tag, channel: ev.channel, etype: ev.etype as u8, payload: args })?;
            if let Action::SubmitData { data, .. } = action {
                send_chunks(p, h.node, ev.tag, ev.channel, ev.etype, data)?;
            }
        }
        Ok(())
    }

    /// Create and notify in one step.
    pub fn submit(&self, dest: NodeId, action: Action) -> Result<OriginEvent, EventError> {
        let mut ev = self.create(dest, action)?;
        self.notify(&mut ev)?;
        Ok(ev)
    }
}

impl OriginEvent {
    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn channel(&self) -> u16 {
        self.channel
    }

    pub fn etype(&self) -> EventType {
        self.etype
    }

    pub fn destinations(&self) -> Vec<NodeId> {
        self.halves.iter().map(|h| h.node).collect()
    }

    pub fn deadline_us(&self) -> f64 {
        self.deadline_us
    }

    pub fn is_finished(&self) -> bool {
        self.phase == Phase::Finished
    }

    fn fail(&mut self, now: f64, e: EventError) -> Poll {
        self.phase = Phase::Finished;
        self.trace.event(now, self.origin, self.tag, self.etype, EventState::Failed);
        Poll::Ready(Err(e))
    }

    /// Consume any frames that arrived for this event without blocking.
    pub fn poll<P: Port + ?Sized>(&mut self, port: &P) -> Poll {
        let now = port.now_us();
        match self.phase {
            Phase::Created => return Poll::Ready(Err(EventError::Protocol("polled before notify".into()))),
            Phase::Finished => return Poll::Ready(Err(EventError::Protocol("event already finished".into()))),
            Phase::Notified => {}
        }
        for i in 0..self.halves.len() {
            while !self.halves[i].done {
                let key = MatchKey::new(self.halves[i].node.0, self.tag, self.channel);
                let Some(f) = port.try_recv(key) else { break };
                match f.payload.first() {
                    Some(&MSG_DATA) => {
                        if let Err(e) = self.halves[i].data.push(&f.payload) {
                            return self.fail(now, e);
                        }
                    }
                    Some(&MSG_COMPLETE) => {
                        let mut r = Reader::new(&f.payload[1..]);
                        let status = r.u8().unwrap_or(u8::MAX);
                        if status != STATUS_OK {
                            let message = String::from_utf8_lossy(r.rest()).into_owned();
                            let node = self.halves[i].node;
                            return self.fail(now, EventError::Remote { tag: self.tag, node, message });
                        }
                        self.halves[i].done = true;
                        self.trace.event(now, self.origin, self.tag, self.etype, EventState::Completed);
                    }
                    _ => return self.fail(now, EventError::Protocol(format!("unexpected frame on event {}", self.tag))),
                }
            }
        }
        if self.halves.iter().all(|h| h.done) {
            self.phase = Phase::Finished;
            let result = self.halves.iter_mut().map(|h| std::mem::take(&mut h.data.data)).find(|d| !d.is_empty());
            return Poll::Ready(Ok(result.unwrap_or_default()));
        }
        if now > self.deadline_us {
            let tag = self.tag;
            return self.fail(now, EventError::Timeout { tag });
        }
        Poll::Pending
    }

    /// Block until every half completed; returns the result payload
    /// (the retrieved bytes for `RetrieveData`, empty otherwise).
    ///
    /// An event has exactly one waiter, so waiting consumes it:
    ///
    /// ```compile_fail
    /// # use taskmesh::events::OriginEvent;
    /// # use taskmesh::transport::mem::MemPort;
    /// fn twice(ev: OriginEvent, port: &MemPort) {
    ///     let _ = ev.wait(port);
    ///     let _ = ev.wait(port);
    /// }
    /// ```
    pub fn wait<P: BlockingPort + ?Sized>(mut self, port: &P) -> Result<Vec<u8>, EventError> {
        loop {
            let gen = port.mailbox().generation();
            if let Poll::Ready(r) = self.poll(port) {
                return r;
            }
            if port.mailbox().is_closed() {
                let now = port.now_us();
                return match self.fail(now, EventError::Transport(crate::transport::TransportError::Closed)) {
                    Poll::Ready(r) => r,
                    Poll::Pending => unreachable!(),
                };
            }
            let left = (self.deadline_us - port.now_us()).max(0.0);
            port.mailbox().wait_for_change(gen, Duration::from_micros(left.min(100_000.0) as u64 + 1));
        }
    }
}
