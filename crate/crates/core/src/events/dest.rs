use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{
    completion_payload, decode_exec, send_chunks, Assembly, EventType, ExecArgs, Notification, Reader, Role, MSG_ARGS,
};
use crate::graph::{BufferId, NodeId};
use crate::kernel::{compute_outputs, spin};
use crate::trace::{EventState, Trace};
use crate::transport::{Frame, MatchKey, Port};

/// Per-node state shared by the gate and every handler: the buffer store,
/// the single kernel slot and accounting.
pub struct NodeCtx {
    pub node: NodeId,
    store: Mutex<HashMap<u64, Vec<u8>>>,
    kernel: Mutex<()>,
    sim_free_at: Mutex<f64>,
    busy_us: Mutex<f64>,
    trace: Trace,
    exited: AtomicBool,
    halves: AtomicU64,
}

impl NodeCtx {
    pub fn new(node: NodeId, trace: Trace) -> Self {
        NodeCtx {
            node,
            store: Mutex::new(HashMap::new()),
            kernel: Mutex::new(()),
            sim_free_at: Mutex::new(0.0),
            busy_us: Mutex::new(0.0),
            trace,
            exited: AtomicBool::new(false),
            halves: AtomicU64::new(0),
        }
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Time spent inside kernels.
    pub fn busy_us(&self) -> f64 {
        *self.busy_us.lock().unwrap()
    }

    pub fn exited(&self) -> bool {
        self.exited.load(Ordering::SeqCst)
    }

    /// Destination halves created on this node.
    pub fn halves_created(&self) -> u64 {
        self.halves.load(Ordering::SeqCst)
    }

    pub fn buffer(&self, b: BufferId) -> Option<Vec<u8>> {
        self.store.lock().unwrap().get(&b.0).cloned()
    }

    pub fn put_buffer(&self, b: BufferId, bytes: Vec<u8>) {
        self.store.lock().unwrap().insert(b.0, bytes);
    }

    pub fn buffers(&self) -> BTreeMap<BufferId, usize> {
        self.store.lock().unwrap().iter().map(|(k, v)| (BufferId(*k), v.len())).collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Step {
    Done,
    /// Made progress; step again soon.
    Progress,
    /// Waiting on I/O or the kernel slot; re-enqueue.
    Pending,
}

enum Stage {
    Args,
    Recv { buffer: BufferId, from: NodeId, asm: Assembly },
    Compute { args: ExecArgs, end_us: Option<f64> },
    Finished,
}

/// Destination side of an event, stepped by handlers until done.
pub struct DestHalf {
    origin: NodeId,
    tag: u64,
    channel: u16,
    etype: EventType,
    role: Role,
    stage: Stage,
    started: bool,
    pending: bool,
}

impl DestHalf {
    pub(crate) fn new(n: Notification, ctx: &NodeCtx, now: f64) -> Self {
        ctx.halves.fetch_add(1, Ordering::SeqCst);
        ctx.trace.event(now, ctx.node, n.tag, n.etype, EventState::Queued);
        DestHalf {
            origin: n.origin,
            tag: n.tag,
            channel: n.channel,
            etype: n.etype,
            role: n.role,
            stage: Stage::Args,
            started: false,
            pending: false,
        }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn etype(&self) -> EventType {
        self.etype
    }

    pub fn step<P: Port + ?Sized>(&mut self, port: &P, ctx: &NodeCtx) -> Step {
        if matches!(self.stage, Stage::Finished) {
            return Step::Done;
        }
        if !self.started {
            self.started = true;
            ctx.trace.event(port.now_us(), ctx.node, self.tag, self.etype, EventState::Running);
        }
        let res = self.advance(port, ctx);
        let now = port.now_us();
        match res {
            Ok(Step::Pending) => {
                if !self.pending {
                    self.pending = true;
                    ctx.trace.event(now, ctx.node, self.tag, self.etype, EventState::PendingIo);
                }
                Step::Pending
            }
            Ok(s) => {
                if self.pending {
                    self.pending = false;
                    ctx.trace.event(now, ctx.node, self.tag, self.etype, EventState::Running);
                }
                if s == Step::Done {
                    ctx.trace.event(now, ctx.node, self.tag, self.etype, EventState::Done);
                }
                s
            }
            Err(msg) => {
                log::warn!("node {}: event {} ({}) failed: {msg}", ctx.node, self.tag, self.etype);
                self.stage = Stage::Finished;
                self.complete(port, Err(msg));
                ctx.trace.event(now, ctx.node, self.tag, self.etype, EventState::Failed);
                Step::Done
            }
        }
    }

    fn complete<P: Port + ?Sized>(&self, port: &P, result: Result<(), String>) {
        let f = Frame {
            origin: port.node().0,
            tag: self.tag,
            channel: self.channel,
            etype: self.etype as u8,
            payload: completion_payload(result),
        };
        if let Err(e) = port.send(self.origin, f) {
            log::warn!("completion for event {} lost: {e}", self.tag);
        }
    }

    fn finish<P: Port + ?Sized>(&mut self, port: &P) -> Result<Step, String> {
        self.stage = Stage::Finished;
        self.complete(port, Ok(()));
        Ok(Step::Done)
    }

    fn advance<P: Port + ?Sized>(&mut self, port: &P, ctx: &NodeCtx) -> Result<Step, String> {
        match &mut self.stage {
            Stage::Args => {
                let Some(f) = port.try_recv(MatchKey::new(self.origin.0, self.tag, self.channel)) else {
                    return Ok(Step::Pending);
                };
                if f.payload.first() != Some(&MSG_ARGS) {
                    return Err("expected arguments".into());
                }
                let mut r = Reader::new(&f.payload[1..]);
                let e = |e: super::EventError| e.to_string();
                match self.etype {
                    EventType::AllocBuffer => {
                        let b = r.u64().map_err(e)?;
                        let size = r.u64().map_err(e)?;
                        ctx.store.lock().unwrap().insert(b, vec![0; size as usize]);
                        self.finish(port)
                    }
                    EventType::DeleteBuffer => {
                        let b = r.u64().map_err(e)?;
                        ctx.store.lock().unwrap().remove(&b);
                        self.finish(port)
                    }
                    EventType::SubmitData => {
                        let b = BufferId(r.u64().map_err(e)?);
                        self.stage = Stage::Recv { buffer: b, from: self.origin, asm: Assembly::default() };
                        Ok(Step::Progress)
                    }
                    EventType::RetrieveData => {
                        let b = BufferId(r.u64().map_err(e)?);
                        let data = ctx.buffer(b).ok_or_else(|| format!("buffer {b} not present"))?;
                        send_chunks(port, self.origin, self.tag, self.channel, self.etype, &data)
                            .map_err(|e| e.to_string())?;
                        self.finish(port)
                    }
                    EventType::ExchangeData => {
                        let b = BufferId(r.u64().map_err(e)?);
                        let peer = NodeId(r.u16().map_err(e)?);
                        if self.role == Role::ExchangeSend {
                            let data = ctx.buffer(b).ok_or_else(|| format!("buffer {b} not present"))?;
                            send_chunks(port, peer, self.tag, self.channel, self.etype, &data)
                                .map_err(|e| e.to_string())?;
                            self.finish(port)
                        } else {
                            self.stage = Stage::Recv { buffer: b, from: peer, asm: Assembly::default() };
                            Ok(Step::Progress)
                        }
                    }
                    EventType::Execute => {
                        let args = decode_exec(&mut r).map_err(e)?;
                        self.stage = Stage::Compute { args, end_us: None };
                        Ok(Step::Progress)
                    }
                    EventType::Sync => self.finish(port),
                    EventType::Exit => {
                        // The exit result carries this node's kernel busy time.
                        ctx.exited.store(true, Ordering::SeqCst);
                        send_chunks(port, self.origin, self.tag, self.channel, self.etype, &ctx.busy_us().to_le_bytes())
                            .map_err(|e| e.to_string())?;
                        self.finish(port)
                    }
                }
            }
            Stage::Recv { buffer, from, asm } => {
                let key = MatchKey::new(from.0, self.tag, self.channel);
                let mut got = false;
                while let Some(f) = port.try_recv(key) {
                    got = true;
                    asm.push(&f.payload).map_err(|e| e.to_string())?;
                    if asm.complete {
                        let data = std::mem::take(&mut asm.data);
                        ctx.put_buffer(*buffer, data);
                        return self.finish(port);
                    }
                }
                Ok(if got { Step::Progress } else { Step::Pending })
            }
            Stage::Compute { args, end_us } => {
                if port.virtual_time() {
                    let now = port.now_us();
                    match *end_us {
                        None => {
                            let mut free = ctx.sim_free_at.lock().unwrap();
                            if now < *free {
                                port.request_wakeup(*free);
                                return Ok(Step::Pending);
                            }
                            let end = now + args.cost_us.max(0.0);
                            *free = end;
                            *ctx.busy_us.lock().unwrap() += end - now;
                            *end_us = Some(end);
                            if end > now {
                                port.request_wakeup(end);
                                return Ok(Step::Pending);
                            }
                        }
                        Some(end) if now < end => return Ok(Step::Pending),
                        Some(_) => {}
                    }
                    let args = args.clone();
                    run_outputs(&args, ctx)?;
                    return self.finish(port);
                }
                let Ok(_slot) = ctx.kernel.try_lock() else {
                    return Ok(Step::Pending);
                };
                let t0 = Instant::now();
                std::hint::black_box(spin(args.iterations));
                let args = args.clone();
                run_outputs(&args, ctx)?;
                *ctx.busy_us.lock().unwrap() += t0.elapsed().as_secs_f64() * 1e6;
                drop(_slot);
                self.finish(port)
            }
            Stage::Finished => Ok(Step::Done),
        }
    }
}

fn run_outputs(args: &ExecArgs, ctx: &NodeCtx) -> Result<(), String> {
    let outputs = {
        let store = ctx.store.lock().unwrap();
        compute_outputs(args.task, &args.deps, |b| store.get(&b.0).map(Vec::as_slice)).map_err(|e| e.to_string())?
    };
    let mut store = ctx.store.lock().unwrap();
    for (b, bytes) in outputs {
        store.insert(b.0, bytes);
    }
    Ok(())
}
