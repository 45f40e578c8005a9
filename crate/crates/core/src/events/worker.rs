use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::dest::{DestHalf, NodeCtx, Step};
use super::{parse_notification, EventType};
use crate::transport::{BlockingPort, Port, TransportError};

#[derive(Clone, Debug)]
pub struct WorkerOptions {
    /// Handler threads consuming the event queue.
    pub handlers: usize,
    /// How long a handler waits for new frames before retrying a pending half.
    pub retry: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        let cpus = thread::available_parallelism().map_or(4, |n| n.get());
        WorkerOptions { handlers: cpus.saturating_sub(2).max(1), retry: Duration::from_millis(2) }
    }
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<DestHalf>,
    closed: bool,
}

#[derive(Default)]
struct EventQueue {
    state: Mutex<QueueState>,
    cond: Condvar,
}

impl EventQueue {
    fn push(&self, h: DestHalf) {
        self.state.lock().unwrap().items.push_back(h);
        self.cond.notify_one();
    }

    fn pop(&self) -> Option<DestHalf> {
        let mut g = self.state.lock().unwrap();
        loop {
            if let Some(h) = g.items.pop_front() {
                return Some(h);
            }
            if g.closed {
                return None;
            }
            g = self.cond.wait(g).unwrap();
        }
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.cond.notify_all();
    }

    fn len(&self) -> usize {
        self.state.lock().unwrap().items.len()
    }
}

fn handler_loop<P: BlockingPort>(port: &P, ctx: &NodeCtx, queue: &EventQueue, retry: Duration) {
    let mut idle_streak = 0usize;
    while let Some(mut half) = queue.pop() {
        let gen = port.mailbox().generation();
        match half.step(port, ctx) {
            Step::Done => idle_streak = 0,
            Step::Progress => {
                idle_streak = 0;
                queue.push(half);
            }
            Step::Pending => {
                idle_streak += 1;
                if idle_streak > queue.len() {
                    // A full pass without progress: sleep until a frame
                    // arrives or the retry interval passes.
                    port.mailbox().wait_for_change(gen, retry);
                    idle_streak = 0;
                }
                queue.push(half);
            }
        }
    }
}

/// Run a worker node: the calling thread becomes the gate loop and a pool of
/// handler threads steps destination halves. Returns after an `Exit` event or
/// when the transport closes.
pub fn run_worker<P: BlockingPort + Clone + 'static>(
    port: P,
    ctx: Arc<NodeCtx>,
    opts: &WorkerOptions,
) -> Result<(), TransportError> {
    let queue = Arc::new(EventQueue::default());
    let handlers: Vec<_> = (0..opts.handlers.max(1))
        .map(|i| {
            let (port, ctx, queue, retry) = (port.clone(), ctx.clone(), queue.clone(), opts.retry);
            thread::Builder::new()
                .name(format!("tm-handler-{}-{i}", ctx.node.0))
                .spawn(move || handler_loop(&port, &ctx, &queue, retry))
                .expect("spawn handler")
        })
        .collect();

    let result = loop {
        let frame = match port.recv_notification(None) {
            Ok(f) => f,
            Err(TransportError::Closed) => break Ok(()),
            Err(e) => break Err(e),
        };
        let n = match parse_notification(&frame) {
            Ok(n) => n,
            Err(e) => {
                log::warn!("node {}: malformed notification: {e}", ctx.node);
                continue;
            }
        };
        let exit = n.etype == EventType::Exit;
        let mut half = DestHalf::new(n, &ctx, port.now_us());
        if !exit {
            queue.push(half);
            continue;
        }
        // Drain the handlers, then complete the exit on the gate itself.
        queue.close();
        for h in handlers {
            let _ = h.join();
        }
        loop {
            let gen = port.mailbox().generation();
            if half.step(&port, &ctx) == Step::Done {
                break;
            }
            if port.mailbox().is_closed() {
                break;
            }
            port.mailbox().wait_for_change(gen, Duration::from_millis(100));
        }
        return Ok(());
    };
    queue.close();
    for h in handlers {
        let _ = h.join();
    }
    result
}

/// Single-threaded worker for the simulator: the driver calls [`pump`]
/// whenever something was delivered to this node or its wakeup fired.
///
/// [`pump`]: SimWorker::pump
pub struct SimWorker {
    ctx: Arc<NodeCtx>,
    queue: VecDeque<DestHalf>,
}

impl SimWorker {
    pub fn new(ctx: Arc<NodeCtx>) -> Self {
        SimWorker { ctx, queue: VecDeque::new() }
    }

    pub fn ctx(&self) -> &Arc<NodeCtx> {
        &self.ctx
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Accept notifications and step queued halves until none can advance.
    pub fn pump<P: Port + ?Sized>(&mut self, port: &P) {
        loop {
            while let Some(f) = port.try_recv_notification() {
                match parse_notification(&f) {
                    Ok(n) => self.queue.push_back(DestHalf::new(n, &self.ctx, port.now_us())),
                    Err(e) => log::warn!("node {}: malformed notification: {e}", self.ctx.node),
                }
            }
            let mut progressed = false;
            for _ in 0..self.queue.len() {
                let mut h = self.queue.pop_front().expect("non-empty");
                match h.step(port, &self.ctx) {
                    Step::Done => progressed = true,
                    Step::Progress => {
                        progressed = true;
                        self.queue.push_back(h);
                    }
                    Step::Pending => self.queue.push_back(h),
                }
            }
            if !progressed {
                break;
            }
        }
    }
}
