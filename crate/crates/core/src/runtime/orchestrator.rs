use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Instant;

use super::{RunConfig, RunError};
use crate::datamgr::{DataMap, TransferAction};
use crate::events::{Action, EventClient, EventType, ExecArgs, OriginEvent, Poll};
use crate::graph::{BufferId, NodeId, TaskGraph, TaskId, TaskKind};
use crate::kernel::{compute_outputs, initial_contents, kernel_deps, spin, KernelError};
use crate::scheduler::Schedule;
use crate::trace::{DataAction, TaskState, Trace};
use crate::transport::Port;

enum Op {
    Transfer(TransferAction),
    Exec,
}

enum Effect {
    None,
    StoreHead(BufferId),
    ExecDone(TaskId),
    Busy(NodeId),
}

struct Pending {
    ev: OriginEvent,
    effect: Effect,
    waiter: Option<TaskId>,
    arrive: Option<(BufferId, NodeId)>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Status {
    Waiting,
    Ready,
    Dispatched,
    Complete,
}

struct TaskRun {
    status: Status,
    stages: VecDeque<Vec<Op>>,
    waiting: BTreeSet<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Phase {
    Running,
    Finalizing,
    Exiting,
    Done,
    Failed,
}

/// Head-side run state machine. Never blocks: every call issues what it can
/// and polls whatever completions are available.
pub struct Orchestrator<P: Port + Clone> {
    client: EventClient<P>,
    graph: TaskGraph,
    schedule: Schedule,
    dm: DataMap,
    store: BTreeMap<BufferId, Vec<u8>>,
    runs: Vec<TaskRun>,
    remaining: Vec<usize>,
    ready: BTreeSet<(usize, TaskId)>,
    position: Vec<usize>,
    pending: BTreeMap<u64, Pending>,
    arriving: BTreeMap<(BufferId, NodeId), (u64, TaskId)>,
    /// Tasks blocked on an arrival another task issued, by event tag.
    watchers: BTreeMap<u64, Vec<TaskId>>,
    inflight: usize,
    max_inflight: Option<usize>,
    completed: usize,
    phase: Phase,
    error: Option<RunError>,
    event_cpu_us: f64,
    event_counts: BTreeMap<EventType, u64>,
    bytes_moved: u64,
    busy: BTreeMap<NodeId, f64>,
    tasks_done_at: Option<f64>,
    exit_at: Option<f64>,
}

impl<P: Port + Clone> Orchestrator<P> {
    pub fn new(port: P, graph: TaskGraph, schedule: Schedule, cfg: &RunConfig, trace: Trace) -> Self {
        port.mailbox().track_dirty();
        let client = EventClient::new(port, cfg.channels, trace).with_timeout(cfg.event_timeout);
        let n = graph.len();
        let store = graph.buffers().iter().map(|b| (b.id, initial_contents(b.id, b.size_bytes))).collect();
        let mut position = vec![0; n];
        for (i, t) in schedule.order.iter().enumerate() {
            position[t.0] = i;
        }
        let remaining: Vec<usize> = (0..n).map(|i| graph.predecessor_tasks(TaskId(i)).len()).collect();
        let mut runs: Vec<TaskRun> = (0..n)
            .map(|_| TaskRun { status: Status::Waiting, stages: VecDeque::new(), waiting: BTreeSet::new() })
            .collect();
        let mut ready = BTreeSet::new();
        for i in 0..n {
            if remaining[i] == 0 {
                runs[i].status = Status::Ready;
                ready.insert((position[i], TaskId(i)));
            }
        }
        let busy = (0..=cfg.workers as u16).map(|w| (NodeId(w), 0.0)).collect();
        Orchestrator {
            client,
            dm: DataMap::for_graph(&graph),
            graph,
            schedule,
            store,
            runs,
            remaining,
            ready,
            position,
            pending: BTreeMap::new(),
            arriving: BTreeMap::new(),
            watchers: BTreeMap::new(),
            inflight: 0,
            max_inflight: cfg.max_inflight,
            completed: 0,
            phase: Phase::Running,
            error: None,
            event_cpu_us: 0.0,
            event_counts: BTreeMap::new(),
            bytes_moved: 0,
            busy,
            tasks_done_at: None,
            exit_at: None,
        }
    }

    /// Head CPU time charged per originated event (only meaningful on
    /// virtual-time ports).
    pub fn with_event_cpu(mut self, us: f64) -> Self {
        self.event_cpu_us = us;
        self
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn trace(&self) -> &Trace {
        self.client.trace()
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.phase, Phase::Done | Phase::Failed)
    }

    pub fn take_error(&mut self) -> Option<RunError> {
        self.error.take()
    }

    /// Buffer contents held by the head.
    pub fn head_store(&self) -> &BTreeMap<BufferId, Vec<u8>> {
        &self.store
    }

    pub fn event_counts(&self) -> &BTreeMap<EventType, u64> {
        &self.event_counts
    }

    pub fn bytes_moved(&self) -> u64 {
        self.bytes_moved
    }

    /// Kernel busy time per node; worker values arrive with the exit events.
    pub fn busy(&self) -> &BTreeMap<NodeId, f64> {
        &self.busy
    }

    /// When the last task completed (port clock).
    pub fn tasks_done_at(&self) -> Option<f64> {
        self.tasks_done_at
    }

    /// When the exit events were issued (port clock).
    pub fn exit_at(&self) -> Option<f64> {
        self.exit_at
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    /// Earliest deadline among in-flight events.
    pub fn earliest_deadline(&self) -> Option<f64> {
        self.pending.values().map(|p| p.ev.deadline_us()).min_by(f64::total_cmp)
    }

    /// Poll events that received frames, then dispatch and advance phases.
    pub fn pump(&mut self) {
        if self.is_finished() {
            return;
        }
        let tags: BTreeSet<u64> = self.client.port().mailbox().take_dirty().into_iter().map(|k| k.tag).collect();
        self.poll_tags(tags);
        self.drive();
    }

    /// Poll every in-flight event; this is where deadlines are enforced.
    pub fn check_all(&mut self) {
        if self.is_finished() {
            return;
        }
        let tags: BTreeSet<u64> = self.pending.keys().copied().collect();
        self.poll_tags(tags);
        self.drive();
    }

    fn poll_tags(&mut self, tags: BTreeSet<u64>) {
        for tag in tags {
            if self.phase == Phase::Failed {
                return;
            }
            let Some(p) = self.pending.get_mut(&tag) else { continue };
            let port = self.client.port().clone();
            match p.ev.poll(&port) {
                Poll::Pending => {}
                Poll::Ready(Ok(bytes)) => {
                    let p = self.pending.remove(&tag).expect("present");
                    if let Err(e) = self.on_complete(tag, p, bytes) {
                        self.fail(e);
                    }
                }
                Poll::Ready(Err(e)) => {
                    let task = self.pending.remove(&tag).and_then(|p| p.waiter);
                    self.fail(RunError::Event { task, source: e });
                }
            }
        }
    }

    fn fail(&mut self, e: RunError) {
        log::error!("run aborted: {e}");
        if self.error.is_none() {
            self.error = Some(e);
        }
        self.phase = Phase::Failed;
    }

    fn drive(&mut self) {
        if let Err(e) = self.drive_inner() {
            self.fail(e);
        }
    }

    fn drive_inner(&mut self) -> Result<(), RunError> {
        loop {
            match self.phase {
                Phase::Running => {
                    self.dispatch_ready()?;
                    if self.completed < self.graph.len() {
                        return Ok(());
                    }
                    self.tasks_done_at = Some(self.client.port().now_us());
                    self.phase = Phase::Finalizing;
                    let buffers: Vec<BufferId> = self.graph.buffers().iter().map(|b| b.id).collect();
                    for b in buffers {
                        for a in self.dm.on_exit_data(b, false)? {
                            self.issue(None, Op::Transfer(a))?;
                        }
                    }
                }
                Phase::Finalizing => {
                    if !self.pending.is_empty() {
                        return Ok(());
                    }
                    self.phase = Phase::Exiting;
                    let port = self.client.port().clone();
                    self.exit_at = Some(port.now_us());
                    let workers: Vec<NodeId> = self.busy.keys().copied().filter(|n| !n.is_head()).collect();
                    for w in workers.into_iter().filter(|&w| port.is_alive(w)) {
                        self.create(None, w, Action::Exit, Effect::Busy(w), None)?;
                    }
                }
                Phase::Exiting => {
                    if self.pending.is_empty() {
                        self.phase = Phase::Done;
                    }
                    return Ok(());
                }
                Phase::Done | Phase::Failed => return Ok(()),
            }
        }
    }

    fn dispatch_ready(&mut self) -> Result<(), RunError> {
        let mut skipped = Vec::new();
        while let Some((pos, t)) = self.ready.pop_first() {
            let compute = !self.graph.task(t).kind.is_data();
            if compute && self.max_inflight.is_some_and(|m| self.inflight >= m) {
                skipped.push((pos, t));
                continue;
            }
            self.dispatch(t)?;
        }
        self.ready.extend(skipped);
        Ok(())
    }

    fn dispatch(&mut self, t: TaskId) -> Result<(), RunError> {
        let task = self.graph.task(t).clone();
        let node = self.schedule.node_of(t);
        let now = self.client.port().now_us();
        self.client.trace().task(now, t, TaskState::Dispatched, node);
        self.runs[t.0].status = Status::Dispatched;
        let plan = if task.kind.is_data() {
            self.dm.on_data_task(&task, &self.graph, &self.schedule)?
        } else {
            self.inflight += 1;
            self.dm.before_execute(&task, node)?
        };
        // Arrivals another task started into this node.
        for d in &task.deps {
            if let Some(&(tag, owner)) = self.arriving.get(&(d.buffer, node)) {
                if owner != t && self.runs[t.0].waiting.insert(tag) {
                    self.watchers.entry(tag).or_default().push(t);
                }
            }
        }
        let (first, second) = split_plan(plan);
        let run = &mut self.runs[t.0];
        run.stages.push_back(first);
        if !task.kind.is_data() {
            run.stages.push_back(vec![Op::Exec]);
        }
        run.stages.push_back(second);
        self.advance(t)
    }

    fn advance(&mut self, t: TaskId) -> Result<(), RunError> {
        while self.runs[t.0].waiting.is_empty() {
            let Some(stage) = self.runs[t.0].stages.pop_front() else {
                return self.complete_task(t);
            };
            for op in stage {
                self.issue(Some(t), op)?;
            }
        }
        Ok(())
    }

    fn complete_task(&mut self, t: TaskId) -> Result<(), RunError> {
        if self.runs[t.0].status == Status::Complete {
            return Ok(());
        }
        self.runs[t.0].status = Status::Complete;
        self.completed += 1;
        let task = self.graph.task(t);
        if !task.kind.is_data() {
            self.inflight -= 1;
        }
        let now = self.client.port().now_us();
        self.client.trace().task(now, t, TaskState::Complete, self.schedule.node_of(t));
        for s in self.graph.successor_tasks(t) {
            self.remaining[s.0] -= 1;
            if self.remaining[s.0] == 0 && self.runs[s.0].status == Status::Waiting {
                self.runs[s.0].status = Status::Ready;
                self.ready.insert((self.position[s.0], s));
            }
        }
        Ok(())
    }

    fn record(&self, action: DataAction, buffer: BufferId, src: NodeId, dst: NodeId) {
        self.client.trace().data(self.client.port().now_us(), action, buffer, src, dst);
    }

    fn size(&self, b: BufferId) -> u64 {
        self.graph.buffer_size(b)
    }

    fn issue(&mut self, owner: Option<TaskId>, op: Op) -> Result<(), RunError> {
        use TransferAction::*;
        let head = NodeId::HEAD;
        match op {
            Op::Exec => self.issue_exec(owner.expect("exec belongs to a task")),
            Op::Transfer(Alloc { node, buffer }) => {
                self.record(DataAction::Alloc, buffer, node, node);
                if node.is_head() {
                    let size = self.size(buffer) as usize;
                    self.store.entry(buffer).or_insert_with(|| vec![0; size]);
                    return Ok(());
                }
                let size = self.size(buffer);
                self.create(owner, node, Action::AllocBuffer { buffer, size }, Effect::None, Some((buffer, node)))
            }
            Op::Transfer(Forward { src, dst, buffer }) if dst.is_head() => {
                self.issue(owner, Op::Transfer(Retrieve { node: src, buffer }))
            }
            Op::Transfer(Forward { src, dst, buffer }) if src.is_head() => {
                self.record(DataAction::Forward, buffer, src, dst);
                let data = self.store.get(&buffer).cloned().ok_or(KernelError::MissingBuffer(buffer))?;
                self.bytes_moved += data.len() as u64;
                self.create(owner, dst, Action::SubmitData { buffer, data }, Effect::None, Some((buffer, dst)))
            }
            Op::Transfer(Forward { src, dst, buffer }) => {
                self.record(DataAction::Forward, buffer, src, dst);
                self.bytes_moved += self.size(buffer);
                self.create(owner, dst, Action::ExchangeData { buffer, src, dst }, Effect::None, Some((buffer, dst)))
            }
            Op::Transfer(Retrieve { node, buffer }) => {
                if node.is_head() {
                    return Ok(());
                }
                self.record(DataAction::Retrieve, buffer, node, head);
                self.bytes_moved += self.size(buffer);
                self.create(owner, node, Action::RetrieveData { buffer }, Effect::StoreHead(buffer), Some((buffer, head)))
            }
            Op::Transfer(Remove { node, buffer }) => {
                self.record(DataAction::Remove, buffer, node, node);
                if node.is_head() {
                    self.store.remove(&buffer);
                    return Ok(());
                }
                self.create(owner, node, Action::DeleteBuffer { buffer }, Effect::None, None)
            }
        }
    }

    fn issue_exec(&mut self, t: TaskId) -> Result<(), RunError> {
        let task = self.graph.task(t);
        let node = self.schedule.node_of(t);
        let deps = kernel_deps(self.graph.program(), &task.deps);
        if node.is_head() {
            debug_assert_eq!(task.kind, TaskKind::HostTask);
            let port = self.client.port().clone();
            let busy = if port.virtual_time() {
                port.charge_cpu(task.cost_us);
                task.cost_us
            } else {
                let t0 = Instant::now();
                std::hint::black_box(spin(task.kernel.iterations));
                t0.elapsed().as_secs_f64() * 1e6
            };
            *self.busy.entry(node).or_default() += busy;
            let store = &self.store;
            let outputs = compute_outputs(t, &deps, |b| store.get(&b).map(Vec::as_slice))?;
            self.store.extend(outputs);
            return self.after_exec(t);
        }
        let args = ExecArgs { task: t, iterations: task.kernel.iterations, cost_us: task.cost_us, deps };
        self.create(Some(t), node, Action::Execute(args), Effect::ExecDone(t), None)
    }

    /// Record writes and queue invalidation of stale copies.
    fn after_exec(&mut self, t: TaskId) -> Result<(), RunError> {
        let task = self.graph.task(t).clone();
        let node = self.schedule.node_of(t);
        for d in task.deps.iter().filter(|d| d.dir.writes()) {
            self.record(DataAction::Write, d.buffer, node, node);
        }
        let plan = self.dm.after_execute(&task, node)?;
        let removes: Vec<Op> = plan.into_iter().map(Op::Transfer).collect();
        self.runs[t.0].stages.push_front(removes);
        Ok(())
    }

    fn create(
        &mut self,
        owner: Option<TaskId>,
        dest: NodeId,
        action: Action,
        effect: Effect,
        arrive: Option<(BufferId, NodeId)>,
    ) -> Result<(), RunError> {
        if self.event_cpu_us > 0.0 {
            self.client.port().charge_cpu(self.event_cpu_us);
        }
        let etype = action.etype();
        let ev = self.client.submit(dest, action).map_err(|source| RunError::Event { task: owner, source })?;
        let tag = ev.tag();
        *self.event_counts.entry(etype).or_default() += 1;
        if let Some(t) = owner {
            self.runs[t.0].waiting.insert(tag);
            if let Some(key) = arrive {
                self.arriving.insert(key, (tag, t));
            }
        }
        self.pending.insert(tag, Pending { ev, effect, waiter: owner, arrive });
        Ok(())
    }

    fn on_complete(&mut self, tag: u64, p: Pending, bytes: Vec<u8>) -> Result<(), RunError> {
        if let Some(key) = p.arrive {
            if self.arriving.get(&key).is_some_and(|&(t, _)| t == tag) {
                self.arriving.remove(&key);
            }
        }
        match p.effect {
            Effect::None => {}
            Effect::StoreHead(b) => {
                self.store.insert(b, bytes);
            }
            Effect::ExecDone(t) => self.after_exec(t)?,
            Effect::Busy(n) => {
                let v = <[u8; 8]>::try_from(bytes.as_slice()).map(f64::from_le_bytes).unwrap_or(0.0);
                self.busy.insert(n, v);
            }
        }
        let Some(owner) = p.waiter else { return Ok(()) };
        let mut wake = vec![owner];
        wake.extend(self.watchers.remove(&tag).unwrap_or_default());
        for t in wake {
            if self.runs[t.0].waiting.remove(&tag) && self.runs[t.0].status == Status::Dispatched {
                self.advance(t)?;
            }
        }
        Ok(())
    }
}

/// Transfers first, invalidations after. An allocation is dropped when the
/// same plan also copies the buffer into that node.
fn split_plan(plan: Vec<TransferAction>) -> (Vec<Op>, Vec<Op>) {
    let copied: BTreeSet<(BufferId, NodeId)> = plan
        .iter()
        .filter_map(|a| match *a {
            TransferAction::Forward { dst, buffer, .. } => Some((buffer, dst)),
            TransferAction::Retrieve { buffer, .. } => Some((buffer, NodeId::HEAD)),
            _ => None,
        })
        .collect();
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for a in plan {
        match a {
            TransferAction::Alloc { node, buffer } if copied.contains(&(buffer, node)) => {}
            TransferAction::Remove { .. } => second.push(Op::Transfer(a)),
            _ => first.push(Op::Transfer(a)),
        }
    }
    (first, second)
}
