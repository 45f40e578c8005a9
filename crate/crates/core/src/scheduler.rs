//! Static HEFT mapping of a whole task graph onto the head node and workers.
//!
//! Two adaptations over textbook HEFT: host tasks are pinned to the head
//! node, and enter/exit data tasks are co-located with the first target task
//! that is placed next to them in the graph. Data tasks model transfers and do
//! not occupy a node's compute timeline.

use std::cmp::Ordering;
use std::fmt::Write as _;

use thiserror::Error;

use crate::graph::{NodeId, Task, TaskGraph, TaskId, TaskKind};

/// Compute and communication estimates used for ranking and placement.
#[derive(Clone, Debug, PartialEq)]
pub struct CostModel {
    /// Worker count `p`. Nodes are `0..=p`, node 0 being the head.
    pub workers: usize,
    pub latency_us: f64,
    /// Bytes per microsecond.
    pub bandwidth: f64,
    /// Relative speed per node (`p + 1` entries); compute time is
    /// `cost_us / speed`.
    pub speeds: Vec<f64>,
}

impl CostModel {
    pub fn homogeneous(workers: usize, latency_us: f64, bandwidth: f64) -> Self {
        CostModel { workers, latency_us, bandwidth, speeds: vec![1.0; workers + 1] }
    }

    pub fn with_speeds(mut self, speeds: Vec<f64>) -> Self {
        assert_eq!(speeds.len(), self.workers + 1, "one speed per node including the head");
        self.speeds = speeds;
        self
    }

    pub fn node_count(&self) -> usize {
        self.workers + 1
    }

    pub fn worker_nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.workers).map(|n| NodeId(n as u16))
    }

    pub fn compute_time(&self, task: &Task, node: NodeId) -> f64 {
        task.cost_us / self.speeds[node.index()]
    }

    pub fn comm_time(&self, bytes: u64, src: NodeId, dst: NodeId) -> f64 {
        if src == dst {
            0.0
        } else {
            self.latency_us + bytes as f64 / self.bandwidth
        }
    }

    /// Transfer duration of a data task placed on `node`: head to node for
    /// enter, node to head for exit.
    pub fn data_task_time(&self, graph: &TaskGraph, task: &Task, node: NodeId) -> f64 {
        let bytes: u64 = task.deps.iter().map(|d| graph.buffer_size(d.buffer)).sum();
        match task.kind {
            TaskKind::TargetDataEnter => self.comm_time(bytes, NodeId::HEAD, node),
            _ => self.comm_time(bytes, node, NodeId::HEAD),
        }
    }

    /// Average inter-node communication time for `bytes`.
    pub fn mean_comm_time(&self, bytes: u64) -> f64 {
        if self.workers == 0 {
            0.0
        } else {
            self.latency_us + bytes as f64 / self.bandwidth
        }
    }

    fn mean_cost(&self, graph: &TaskGraph, task: &Task) -> f64 {
        match task.kind {
            TaskKind::HostTask => self.compute_time(task, NodeId::HEAD),
            TaskKind::TargetTask if self.workers > 0 => {
                self.worker_nodes().map(|n| self.compute_time(task, n)).sum::<f64>() / self.workers as f64
            }
            TaskKind::TargetTask => self.compute_time(task, NodeId::HEAD),
            _ if self.workers > 0 => {
                self.worker_nodes().map(|n| self.data_task_time(graph, task, n)).sum::<f64>()
                    / self.workers as f64
            }
            _ => 0.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("graph contains target tasks but the cost model has no workers")]
    NoWorkers,
}

/// Upward rank of every task: own mean cost plus the longest mean-cost path
/// (including mean communication) to a sink.
pub fn upward_rank(graph: &TaskGraph, cost: &CostModel) -> Vec<f64> {
    let mut rank = vec![0.0; graph.len()];
    for t in graph.tasks().iter().rev() {
        let tail = graph
            .successors(t.id)
            .map(|e| cost.mean_comm_time(graph.buffer_size(e.buffer)) + rank[e.consumer.0])
            .fold(0.0, f64::max);
        rank[t.id.0] = cost.mean_cost(graph, t) + tail;
    }
    rank
}

/// Task-to-node mapping with start/finish estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub assignment: Vec<NodeId>,
    pub est: Vec<f64>,
    pub eft: Vec<f64>,
    /// Compute tasks (host and target) per node, ordered by start time.
    pub node_tasks: Vec<Vec<TaskId>>,
    pub makespan: f64,
    pub rank: Vec<f64>,
    /// Rank order in which tasks were processed.
    pub order: Vec<TaskId>,
    /// For data tasks: the target task whose placement decided their node.
    pub anchors: Vec<Option<TaskId>>,
    /// Sequence number at which each task's node was decided.
    pub decided_at: Vec<usize>,
    /// Counted EFT evaluations plus predecessor-edge inspections.
    pub ops: u64,
}

impl Schedule {
    pub fn node_of(&self, t: TaskId) -> NodeId {
        self.assignment[t.0]
    }

    /// CSV with header `task_id,node,est_us,eft_us`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,node,est_us,eft_us\n");
        for (i, node) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{},{},{:.3},{:.3}", i, node, self.est[i], self.eft[i]);
        }
        out
    }
}

/// Operation count recorded while scheduling. Bounded by
/// [`SCHEDULE_COST_CONSTANT`]` * e * p` for graphs where every task has at
/// least one incident edge.
pub fn schedule_cost(schedule: &Schedule) -> u64 {
    schedule.ops
}

/// Measured bound constant: each task costs `p * (1 + indegree)` operations,
/// so the total is `p * (v + e) <= 3 * e * p` whenever `v <= 2e`.
pub const SCHEDULE_COST_CONSTANT: f64 = 3.0;

fn rank_order(rank: &[f64]) -> Vec<TaskId> {
    let mut order: Vec<TaskId> = (0..rank.len()).map(TaskId).collect();
    order.sort_by(|a, b| match rank[b.0].total_cmp(&rank[a.0]) {
        Ordering::Equal => a.cmp(b),
        o => o,
    });
    order
}

/// Earliest start `>= ready` on a timeline sorted by start with room for `dur`.
fn insertion_start(timeline: &[(f64, f64, TaskId)], ready: f64, dur: f64) -> f64 {
    let mut start = ready;
    for &(s, f, _) in timeline {
        if start + dur <= s {
            break;
        }
        if f > start {
            start = f;
        }
    }
    start
}

struct Heft<'a> {
    graph: &'a TaskGraph,
    cost: &'a CostModel,
    node: Vec<Option<NodeId>>,
    timed: Vec<bool>,
    est: Vec<f64>,
    eft: Vec<f64>,
    anchors: Vec<Option<TaskId>>,
    decided_at: Vec<usize>,
    seq: usize,
    timelines: Vec<Vec<(f64, f64, TaskId)>>,
    ops: u64,
}

impl<'a> Heft<'a> {
    fn decide(&mut self, t: TaskId, node: NodeId, anchor: Option<TaskId>) {
        self.node[t.0] = Some(node);
        self.anchors[t.0] = anchor;
        self.decided_at[t.0] = self.seq;
        self.seq += 1;
    }

    /// Time a data task on its decided node (head if still undecided),
    /// timing any untimed data predecessors first.
    fn ensure_timed(&mut self, d: TaskId) {
        if self.timed[d.0] {
            return;
        }
        let preds: Vec<_> = self.graph.predecessors(d).copied().collect();
        for e in &preds {
            if !self.timed[e.producer.0] {
                self.ensure_timed(e.producer);
            }
        }
        if self.node[d.0].is_none() {
            self.decide(d, NodeId::HEAD, None);
        }
        let n = self.node[d.0].unwrap();
        let est = self.data_ready(d, n);
        self.est[d.0] = est;
        self.eft[d.0] = est + self.cost.data_task_time(self.graph, self.graph.task(d), n);
        self.timed[d.0] = true;
    }

    /// Earliest moment every predecessor's output of `t` can be on `node`;
    /// all predecessors must be timed.
    fn data_ready(&mut self, t: TaskId, node: NodeId) -> f64 {
        let mut ready = 0.0f64;
        for e in self.graph.predecessors(t) {
            self.ops += 1;
            let u = e.producer.0;
            let src = self.node[u].expect("timed predecessor has a node");
            ready = ready.max(self.eft[u] + self.cost.comm_time(self.graph.buffer_size(e.buffer), src, node));
        }
        ready
    }

    fn place_compute(&mut self, t: TaskId, node: NodeId, start: f64, finish: f64) {
        let tl = &mut self.timelines[node.index()];
        let pos = tl.partition_point(|&(s, _, _)| s <= start);
        tl.insert(pos, (start, finish, t));
        self.est[t.0] = start;
        self.eft[t.0] = finish;
        self.timed[t.0] = true;
    }

    fn schedule_host(&mut self, t: TaskId) {
        let preds: Vec<TaskId> = self.graph.predecessor_tasks(t);
        for u in preds {
            self.ensure_timed(u);
        }
        self.decide(t, NodeId::HEAD, None);
        self.ops += 1;
        let ready = self.data_ready(t, NodeId::HEAD);
        let dur = self.cost.compute_time(self.graph.task(t), NodeId::HEAD);
        let start = insertion_start(&self.timelines[0], ready, dur);
        self.place_compute(t, NodeId::HEAD, start, start + dur);
    }

    fn schedule_target(&mut self, t: TaskId) {
        let graph = self.graph;
        // Data predecessors still waiting for a node are placed with `t`.
        // Sorted by id, which is a topological order.
        let mut floating = Vec::new();
        for u in graph.predecessor_tasks(t) {
            if graph.task(u).kind.is_data() && self.node[u.0].is_none() {
                floating.push(u);
            }
        }
        for &u in &floating {
            for pp in graph.predecessor_tasks(u) {
                if !floating.contains(&pp) {
                    self.ensure_timed(pp);
                }
            }
        }
        for u in graph.predecessor_tasks(t) {
            if !floating.contains(&u) {
                self.ensure_timed(u);
            }
        }

        let task = graph.task(t);
        let mut best: Option<(f64, f64, NodeId)> = None;
        for n in self.cost.worker_nodes() {
            self.ops += 1;
            let hyp = self.floating_finish(&floating, n);
            let mut ready = 0.0f64;
            for e in graph.predecessors(t) {
                self.ops += 1;
                let u = e.producer;
                let u_finish = match floating.iter().position(|&f| f == u) {
                    Some(i) => hyp[i],
                    None => {
                        let src = self.node[u.0].unwrap();
                        self.eft[u.0] + self.cost.comm_time(graph.buffer_size(e.buffer), src, n)
                    }
                };
                ready = ready.max(u_finish);
            }
            let dur = self.cost.compute_time(task, n);
            let start = insertion_start(&self.timelines[n.index()], ready, dur);
            let finish = start + dur;
            if best.is_none_or(|(_, f, _)| finish < f) {
                best = Some((start, finish, n));
            }
        }
        let (start, finish, n) = best.expect("at least one worker");

        for &u in &floating {
            self.decide(u, n, Some(t));
            let est = self.data_ready(u, n);
            self.est[u.0] = est;
            self.eft[u.0] = est + self.cost.data_task_time(graph, graph.task(u), n);
            self.timed[u.0] = true;
        }
        self.decide(t, n, None);
        self.place_compute(t, n, start, finish);
        for s in graph.successor_tasks(t) {
            if graph.task(s).kind.is_data() && self.node[s.0].is_none() {
                self.decide(s, n, Some(t));
            }
        }
    }

    /// Finish times of the undecided data tasks in `floating` if they were
    /// all placed on `n`.
    fn floating_finish(&self, floating: &[TaskId], n: NodeId) -> Vec<f64> {
        let mut fin: Vec<f64> = Vec::with_capacity(floating.len());
        for &u in floating {
            let mut ready = 0.0f64;
            for e in self.graph.predecessors(u) {
                let p = e.producer;
                let f = match floating.iter().position(|&x| x == p) {
                    Some(i) => fin[i],
                    None => {
                        let src = self.node[p.0].unwrap();
                        self.eft[p.0] + self.cost.comm_time(self.graph.buffer_size(e.buffer), src, n)
                    }
                };
                ready = ready.max(f);
            }
            fin.push(ready + self.cost.data_task_time(self.graph, self.graph.task(u), n));
        }
        fin
    }

    fn has_adjacent_target(&self, t: TaskId) -> bool {
        let g = self.graph;
        g.predecessors(t)
            .map(|e| e.producer)
            .chain(g.successors(t).map(|e| e.consumer))
            .any(|u| g.task(u).kind == TaskKind::TargetTask)
    }
}

/// Map every task of `graph` to a node. Deterministic for a given input.
pub fn heft_schedule(graph: &TaskGraph, cost: &CostModel) -> Result<Schedule, ScheduleError> {
    let has_target = graph.tasks().iter().any(|t| t.kind == TaskKind::TargetTask);
    if cost.workers == 0 && has_target {
        return Err(ScheduleError::NoWorkers);
    }
    let n = graph.len();
    let rank = upward_rank(graph, cost);
    let order = rank_order(&rank);
    let mut h = Heft {
        graph,
        cost,
        node: vec![None; n],
        timed: vec![false; n],
        est: vec![0.0; n],
        eft: vec![0.0; n],
        anchors: vec![None; n],
        decided_at: vec![0; n],
        seq: 0,
        timelines: vec![Vec::new(); cost.node_count()],
        ops: 0,
    };
    for &t in &order {
        match graph.task(t).kind {
            TaskKind::HostTask => h.schedule_host(t),
            TaskKind::TargetTask => h.schedule_target(t),
            _ => {
                if h.node[t.0].is_some() || !h.has_adjacent_target(t) {
                    h.ops += 1;
                    h.ensure_timed(t);
                }
            }
        }
    }
    for &t in &order {
        h.ensure_timed(t);
    }
    let node_tasks = h.timelines.iter().map(|tl| tl.iter().map(|&(_, _, t)| t).collect()).collect();
    let makespan = h.eft.iter().copied().fold(0.0, f64::max);
    Ok(Schedule {
        assignment: h.node.into_iter().map(|x| x.unwrap()).collect(),
        est: h.est,
        eft: h.eft,
        node_tasks,
        makespan,
        rank,
        order,
        anchors: h.anchors,
        decided_at: h.decided_at,
        ops: h.ops,
    })
}

const EPS: f64 = 1e-6;

/// Independent post-hoc validation of every schedule invariant: precedence
/// with communication delay, per-node non-overlap, host pinning, data-task
/// co-location, and consistent durations.
pub fn check_schedule(graph: &TaskGraph, cost: &CostModel, s: &Schedule) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let n = graph.len();
    if s.assignment.len() != n || s.est.len() != n || s.eft.len() != n {
        return Err(vec!["schedule length does not match graph".into()]);
    }
    for t in graph.tasks() {
        let i = t.id.0;
        let node = s.assignment[i];
        if node.index() > cost.workers {
            errs.push(format!("task {i} on unknown node {node}"));
            continue;
        }
        let dur = match t.kind {
            TaskKind::HostTask => {
                if !node.is_head() {
                    errs.push(format!("host task {i} not pinned to head (node {node})"));
                }
                cost.compute_time(t, node)
            }
            TaskKind::TargetTask => {
                if node.is_head() {
                    errs.push(format!("target task {i} placed on head"));
                }
                cost.compute_time(t, node)
            }
            _ => cost.data_task_time(graph, t, node),
        };
        if (s.eft[i] - s.est[i] - dur).abs() > EPS * (1.0 + dur) {
            errs.push(format!("task {i}: eft-est {} != duration {dur}", s.eft[i] - s.est[i]));
        }
        if s.est[i] < -EPS {
            errs.push(format!("task {i}: negative start"));
        }
        if t.kind.is_data() {
            let adjacent: Vec<TaskId> = graph
                .predecessors(t.id)
                .map(|e| e.producer)
                .chain(graph.successors(t.id).map(|e| e.consumer))
                .filter(|u| graph.task(*u).kind == TaskKind::TargetTask)
                .collect();
            let placed_before: Vec<&TaskId> =
                adjacent.iter().filter(|u| s.decided_at[u.0] < s.decided_at[i]).collect();
            match s.anchors[i] {
                Some(a) => {
                    if !adjacent.contains(&a) {
                        errs.push(format!("data task {i} anchored to non-adjacent task {a}"));
                    } else if s.assignment[a.0] != node {
                        errs.push(format!("data task {i} not co-located with target {a}"));
                    }
                    if let Some(first) = placed_before.iter().min_by_key(|u| s.decided_at[u.0]) {
                        if **first != a {
                            errs.push(format!("data task {i} anchored to {a}, but {first} was placed first"));
                        }
                    }
                }
                None => {
                    if !node.is_head() {
                        errs.push(format!("unanchored data task {i} not on head"));
                    }
                    if !placed_before.is_empty() {
                        errs.push(format!("data task {i} left unanchored although a target neighbour was placed"));
                    }
                }
            }
        }
    }
    for e in graph.edges() {
        let (u, v) = (e.producer.0, e.consumer.0);
        let c = cost.comm_time(graph.buffer_size(e.buffer), s.assignment[u], s.assignment[v]);
        if s.est[v] + EPS * (1.0 + s.est[v]) < s.eft[u] + c {
            errs.push(format!("edge {u}->{v}: start {} before ready {}", s.est[v], s.eft[u] + c));
        }
    }
    for node in 0..=cost.workers {
        let mut iv: Vec<(f64, f64, usize)> = graph
            .tasks()
            .iter()
            .filter(|t| !t.kind.is_data() && s.assignment[t.id.0].index() == node)
            .map(|t| (s.est[t.id.0], s.eft[t.id.0], t.id.0))
            .collect();
        iv.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in iv.windows(2) {
            if w[1].0 + EPS * (1.0 + w[1].0) < w[0].1 {
                errs.push(format!("node {node}: tasks {} and {} overlap", w[0].2, w[1].2));
            }
        }
    }
    let mk = s.eft.iter().copied().fold(0.0, f64::max);
    if (mk - s.makespan).abs() > EPS * (1.0 + mk) {
        errs.push(format!("makespan {} != max eft {mk}", s.makespan));
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
