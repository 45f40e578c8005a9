//! Programs as ordered task lists with buffer dependency annotations, and the
//! precedence DAG derived from them under serial program-order semantics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

/// Dense task index in program order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskId(pub usize);

impl TaskId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BufferId(pub u64);

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Node 0 is the head; workers are `1..=p`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const HEAD: NodeId = NodeId(0);

    pub fn is_head(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Buffer {
    pub id: BufferId,
    pub size_bytes: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum DepDirection {
    In,
    Out,
    InOut,
}

impl DepDirection {
    pub fn reads(self) -> bool {
        matches!(self, DepDirection::In | DepDirection::InOut)
    }

    pub fn writes(self) -> bool {
        matches!(self, DepDirection::Out | DepDirection::InOut)
    }

    pub fn as_u8(self) -> u8 {
        match self {
            DepDirection::In => 0,
            DepDirection::Out => 1,
            DepDirection::InOut => 2,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(DepDirection::In),
            1 => Some(DepDirection::Out),
            2 => Some(DepDirection::InOut),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Dep {
    pub buffer: BufferId,
    pub dir: DepDirection,
}

impl Dep {
    pub fn new(buffer: BufferId, dir: DepDirection) -> Self {
        Dep { buffer, dir }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    HostTask,
    TargetTask,
    TargetDataEnter,
    /// `release` drops every worker copy after the buffer is back on the head.
    TargetDataExit { release: bool },
}

impl TaskKind {
    pub fn is_data(self) -> bool {
        matches!(self, TaskKind::TargetDataEnter | TaskKind::TargetDataExit { .. })
    }

    pub fn token(self) -> &'static str {
        match self {
            TaskKind::HostTask => "host",
            TaskKind::TargetTask => "target",
            TaskKind::TargetDataEnter => "enter",
            TaskKind::TargetDataExit { release: false } => "exit",
            TaskKind::TargetDataExit { release: true } => "exit-release",
        }
    }

    pub fn from_token(s: &str) -> Option<Self> {
        Some(match s {
            "host" => TaskKind::HostTask,
            "target" => TaskKind::TargetTask,
            "enter" => TaskKind::TargetDataEnter,
            "exit" => TaskKind::TargetDataExit { release: false },
            "exit-release" => TaskKind::TargetDataExit { release: true },
            _ => return None,
        })
    }
}

/// What a task body does when executed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KernelDescriptor {
    /// Busy-loop iteration count.
    pub iterations: u64,
    /// Buffers the body writes beyond its `Out`/`InOut` deps. Any entry here
    /// that is not declared as a write dependency is reported by [`validate`].
    pub body_writes: Vec<BufferId>,
}

impl KernelDescriptor {
    pub fn with_iterations(iterations: u64) -> Self {
        KernelDescriptor { iterations, body_writes: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub deps: Vec<Dep>,
    /// Estimated compute duration in microseconds. Zero for data tasks; the
    /// scheduler derives their cost from the transfer model.
    pub cost_us: f64,
    pub kernel: KernelDescriptor,
}

impl Task {
    pub fn dep_on(&self, buffer: BufferId) -> Option<DepDirection> {
        self.deps.iter().find(|d| d.buffer == buffer).map(|d| d.dir)
    }

    /// Whether a dependency with direction `dir` orders like a write when
    /// deriving edges. Enter and releasing exit move or drop copies, so they
    /// order as writes whatever they declare; a plain exit only reads.
    pub fn orders_as_write(&self, dir: DepDirection) -> bool {
        match self.kind {
            TaskKind::TargetDataEnter | TaskKind::TargetDataExit { release: true } => true,
            TaskKind::TargetDataExit { release: false } => false,
            TaskKind::HostTask | TaskKind::TargetTask => dir.writes(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown buffer {0}")]
    UnknownBuffer(BufferId),
    #[error("program is sealed; no more tasks can be added")]
    ProgramSealed,
    #[error("program must be sealed before deriving edges")]
    NotSealed,
    #[error("data task needs at least one dependency")]
    EmptyDataDeps,
    #[error("buffer {0} listed more than once in one task")]
    DuplicateDep(BufferId),
    #[error("target task cost must be positive, got {0}")]
    NonPositiveCost(f64),
}

/// A program under construction: buffers plus tasks in program order.
#[derive(Clone, Debug, Default)]
pub struct Program {
    buffers: Vec<Buffer>,
    tasks: Vec<Task>,
    sealed: bool,
}

impl Program {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_buffer(&mut self, size_bytes: u64) -> BufferId {
        let id = BufferId(self.buffers.len() as u64);
        self.buffers.push(Buffer { id, size_bytes });
        id
    }

    pub fn add_task(
        &mut self,
        kind: TaskKind,
        deps: Vec<Dep>,
        cost_us: f64,
        kernel: KernelDescriptor,
    ) -> Result<TaskId, GraphError> {
        if self.sealed {
            return Err(GraphError::ProgramSealed);
        }
        let mut seen = HashSet::new();
        for d in &deps {
            if self.buffer(d.buffer).is_none() {
                return Err(GraphError::UnknownBuffer(d.buffer));
            }
            if !seen.insert(d.buffer) {
                return Err(GraphError::DuplicateDep(d.buffer));
            }
        }
        if kind.is_data() && deps.is_empty() {
            return Err(GraphError::EmptyDataDeps);
        }
        if kind == TaskKind::TargetTask && !(cost_us > 0.0) {
            return Err(GraphError::NonPositiveCost(cost_us));
        }
        let cost_us = if kind.is_data() { 0.0 } else { cost_us };
        let id = TaskId(self.tasks.len());
        self.tasks.push(Task { id, kind, deps, cost_us, kernel });
        Ok(id)
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn buffer(&self, id: BufferId) -> Option<&Buffer> {
        self.buffers.get(id.0 as usize).filter(|b| b.id == id)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub producer: TaskId,
    pub consumer: TaskId,
    pub buffer: BufferId,
}

/// Sealed program plus derived precedence edges. Immutable.
#[derive(Clone, Debug)]
pub struct TaskGraph {
    program: Program,
    edges: Vec<Edge>,
    succ: Vec<Vec<usize>>,
    pred: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn from_parts(program: Program, mut edges: Vec<Edge>) -> Self {
        edges.sort();
        edges.dedup();
        let n = program.tasks.len();
        let mut succ = vec![Vec::new(); n];
        let mut pred = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            succ[e.producer.0].push(i);
            pred[e.consumer.0].push(i);
        }
        TaskGraph { program, edges, succ, pred }
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn tasks(&self) -> &[Task] {
        &self.program.tasks
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.program.tasks[id.0]
    }

    pub fn len(&self) -> usize {
        self.program.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.program.tasks.is_empty()
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.program.buffers
    }

    pub fn buffer_size(&self, id: BufferId) -> u64 {
        self.program.buffer(id).map_or(0, |b| b.size_bytes)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Number of directed edges (`e`).
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn successors(&self, t: TaskId) -> impl Iterator<Item = &Edge> + '_ {
        self.succ[t.0].iter().map(move |&i| &self.edges[i])
    }

    pub fn predecessors(&self, t: TaskId) -> impl Iterator<Item = &Edge> + '_ {
        self.pred[t.0].iter().map(move |&i| &self.edges[i])
    }

    /// Distinct successor tasks, ascending.
    pub fn successor_tasks(&self, t: TaskId) -> Vec<TaskId> {
        let mut v: Vec<TaskId> = self.successors(t).map(|e| e.consumer).collect();
        v.dedup();
        v
    }

    /// Distinct predecessor tasks, ascending.
    pub fn predecessor_tasks(&self, t: TaskId) -> Vec<TaskId> {
        let mut v: Vec<TaskId> = self.predecessors(t).map(|e| e.producer).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Export in the line-oriented text format described in `docs/formats.md`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# taskmesh-graph v1\n");
        let _ = writeln!(out, "nodes {}", self.len());
        for t in self.tasks() {
            let _ = writeln!(out, "{} {} {}", t.id, t.kind.token(), t.cost_us);
        }
        let _ = writeln!(out, "edges {}", self.edges.len());
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.producer, e.consumer, e.buffer);
        }
        out
    }
}

/// Node and edge lists read back from [`TaskGraph::to_text`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphText {
    pub nodes: Vec<(TaskId, TaskKind, f64)>,
    pub edges: Vec<Edge>,
}

pub fn parse_graph_text(text: &str) -> Result<GraphText, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let header = |lines: &mut dyn Iterator<Item = (usize, &str)>, word: &str| -> Result<usize, String> {
        let (no, l) = lines.next().ok_or_else(|| format!("missing '{word}' header"))?;
        let mut it = l.split_whitespace();
        if it.next() != Some(word) {
            return Err(format!("line {}: expected '{word} <count>'", no + 1));
        }
        it.next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| format!("line {}: bad count", no + 1))
    };
    let n = header(&mut lines, "nodes")?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let (no, l) = lines.next().ok_or("truncated node list")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        let bad = || format!("line {}: malformed node line", no + 1);
        if f.len() != 3 {
            return Err(bad());
        }
        let id = f[0].parse().map_err(|_| bad())?;
        let kind = TaskKind::from_token(f[1]).ok_or_else(bad)?;
        let cost = f[2].parse().map_err(|_| bad())?;
        nodes.push((TaskId(id), kind, cost));
    }
    let e = header(&mut lines, "edges")?;
    let mut edges = Vec::with_capacity(e);
    for _ in 0..e {
        let (no, l) = lines.next().ok_or("truncated edge list")?;
        let f: Vec<u64> = l
            .split_whitespace()
            .map(|x| x.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("line {}: malformed edge line", no + 1))?;
        if f.len() != 3 {
            return Err(format!("line {}: malformed edge line", no + 1));
        }
        edges.push(Edge {
            producer: TaskId(f[0] as usize),
            consumer: TaskId(f[1] as usize),
            buffer: BufferId(f[2]),
        });
    }
    Ok(GraphText { nodes, edges })
}

/// Derive precedence edges: RAW and WAW edges from the last writer of each
/// buffer, plus WAR edges from every reader to the next writer. Read-read
/// pairs are independent. Transitively redundant edges are kept. Data tasks
/// order as described by [`Task::orders_as_write`].
pub fn derive_edges(program: &Program) -> Result<TaskGraph, GraphError> {
    if !program.is_sealed() {
        return Err(GraphError::NotSealed);
    }
    struct BufState {
        last_writer: Option<TaskId>,
        readers: Vec<TaskId>,
    }
    let mut state: BTreeMap<BufferId, BufState> = BTreeMap::new();
    let mut edges = Vec::new();
    for task in program.tasks() {
        for dep in &task.deps {
            let st = state
                .entry(dep.buffer)
                .or_insert(BufState { last_writer: None, readers: Vec::new() });
            if let Some(w) = st.last_writer {
                edges.push(Edge { producer: w, consumer: task.id, buffer: dep.buffer });
            }
            if task.orders_as_write(dep.dir) {
                for &r in &st.readers {
                    if r != task.id {
                        edges.push(Edge { producer: r, consumer: task.id, buffer: dep.buffer });
                    }
                }
                st.readers.clear();
                st.last_writer = Some(task.id);
            } else {
                st.readers.push(task.id);
            }
        }
    }
    Ok(TaskGraph::from_parts(program.clone(), edges))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Edge does not go strictly forward in program order.
    BackwardEdge(Edge),
    /// Edge references a buffer missing from one endpoint's dep list.
    EdgeBufferMismatch(Edge),
    DuplicateDep { task: TaskId, buffer: BufferId },
    EmptyDataDeps(TaskId),
    UnknownBuffer { task: TaskId, buffer: BufferId },
    /// Kernel writes a buffer that is not declared `Out`/`InOut`.
    UndeclaredWrite { task: TaskId, buffer: BufferId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BackwardEdge(e) => write!(f, "backward edge {}->{}", e.producer, e.consumer),
            Violation::EdgeBufferMismatch(e) => {
                write!(f, "edge {}->{} on buffer {} not in both dep lists", e.producer, e.consumer, e.buffer)
            }
            Violation::DuplicateDep { task, buffer } => write!(f, "task {task} lists buffer {buffer} twice"),
            Violation::EmptyDataDeps(t) => write!(f, "data task {t} has no deps"),
            Violation::UnknownBuffer { task, buffer } => write!(f, "task {task} uses unknown buffer {buffer}"),
            Violation::UndeclaredWrite { task, buffer } => {
                write!(f, "undeclared write: task {task} writes buffer {buffer}")
            }
        }
    }
}

/// Check a derived graph. Never fails; returns every violation found.
pub fn validate(graph: &TaskGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    for e in graph.edges() {
        if e.producer >= e.consumer || e.consumer.0 >= graph.len() {
            out.push(Violation::BackwardEdge(*e));
            continue;
        }
        let p = graph.task(e.producer).dep_on(e.buffer);
        let c = graph.task(e.consumer).dep_on(e.buffer);
        if p.is_none() || c.is_none() {
            out.push(Violation::EdgeBufferMismatch(*e));
        }
    }
    for t in graph.tasks() {
        let mut seen = HashSet::new();
        for d in &t.deps {
            if graph.program().buffer(d.buffer).is_none() {
                out.push(Violation::UnknownBuffer { task: t.id, buffer: d.buffer });
            }
            if !seen.insert(d.buffer) {
                out.push(Violation::DuplicateDep { task: t.id, buffer: d.buffer });
            }
        }
        if t.kind.is_data() && t.deps.is_empty() {
            out.push(Violation::EmptyDataDeps(t.id));
        }
        for &b in &t.kernel.body_writes {
            if !t.dep_on(b).is_some_and(DepDirection::writes) {
                out.push(Violation::UndeclaredWrite { task: t.id, buffer: b });
            }
        }
    }
    out
}

/// Single-buffer offloading walkthrough: enter A, two in-place target tasks,
/// then exit A with release.
pub fn listing_program(size_bytes: u64, cost_us: f64, iterations: u64) -> Program {
    let mut p = Program::new();
    let a = p.add_buffer(size_bytes);
    let k = KernelDescriptor::with_iterations(iterations);
    p.add_task(TaskKind::TargetDataEnter, vec![Dep::new(a, DepDirection::Out)], 0.0, KernelDescriptor::default())
        .expect("enter");
    p.add_task(TaskKind::TargetTask, vec![Dep::new(a, DepDirection::InOut)], cost_us, k.clone())
        .expect("foo");
    p.add_task(TaskKind::TargetTask, vec![Dep::new(a, DepDirection::InOut)], cost_us, k)
        .expect("bar");
    p.add_task(
        TaskKind::TargetDataExit { release: true },
        vec![Dep::new(a, DepDirection::Out)],
        0.0,
        KernelDescriptor::default(),
    )
    .expect("exit");
    p.seal();
    p
}

/// Seeded random program for property tests and fuzzing: up to `max_tasks`
/// tasks over up to `max_buffers` buffers, mixing host, target, enter and
/// exit tasks with random dependency directions.
pub fn random_program(seed: u64, max_tasks: usize, max_buffers: usize) -> Program {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut p = Program::new();
    let nbuf = rng.gen_range(1..=max_buffers.max(1));
    let bufs: Vec<BufferId> = (0..nbuf).map(|_| p.add_buffer(rng.gen_range(1..=256))).collect();
    for _ in 0..rng.gen_range(1..=max_tasks.max(1)) {
        let roll = rng.gen_range(0..20);
        let kind = match roll {
            0..=1 => TaskKind::HostTask,
            2..=4 => TaskKind::TargetDataEnter,
            5..=7 => TaskKind::TargetDataExit { release: rng.gen_bool(0.5) },
            _ => TaskKind::TargetTask,
        };
        let mut pool = bufs.clone();
        let take = rng.gen_range(1..=pool.len());
        let mut deps = Vec::with_capacity(take);
        for _ in 0..take {
            let b = pool.swap_remove(rng.gen_range(0..pool.len()));
            let dir = match kind {
                TaskKind::TargetDataEnter => DepDirection::Out,
                TaskKind::TargetDataExit { .. } => DepDirection::In,
                _ => [DepDirection::In, DepDirection::Out, DepDirection::InOut][rng.gen_range(0..3)],
            };
            deps.push(Dep::new(b, dir));
        }
        let cost = rng.gen_range(1..=1000) as f64;
        let k = KernelDescriptor::with_iterations(rng.gen_range(0..1000));
        p.add_task(kind, deps, cost, k).expect("valid random task");
    }
    p.seal();
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_edges(program: &Program) -> Vec<Edge> {
        let tasks = program.tasks();
        let mut out = Vec::new();
        for b in program.buffers() {
            let touch: Vec<(usize, DepDirection)> = tasks
                .iter()
                .filter_map(|t| t.dep_on(b.id).map(|d| (t.id.0, d)))
                .collect();
            for (x, &(i, di)) in touch.iter().enumerate() {
                for &(j, dj) in &touch[x + 1..] {
                    let intervening_writer = touch.iter().any(|&(k, dk)| k > i && k < j && dk.writes());
                    if intervening_writer {
                        continue;
                    }
                    let raw_or_waw = di.writes();
                    let war = !di.writes() && dj.writes();
                    if raw_or_waw || war {
                        out.push(Edge { producer: TaskId(i), consumer: TaskId(j), buffer: b.id });
                    }
                }
            }
        }
        out.sort();
        out
    }

    fn build(nbuf: usize, spec: &[Vec<(usize, DepDirection)>]) -> Program {
        let mut p = Program::new();
        for _ in 0..nbuf {
            p.add_buffer(8);
        }
        for deps in spec {
            let deps = deps.iter().map(|&(b, d)| Dep::new(BufferId(b as u64), d)).collect();
            p.add_task(TaskKind::TargetTask, deps, 1.0, KernelDescriptor::default()).unwrap();
        }
        p.seal();
        p
    }

    #[test]
    fn data_tasks_order_by_effect_not_declared_direction() {
        use DepDirection::*;
        let mut p = Program::new();
        let a = p.add_buffer(4);
        let k = KernelDescriptor::default;
        for (kind, dir) in [
            (TaskKind::TargetDataEnter, In),
            (TaskKind::TargetTask, In),
            (TaskKind::TargetDataExit { release: true }, In),
            (TaskKind::TargetTask, In),
            (TaskKind::TargetDataExit { release: false }, Out),
            (TaskKind::TargetTask, In),
        ] {
            p.add_task(kind, vec![Dep::new(a, dir)], 1.0, k()).unwrap();
        }
        p.seal();
        let g = derive_edges(&p).unwrap();
        let got: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.producer.0, e.consumer.0)).collect();
        assert_eq!(got, vec![(0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (2, 5)]);
    }

    #[test]
    fn first_task_gets_id_zero() {
        let mut p = Program::new();
        let a = p.add_buffer(4);
        let t = p
            .add_task(TaskKind::TargetTask, vec![Dep::new(a, DepDirection::In)], 1.0, KernelDescriptor::default())
            .unwrap();
        assert_eq!(t, TaskId(0));
    }

    #[test]
    fn add_task_errors() {
        let mut p = Program::new();
        let a = p.add_buffer(4);
        assert_eq!(
            p.add_task(TaskKind::TargetDataEnter, vec![], 0.0, KernelDescriptor::default()),
            Err(GraphError::EmptyDataDeps)
        );
        assert_eq!(
            p.add_task(
                TaskKind::TargetTask,
                vec![Dep::new(BufferId(9), DepDirection::In)],
                1.0,
                KernelDescriptor::default()
            ),
            Err(GraphError::UnknownBuffer(BufferId(9)))
        );
        assert_eq!(
            p.add_task(
                TaskKind::TargetTask,
                vec![Dep::new(a, DepDirection::In), Dep::new(a, DepDirection::Out)],
                1.0,
                KernelDescriptor::default()
            ),
            Err(GraphError::DuplicateDep(a))
        );
        assert!(matches!(
            p.add_task(TaskKind::TargetTask, vec![], 0.0, KernelDescriptor::default()),
            Err(GraphError::NonPositiveCost(_))
        ));
        p.seal();
        assert_eq!(
            p.add_task(TaskKind::HostTask, vec![], 1.0, KernelDescriptor::default()),
            Err(GraphError::ProgramSealed)
        );
    }

    #[test]
    fn unsealed_program_is_rejected() {
        let p = Program::new();
        assert_eq!(derive_edges(&p).unwrap_err(), GraphError::NotSealed);
    }

    #[test]
    fn listing_chain() {
        let p = listing_program(64, 50_000.0, 0);
        assert_eq!(p.tasks().len(), 4);
        let g = derive_edges(&p).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.producer.0, e.consumer.0)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 3)]);
        assert!(validate(&g).is_empty());
    }

    #[test]
    fn read_read_is_independent() {
        let p = build(1, &[vec![(0, DepDirection::In)], vec![(0, DepDirection::In)]]);
        assert_eq!(derive_edges(&p).unwrap().edge_count(), 0);
    }

    #[test]
    fn war_edge_from_reader_to_next_writer() {
        let p = build(
            1,
            &[vec![(0, DepDirection::Out)], vec![(0, DepDirection::In)], vec![(0, DepDirection::Out)]],
        );
        let g = derive_edges(&p).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.producer.0, e.consumer.0)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn empty_graph_validates() {
        let mut p = Program::new();
        p.seal();
        assert!(validate(&derive_edges(&p).unwrap()).is_empty());
    }

    #[test]
    fn undeclared_write_is_reported() {
        let mut p = Program::new();
        let a = p.add_buffer(4);
        let kernel = KernelDescriptor { iterations: 0, body_writes: vec![a] };
        p.add_task(TaskKind::TargetTask, vec![Dep::new(a, DepDirection::In)], 1.0, kernel).unwrap();
        p.seal();
        let v = validate(&derive_edges(&p).unwrap());
        assert_eq!(v, vec![Violation::UndeclaredWrite { task: TaskId(0), buffer: a }]);
        assert!(v[0].to_string().contains("undeclared write"));
    }

    #[test]
    fn text_export_round_trips() {
        let g = derive_edges(&listing_program(16, 5.5, 3)).unwrap();
        let text = g.to_text();
        let parsed = parse_graph_text(&text).unwrap();
        assert_eq!(parsed.edges, g.edges());
        assert_eq!(parsed.nodes.len(), 4);
        assert_eq!(parsed.nodes[1], (TaskId(1), TaskKind::TargetTask, 5.5));
        assert_eq!(parsed.nodes[3].1, TaskKind::TargetDataExit { release: true });
    }

    #[test]
    fn exhaustive_small_programs_match_oracle() {
        // Every assignment of {absent, In, Out, InOut} per (task, buffer) for
        // up to 4 tasks and 2 buffers, plus a sampled sweep at 6 tasks below.
        const OPTS: [Option<DepDirection>; 4] =
            [None, Some(DepDirection::In), Some(DepDirection::Out), Some(DepDirection::InOut)];
        for ntasks in 1..=4usize {
            let cells = ntasks * 2;
            for code in 0..4usize.pow(cells as u32) {
                let mut c = code;
                let mut spec = vec![Vec::new(); ntasks];
                for t in 0..ntasks {
                    for b in 0..2 {
                        if let Some(d) = OPTS[c % 4] {
                            spec[t].push((b, d));
                        }
                        c /= 4;
                    }
                }
                let p = build(2, &spec);
                assert_eq!(derive_edges(&p).unwrap().edges(), brute_force_edges(&p).as_slice());
            }
        }
    }

    #[test]
    fn exhaustive_six_tasks_single_buffer_matches_oracle() {
        const OPTS: [DepDirection; 3] = [DepDirection::In, DepDirection::Out, DepDirection::InOut];
        for ntasks in 5..=6usize {
            for code in 0..4usize.pow(ntasks as u32) {
                let mut c = code;
                let mut spec = vec![Vec::new(); ntasks];
                for t in spec.iter_mut() {
                    if c % 4 != 0 {
                        t.push((0, OPTS[c % 4 - 1]));
                    }
                    c /= 4;
                }
                let p = build(1, &spec);
                assert_eq!(derive_edges(&p).unwrap().edges(), brute_force_edges(&p).as_slice());
            }
        }
    }

    fn arb_program(max_tasks: usize, nbuf: usize) -> impl Strategy<Value = Vec<Vec<(usize, DepDirection)>>> {
        let dir = prop_oneof![Just(DepDirection::In), Just(DepDirection::Out), Just(DepDirection::InOut)];
        let task = proptest::collection::btree_map(0..nbuf, dir, 0..=nbuf)
            .prop_map(|m| m.into_iter().collect::<Vec<_>>());
        proptest::collection::vec(task, 0..=max_tasks)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn random_programs_match_oracle(spec in arb_program(10, 3)) {
            let p = build(3, &spec);
            let g = derive_edges(&p).unwrap();
            let expected = brute_force_edges(&p);
            prop_assert_eq!(g.edges(), expected.as_slice());
        }

        #[test]
        fn edges_go_forward_and_derivation_is_idempotent(spec in arb_program(10, 4)) {
            let p = build(4, &spec);
            let g = derive_edges(&p).unwrap();
            for e in g.edges() {
                prop_assert!(e.producer < e.consumer);
            }
            let again = derive_edges(g.program()).unwrap();
            prop_assert_eq!(g.edges(), again.edges());
            prop_assert!(validate(&g).is_empty());
        }

        #[test]
        fn writers_form_a_chain(spec in arb_program(10, 3)) {
            let p = build(3, &spec);
            let g = derive_edges(&p).unwrap();
            for b in p.buffers() {
                let writers: Vec<TaskId> = p.tasks().iter()
                    .filter(|t| t.dep_on(b.id).is_some_and(DepDirection::writes))
                    .map(|t| t.id).collect();
                for w in writers.windows(2) {
                    let e = Edge { producer: w[0], consumer: w[1], buffer: b.id };
                    prop_assert!(g.edges().contains(&e));
                }
            }
        }
    }
}
