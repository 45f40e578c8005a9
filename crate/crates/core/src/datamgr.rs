//! Head-side directory of buffer locations. Decides forwards, retrievals and
//! invalidations around enter-data, target execution and exit-data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::graph::{BufferId, DepDirection, NodeId, Task, TaskGraph, TaskKind};
use crate::scheduler::Schedule;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferEntry {
    /// Every node holding a valid copy, head included.
    pub locations: BTreeSet<NodeId>,
    /// Most recent writer, or the initial holder.
    pub fresh: NodeId,
}

impl BufferEntry {
    pub fn on_head(&self) -> bool {
        self.locations.contains(&NodeId::HEAD)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TransferAction {
    Alloc { node: NodeId, buffer: BufferId },
    Forward { src: NodeId, dst: NodeId, buffer: BufferId },
    /// Copy from `node` back to the head.
    Retrieve { node: NodeId, buffer: BufferId },
    Remove { node: NodeId, buffer: BufferId },
}

impl TransferAction {
    pub fn buffer(&self) -> BufferId {
        match *self {
            TransferAction::Alloc { buffer, .. }
            | TransferAction::Forward { buffer, .. }
            | TransferAction::Retrieve { buffer, .. }
            | TransferAction::Remove { buffer, .. } => buffer,
        }
    }
}

impl fmt::Display for TransferAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransferAction::Alloc { node, buffer } => write!(f, "alloc({node},{buffer})"),
            TransferAction::Forward { src, dst, buffer } => write!(f, "forward({src}->{dst},{buffer})"),
            TransferAction::Retrieve { node, buffer } => write!(f, "retrieve({node},{buffer})"),
            TransferAction::Remove { node, buffer } => write!(f, "remove({node},{buffer})"),
        }
    }
}

pub type TransferPlan = Vec<TransferAction>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("buffer {0} is not registered")]
    Unregistered(BufferId),
}

/// Location directory for every buffer of a program.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataMap {
    entries: BTreeMap<BufferId, BufferEntry>,
}

impl DataMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// All buffers start on the head.
    pub fn for_graph(graph: &TaskGraph) -> Self {
        let mut dm = DataMap::new();
        for b in graph.buffers() {
            dm.register_on_head(b.id);
        }
        dm
    }

    pub fn register_on_head(&mut self, buffer: BufferId) {
        self.entries.insert(
            buffer,
            BufferEntry { locations: BTreeSet::from([NodeId::HEAD]), fresh: NodeId::HEAD },
        );
    }

    pub fn entry(&self, buffer: BufferId) -> Option<&BufferEntry> {
        self.entries.get(&buffer)
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&BufferId, &BufferEntry)> {
        self.entries.iter()
    }

    fn entry_mut(&mut self, buffer: BufferId) -> Result<&mut BufferEntry, DataError> {
        self.entries.get_mut(&buffer).ok_or(DataError::Unregistered(buffer))
    }

    /// Move `buffer` to the node of the earliest-starting compute task that
    /// uses it; every previous copy is removed once the move is done. An
    /// unused buffer stays registered where it is.
    pub fn on_enter_data(
        &mut self,
        buffer: BufferId,
        graph: &TaskGraph,
        schedule: &Schedule,
    ) -> Result<TransferPlan, DataError> {
        let first_user = graph
            .tasks()
            .iter()
            .filter(|t| !t.kind.is_data() && t.dep_on(buffer).is_some())
            .min_by(|a, b| schedule.est[a.id.0].total_cmp(&schedule.est[b.id.0]).then(a.id.cmp(&b.id)));
        let entry = self.entry_mut(buffer)?;
        let Some(user) = first_user else {
            return Ok(Vec::new());
        };
        let node = schedule.node_of(user.id);
        if entry.locations.contains(&node) {
            return Ok(Vec::new());
        }
        let src = entry.fresh;
        let old = std::mem::replace(&mut entry.locations, BTreeSet::from([node]));
        entry.fresh = node;
        let mut plan = if node.is_head() {
            vec![TransferAction::Retrieve { node: src, buffer }]
        } else {
            vec![TransferAction::Alloc { node, buffer }, TransferAction::Forward { src, dst: node, buffer }]
        };
        plan.extend(old.into_iter().map(|n| TransferAction::Remove { node: n, buffer }));
        Ok(plan)
    }

    /// Bring every dependency of `task` to `node`, each from its freshest
    /// copy. `Out`-only buffers are allocated rather than copied since their
    /// prior contents are never read.
    pub fn before_execute(&mut self, task: &Task, node: NodeId) -> Result<TransferPlan, DataError> {
        let mut plan = Vec::new();
        for dep in &task.deps {
            let entry = self.entry_mut(dep.buffer)?;
            if entry.locations.contains(&node) {
                continue;
            }
            if dep.dir == DepDirection::Out {
                plan.push(TransferAction::Alloc { node, buffer: dep.buffer });
                continue;
            }
            let src = entry.fresh;
            if node.is_head() {
                plan.push(TransferAction::Retrieve { node: src, buffer: dep.buffer });
            } else {
                plan.push(TransferAction::Forward { src, dst: node, buffer: dep.buffer });
            }
            entry.locations.insert(node);
        }
        Ok(plan)
    }

    /// Invalidate every other copy of buffers the task wrote; read-only
    /// buffers keep all their copies.
    pub fn after_execute(&mut self, task: &Task, node: NodeId) -> Result<TransferPlan, DataError> {
        let mut plan = Vec::new();
        for dep in &task.deps {
            let entry = self.entry_mut(dep.buffer)?;
            if dep.dir.writes() {
                for &other in entry.locations.iter().filter(|&&n| n != node) {
                    plan.push(TransferAction::Remove { node: other, buffer: dep.buffer });
                }
                entry.locations = BTreeSet::from([node]);
                entry.fresh = node;
            } else {
                entry.locations.insert(node);
            }
        }
        Ok(plan)
    }

    /// Bring `buffer` back to the head; with `release`, drop every worker copy.
    pub fn on_exit_data(&mut self, buffer: BufferId, release: bool) -> Result<TransferPlan, DataError> {
        let entry = self.entry_mut(buffer)?;
        let mut plan = Vec::new();
        if !entry.on_head() {
            plan.push(TransferAction::Retrieve { node: entry.fresh, buffer });
            entry.locations.insert(NodeId::HEAD);
        }
        if release {
            for &n in entry.locations.iter().filter(|n| !n.is_head()) {
                plan.push(TransferAction::Remove { node: n, buffer });
            }
            entry.locations = BTreeSet::from([NodeId::HEAD]);
            entry.fresh = NodeId::HEAD;
        }
        Ok(plan)
    }

    /// Plan for a data task, dispatching on its kind.
    pub fn on_data_task(
        &mut self,
        task: &Task,
        graph: &TaskGraph,
        schedule: &Schedule,
    ) -> Result<TransferPlan, DataError> {
        let mut plan = Vec::new();
        for dep in &task.deps {
            match task.kind {
                TaskKind::TargetDataEnter => plan.extend(self.on_enter_data(dep.buffer, graph, schedule)?),
                TaskKind::TargetDataExit { release } => plan.extend(self.on_exit_data(dep.buffer, release)?),
                _ => {}
            }
        }
        Ok(plan)
    }
}
