//! Dependency-driven task offloading runtime.
//!
//! A program is a sequence of tasks annotated with buffer dependencies. The
//! head node derives the precedence graph, maps it onto worker nodes with
//! HEFT, and drives execution through a two-sided event protocol while a
//! data directory decides which copies to forward, retrieve and invalidate.

pub mod check;
pub mod datamgr;
pub mod events;
pub mod graph;
pub mod kernel;
pub mod runtime;
pub mod scheduler;
pub mod trace;
pub mod transport;

pub use datamgr::{DataError, DataMap, TransferAction, TransferPlan};
pub use graph::{
    derive_edges, validate, Buffer, BufferId, Dep, DepDirection, Edge, GraphError, KernelDescriptor, NodeId, Program,
    Task, TaskGraph, TaskId, TaskKind, Violation,
};
pub use scheduler::{check_schedule, heft_schedule, schedule_cost, upward_rank, CostModel, Schedule, ScheduleError};
