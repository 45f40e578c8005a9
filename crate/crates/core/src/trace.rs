//! Run traces: event state transitions, data actions and task states, each
//! exported as CSV for the offline checkers.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::events::EventType;
use crate::graph::{BufferId, NodeId, TaskId};

pub const EVENT_HEADER: &str = "ts_us,node,event_tag,etype,state";
pub const DATA_HEADER: &str = "ts_us,action,buffer,src,dst";
pub const TASK_HEADER: &str = "ts_us,task,state,node";

macro_rules! token_enum {
    ($name:ident { $($variant:ident => $tok:literal),+ $(,)? }) => {
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $tok),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($tok => Ok($name::$variant),)+
                    other => Err(format!("unknown {} '{}'", stringify!($name), other)),
                }
            }
        }
    };
}

token_enum!(EventState {
    Created => "created",
    Notified => "notified",
    Queued => "queued",
    Running => "running",
    PendingIo => "pending_io",
    Done => "done",
    Completed => "completed",
    Failed => "failed",
});

token_enum!(DataAction {
    Alloc => "alloc",
    Forward => "forward",
    Retrieve => "retrieve",
    Remove => "remove",
    Write => "write",
});

token_enum!(TaskState {
    Dispatched => "dispatched",
    Complete => "complete",
});

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub ts_us: f64,
    pub node: NodeId,
    pub tag: u64,
    pub etype: EventType,
    pub state: EventState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    pub ts_us: f64,
    pub action: DataAction,
    pub buffer: BufferId,
    pub src: NodeId,
    pub dst: NodeId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub ts_us: f64,
    pub task: TaskId,
    pub state: TaskState,
    pub node: NodeId,
}

/// Shared, thread-safe trace sink.
#[derive(Clone, Default)]
pub struct Trace {
    events: Arc<Mutex<Vec<EventRecord>>>,
    data: Arc<Mutex<Vec<DataRecord>>>,
    tasks: Arc<Mutex<Vec<TaskRecord>>>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn event(&self, ts_us: f64, node: NodeId, tag: u64, etype: EventType, state: EventState) {
        self.events.lock().unwrap().push(EventRecord { ts_us, node, tag, etype, state });
    }

    pub fn data(&self, ts_us: f64, action: DataAction, buffer: BufferId, src: NodeId, dst: NodeId) {
        self.data.lock().unwrap().push(DataRecord { ts_us, action, buffer, src, dst });
    }

    pub fn task(&self, ts_us: f64, task: TaskId, state: TaskState, node: NodeId) {
        self.tasks.lock().unwrap().push(TaskRecord { ts_us, task, state, node });
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.events.lock().unwrap().clone()
    }

    pub fn data_records(&self) -> Vec<DataRecord> {
        self.data.lock().unwrap().clone()
    }

    pub fn tasks(&self) -> Vec<TaskRecord> {
        self.tasks.lock().unwrap().clone()
    }

    pub fn extend_events(&self, records: impl IntoIterator<Item = EventRecord>) {
        self.events.lock().unwrap().extend(records);
    }

    pub fn events_csv(&self) -> String {
        events_to_csv(&self.events.lock().unwrap())
    }

    pub fn data_csv(&self) -> String {
        let mut out = format!("{DATA_HEADER}\n");
        for r in self.data.lock().unwrap().iter() {
            out.push_str(&format!("{:.3},{},{},{},{}\n", r.ts_us, r.action, r.buffer.0, r.src.0, r.dst.0));
        }
        out
    }

    pub fn tasks_csv(&self) -> String {
        let mut out = format!("{TASK_HEADER}\n");
        for r in self.tasks.lock().unwrap().iter() {
            out.push_str(&format!("{:.3},{},{},{}\n", r.ts_us, r.task.0, r.state, r.node.0));
        }
        out
    }
}

pub fn events_to_csv(records: &[EventRecord]) -> String {
    let mut out = format!("{EVENT_HEADER}\n");
    for r in records {
        out.push_str(&format!("{:.3},{},{},{},{}\n", r.ts_us, r.node.0, r.tag, r.etype, r.state));
    }
    out
}

fn rows<'a>(text: &'a str, header: &str) -> Result<impl Iterator<Item = (usize, Vec<&'a str>)>, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => return Err(format!("missing header '{header}'")),
    }
    Ok(lines.map(|(i, l)| (i + 1, l.split(',').map(str::trim).collect())))
}

fn field<T: FromStr>(cols: &[&str], i: usize, line: usize) -> Result<T, String> {
    cols.get(i)
        .ok_or_else(|| format!("line {line}: missing column {i}"))?
        .parse()
        .map_err(|_| format!("line {line}: bad value in column {i}"))
}

pub fn parse_events_csv(text: &str) -> Result<Vec<EventRecord>, String> {
    rows(text, EVENT_HEADER)?
        .map(|(n, c)| {
            Ok(EventRecord {
                ts_us: field(&c, 0, n)?,
                node: NodeId(field(&c, 1, n)?),
                tag: field(&c, 2, n)?,
                etype: field(&c, 3, n)?,
                state: field(&c, 4, n)?,
            })
        })
        .collect()
}

pub fn parse_data_csv(text: &str) -> Result<Vec<DataRecord>, String> {
    rows(text, DATA_HEADER)?
        .map(|(n, c)| {
            Ok(DataRecord {
                ts_us: field(&c, 0, n)?,
                action: field(&c, 1, n)?,
                buffer: BufferId(field(&c, 2, n)?),
                src: NodeId(field(&c, 3, n)?),
                dst: NodeId(field(&c, 4, n)?),
            })
        })
        .collect()
}

pub fn parse_tasks_csv(text: &str) -> Result<Vec<TaskRecord>, String> {
    rows(text, TASK_HEADER)?
        .map(|(n, c)| {
            Ok(TaskRecord {
                ts_us: field(&c, 0, n)?,
                task: TaskId(field(&c, 1, n)?),
                state: field(&c, 2, n)?,
                node: NodeId(field(&c, 3, n)?),
            })
        })
        .collect()
}
