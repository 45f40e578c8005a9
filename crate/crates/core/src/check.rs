//! Trace validators. Each returns every violation it finds; an empty list
//! means the trace is consistent.

use std::collections::{BTreeMap, BTreeSet};

use crate::events::{channel_for, parse_notification, EventType};
use crate::transport::{is_notification_key, Frame};
use crate::graph::{BufferId, Edge, NodeId, TaskGraph};
use crate::trace::{DataAction, DataRecord, EventRecord, EventState, TaskRecord, TaskState, Trace};

/// Replay data records against the coherence rules:
/// - forwards and retrievals read a valid copy;
/// - the head never relays: it does not forward a copy it retrieved from
///   workers while one of them still holds that version;
/// - after a write, by the next non-remove action on that buffer (or the end
///   of the trace) the writer holds the only physical copy.
///
/// Every buffer starts with its only copy on the head.
pub fn check_coherence(data: &[DataRecord]) -> Vec<String> {
    let head = NodeId::HEAD;
    let mut valid: BTreeMap<BufferId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut physical: BTreeMap<BufferId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut writer: BTreeMap<BufferId, NodeId> = BTreeMap::new();
    // For a head copy that came back from workers: the workers that held
    // that same version when it arrived and still hold their original copy.
    let mut holders: BTreeMap<BufferId, BTreeSet<NodeId>> = BTreeMap::new();
    let mut out = Vec::new();

    fn settle(
        out: &mut Vec<String>,
        writer: &mut BTreeMap<BufferId, NodeId>,
        physical: &BTreeMap<BufferId, BTreeSet<NodeId>>,
        b: BufferId,
        at: usize,
    ) {
        if let Some(w) = writer.remove(&b) {
            let held = &physical[&b];
            if held.len() != 1 || !held.contains(&w) {
                out.push(format!("record {at}: buffer {b} written on {w} but copies remain on {held:?}"));
            }
        }
    }

    for (at, r) in data.iter().enumerate() {
        let b = r.buffer;
        valid.entry(b).or_insert_with(|| BTreeSet::from([head]));
        physical.entry(b).or_insert_with(|| BTreeSet::from([head]));
        if r.action != DataAction::Remove {
            settle(&mut out, &mut writer, &physical, b, at);
        }
        let v = valid.get_mut(&b).expect("known");
        let ph = physical.get_mut(&b).expect("known");
        match r.action {
            DataAction::Alloc => {
                ph.insert(r.dst);
            }
            DataAction::Forward | DataAction::Retrieve => {
                if !v.contains(&r.src) {
                    out.push(format!("record {at}: {} of {b} from stale copy on {}", r.action, r.src));
                }
                let h = holders.entry(b).or_default();
                if r.src == head && !h.is_empty() {
                    let list: Vec<String> = h.iter().map(|n| n.to_string()).collect();
                    out.push(format!("record {at}: head relays {b} to {} while {} still holds it", r.dst, list.join(",")));
                }
                if r.dst == head {
                    *h = v.iter().copied().filter(|n| !n.is_head()).collect();
                } else {
                    h.remove(&r.dst);
                }
                v.insert(r.dst);
                ph.insert(r.dst);
            }
            DataAction::Remove => {
                v.remove(&r.src);
                ph.remove(&r.src);
                if let Some(h) = holders.get_mut(&b) {
                    h.remove(&r.src);
                }
            }
            DataAction::Write => {
                if !ph.contains(&r.src) {
                    out.push(format!("record {at}: write of {b} on {} which holds no copy", r.src));
                }
                *v = BTreeSet::from([r.src]);
                writer.insert(b, r.src);
                holders.remove(&b);
            }
        }
    }
    let pending: Vec<BufferId> = writer.keys().copied().collect();
    for b in pending {
        settle(&mut out, &mut writer, &physical, b, data.len());
    }
    out
}

/// Every task is dispatched and completed exactly once, and for every edge
/// the producer completes before the consumer is dispatched.
pub fn check_dag_order(task_count: usize, edges: &[Edge], tasks: &[TaskRecord]) -> Vec<String> {
    let mut dispatched = vec![None; task_count];
    let mut completed = vec![None; task_count];
    let mut out = Vec::new();
    for (i, r) in tasks.iter().enumerate() {
        let Some(slot) = (match r.state {
            TaskState::Dispatched => dispatched.get_mut(r.task.0),
            TaskState::Complete => completed.get_mut(r.task.0),
        }) else {
            out.push(format!("record {i}: unknown task {}", r.task));
            continue;
        };
        if slot.replace(i).is_some() {
            out.push(format!("task {} {} twice", r.task, r.state));
        }
    }
    for t in 0..task_count {
        match (dispatched[t], completed[t]) {
            (Some(d), Some(c)) if d < c => {}
            (d, c) => out.push(format!("task {t}: dispatched {d:?}, completed {c:?}")),
        }
    }
    for e in edges {
        if let (Some(c), Some(d)) = (completed[e.producer.0], dispatched[e.consumer.0]) {
            if c >= d {
                out.push(format!("edge {}->{}: consumer dispatched before producer completed", e.producer, e.consumer));
            }
        }
    }
    out
}

/// Per-event counts and type consistency. Each tag keeps one event type;
/// notifications, queued halves, finished halves and origin completions
/// agree; nothing failed.
pub fn check_events(events: &[EventRecord]) -> Vec<String> {
    #[derive(Default)]
    struct Tally {
        etype: Option<EventType>,
        created: usize,
        notified: usize,
        queued: usize,
        done: usize,
        completed: usize,
        failed: usize,
    }
    let mut by_tag: BTreeMap<u64, Tally> = BTreeMap::new();
    let mut out = Vec::new();
    for r in events {
        let t = by_tag.entry(r.tag).or_default();
        match t.etype {
            None => t.etype = Some(r.etype),
            Some(e) if e != r.etype => out.push(format!("event {} seen as {} and {}", r.tag, e, r.etype)),
            _ => {}
        }
        match r.state {
            EventState::Created => t.created += 1,
            EventState::Notified => t.notified += 1,
            EventState::Queued => t.queued += 1,
            EventState::Done => t.done += 1,
            EventState::Completed => t.completed += 1,
            EventState::Failed => t.failed += 1,
            EventState::Running | EventState::PendingIo => {}
        }
    }
    for (tag, t) in &by_tag {
        if *tag == 0 {
            out.push("event with reserved tag 0".into());
        }
        let halves = t.notified;
        if t.created != 1 || halves == 0 || t.queued != halves || t.done != halves || t.completed != halves || t.failed != 0
        {
            out.push(format!(
                "event {tag}: created {} notified {} queued {} done {} completed {} failed {}",
                t.created, t.notified, t.queued, t.done, t.completed, t.failed
            ));
        }
    }
    out
}

/// Tag isolation over captured frames: every frame belongs to a traced
/// event, carries that event's type, and travels on channel `tag mod C`.
/// Notifications are checked on the tag they announce. Transport control
/// frames (tag `u64::MAX`) are skipped.
pub fn check_capture(frames: &[Frame], events: &[EventRecord], channels: u16) -> Vec<String> {
    let types: BTreeMap<u64, EventType> = events.iter().map(|r| (r.tag, r.etype)).collect();
    let mut out = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        if f.tag == u64::MAX {
            continue;
        }
        let (tag, channel, etype) = if is_notification_key(f.tag, f.channel) {
            match parse_notification(f) {
                Ok(n) => (n.tag, n.channel, n.etype as u8),
                Err(e) => {
                    out.push(format!("frame {i}: bad notification: {e}"));
                    continue;
                }
            }
        } else {
            (f.tag, f.channel, f.etype)
        };
        if channel != channel_for(tag, channels) {
            out.push(format!("frame {i}: tag {tag} on channel {channel}"));
        }
        match types.get(&tag) {
            None => out.push(format!("frame {i}: tag {tag} matches no traced event")),
            Some(t) if *t as u8 != etype => out.push(format!("frame {i}: tag {tag} is {t} but frame says {etype}")),
            Some(_) => {}
        }
    }
    out
}

/// All three checks over one run trace.
pub fn check_trace(graph: &TaskGraph, trace: &Trace) -> Vec<String> {
    let mut out = check_coherence(&trace.data_records());
    out.extend(check_dag_order(graph.len(), graph.edges(), &trace.tasks()));
    out.extend(check_events(&trace.events()));
    out
}

/// Forwards whose source is the head, i.e. data leaving the head toward a
/// worker. Head relays are the subset flagged by [`check_coherence`].
pub fn head_forwards(data: &[DataRecord]) -> usize {
    data.iter().filter(|r| r.action == DataAction::Forward && r.src.is_head()).count()
}
