//! Reference HEFT written from the textbook definition, sharing nothing with
//! the scheduler beyond the graph and cost inputs. Ranks are memoized
//! recursion; insertion scans candidate start times.
//!
//! Data tasks follow the placement rule: a data task goes to the node of the
//! first-placed target task adjacent to it, or to the head if it has none.
//! Undecided data tasks feeding a target are evaluated as if placed with it.

use std::collections::HashMap;

use taskmesh::graph::{NodeId, TaskGraph, TaskKind};
use taskmesh::scheduler::CostModel;

pub struct RefSchedule {
    pub node: Vec<u16>,
    pub est: Vec<f64>,
    pub eft: Vec<f64>,
}

struct Ctx<'a> {
    g: &'a TaskGraph,
    c: &'a CostModel,
    /// (producer, consumer, bytes) per edge.
    preds: Vec<Vec<(usize, u64)>>,
    succs: Vec<Vec<(usize, u64)>>,
    node: Vec<Option<u16>>,
    time: HashMap<usize, (f64, f64)>,
    busy: Vec<Vec<(f64, f64)>>,
}

fn comm(c: &CostModel, bytes: u64, a: u16, b: u16) -> f64 {
    if a == b {
        0.0
    } else {
        c.latency_us + bytes as f64 / c.bandwidth
    }
}

impl Ctx<'_> {
    fn kind(&self, t: usize) -> TaskKind {
        self.g.tasks()[t].kind
    }

    fn comp(&self, t: usize, n: u16) -> f64 {
        self.g.tasks()[t].cost_us / self.c.speeds[n as usize]
    }

    fn moved(&self, t: usize, n: u16) -> f64 {
        let task = &self.g.tasks()[t];
        let bytes: u64 = task.deps.iter().map(|d| self.g.buffer_size(d.buffer)).sum();
        if task.kind == TaskKind::TargetDataEnter {
            comm(self.c, bytes, 0, n)
        } else {
            comm(self.c, bytes, n, 0)
        }
    }

    fn mean(&self, t: usize) -> f64 {
        let p = self.c.workers;
        let workers = 1..=p as u16;
        match self.kind(t) {
            TaskKind::HostTask => self.comp(t, 0),
            TaskKind::TargetTask if p == 0 => self.comp(t, 0),
            TaskKind::TargetTask => workers.map(|n| self.comp(t, n)).sum::<f64>() / p as f64,
            _ if p == 0 => 0.0,
            _ => workers.map(|n| self.moved(t, n)).sum::<f64>() / p as f64,
        }
    }

    fn rank(&self, t: usize, memo: &mut Vec<Option<f64>>) -> f64 {
        if let Some(r) = memo[t] {
            return r;
        }
        let mut tail = 0.0f64;
        for &(s, bytes) in &self.succs[t] {
            let mc = if self.c.workers == 0 { 0.0 } else { self.c.latency_us + bytes as f64 / self.c.bandwidth };
            tail = tail.max(mc + self.rank(s, memo));
        }
        let r = self.mean(t) + tail;
        memo[t] = Some(r);
        r
    }

    /// Start/finish of a data task on its node; unplaced ones go to the head.
    fn data_time(&mut self, d: usize) -> (f64, f64) {
        if let Some(&t) = self.time.get(&d) {
            return t;
        }
        let n = *self.node[d].get_or_insert(0);
        let ready = self.arrival(d, n);
        let t = (ready, ready + self.moved(d, n));
        self.time.insert(d, t);
        t
    }

    fn finish(&mut self, u: usize) -> f64 {
        match self.kind(u) {
            k if k.is_data() => self.data_time(u).1,
            _ => self.time[&u].1,
        }
    }

    /// When all inputs of `t` can be on `n`.
    fn arrival(&mut self, t: usize, n: u16) -> f64 {
        let preds = self.preds[t].clone();
        let mut ready = 0.0f64;
        for (u, bytes) in preds {
            let f = self.finish(u);
            ready = ready.max(f + comm(self.c, bytes, self.node[u].unwrap(), n));
        }
        ready
    }

    fn first_fit(&self, n: u16, ready: f64, dur: f64) -> f64 {
        let mut cands: Vec<f64> = vec![ready];
        cands.extend(self.busy[n as usize].iter().map(|&(_, f)| f).filter(|&f| f >= ready));
        cands.sort_by(f64::total_cmp);
        cands
            .into_iter()
            .find(|&c| self.busy[n as usize].iter().all(|&(s, f)| f <= c || s >= c + dur))
            .expect("the last finish always fits")
    }

    fn place(&mut self, t: usize, n: u16, s: f64, f: f64) {
        self.node[t] = Some(n);
        self.time.insert(t, (s, f));
        self.busy[n as usize].push((s, f));
    }

    fn adjacent_target(&self, t: usize) -> bool {
        self.preds[t].iter().chain(&self.succs[t]).any(|&(u, _)| self.kind(u) == TaskKind::TargetTask)
    }
}

pub fn reference_heft(g: &TaskGraph, c: &CostModel) -> RefSchedule {
    let n = g.len();
    let mut preds = vec![Vec::new(); n];
    let mut succs = vec![Vec::new(); n];
    for e in g.edges() {
        let bytes = g.buffer_size(e.buffer);
        preds[e.consumer.0].push((e.producer.0, bytes));
        succs[e.producer.0].push((e.consumer.0, bytes));
    }
    let mut cx = Ctx { g, c, preds, succs, node: vec![None; n], time: HashMap::new(), busy: vec![Vec::new(); c.workers + 1] };
    let mut memo = vec![None; n];
    let ranks: Vec<f64> = (0..n).map(|t| cx.rank(t, &mut memo)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| ranks[b].total_cmp(&ranks[a]).then(a.cmp(&b)));

    for &t in &order {
        match cx.kind(t) {
            TaskKind::HostTask => {
                let ready = cx.arrival(t, 0);
                let dur = cx.comp(t, 0);
                let s = cx.first_fit(0, ready, dur);
                cx.place(t, 0, s, s + dur);
            }
            TaskKind::TargetTask => {
                let preds = cx.preds[t].clone();
                let mut floating: Vec<usize> =
                    preds.iter().map(|&(u, _)| u).filter(|&u| cx.kind(u).is_data() && cx.node[u].is_none()).collect();
                floating.sort();
                floating.dedup();
                let mut best: Option<(f64, f64, u16)> = None;
                for w in 1..=c.workers as u16 {
                    // Floating tasks in id order, each seeing earlier ones on `w`.
                    let mut hyp: HashMap<usize, f64> = HashMap::new();
                    for &u in &floating {
                        let mut r = 0.0f64;
                        for (p, bytes) in cx.preds[u].clone() {
                            let f = match hyp.get(&p) {
                                Some(&h) => h,
                                None => cx.finish(p) + comm(c, bytes, cx.node[p].unwrap(), w),
                            };
                            r = r.max(f);
                        }
                        hyp.insert(u, r + cx.moved(u, w));
                    }
                    let mut ready = 0.0f64;
                    for &(u, bytes) in &preds {
                        let f = if let Some(&h) = hyp.get(&u) {
                            h
                        } else {
                            cx.finish(u) + comm(c, bytes, cx.node[u].unwrap(), w)
                        };
                        ready = ready.max(f);
                    }
                    let dur = cx.comp(t, w);
                    let s = cx.first_fit(w, ready, dur);
                    if best.map_or(true, |(_, bf, _)| s + dur < bf) {
                        best = Some((s, s + dur, w));
                    }
                }
                let (s, f, w) = best.expect("workers > 0");
                for u in floating {
                    cx.node[u] = Some(w);
                }
                cx.place(t, w, s, f);
                let succs = cx.succs[t].clone();
                for (v, _) in succs {
                    if cx.kind(v).is_data() && cx.node[v].is_none() {
                        cx.node[v] = Some(w);
                    }
                }
            }
            _ => {
                if cx.node[t].is_some() || !cx.adjacent_target(t) {
                    cx.data_time(t);
                }
            }
        }
    }
    let mut est = vec![0.0; n];
    let mut eft = vec![0.0; n];
    for t in 0..n {
        let (s, f) = if cx.kind(t).is_data() { cx.data_time(t) } else { cx.time[&t] };
        est[t] = s;
        eft[t] = f;
    }
    let node = cx.node.iter().map(|x| x.unwrap_or(NodeId::HEAD.0)).collect();
    RefSchedule { node, est, eft }
}
