use super::*;
use crate::events::WorkerOptions;
use crate::graph::{listing_program, Dep, DepDirection, KernelDescriptor, NodeId, TaskKind};
use crate::kernel::serial_reference;
use crate::trace::{DataAction, TaskState};

fn chain(n: usize, cost: f64) -> Program {
    let mut p = Program::new();
    let b = p.add_buffer(256);
    p.add_task(TaskKind::TargetDataEnter, vec![Dep::new(b, DepDirection::Out)], 0.0, KernelDescriptor::default())
        .unwrap();
    for _ in 0..n {
        p.add_task(TaskKind::TargetTask, vec![Dep::new(b, DepDirection::InOut)], cost, KernelDescriptor::default())
            .unwrap();
    }
    p.seal();
    p
}

fn diamond() -> Program {
    let mut p = Program::new();
    let a = p.add_buffer(64);
    let l = p.add_buffer(64);
    let r = p.add_buffer(64);
    let k = KernelDescriptor::default();
    let t = TaskKind::TargetTask;
    p.add_task(t, vec![Dep::new(a, DepDirection::Out)], 100.0, k.clone()).unwrap();
    p.add_task(t, vec![Dep::new(a, DepDirection::In), Dep::new(l, DepDirection::Out)], 100.0, k.clone()).unwrap();
    p.add_task(t, vec![Dep::new(a, DepDirection::In), Dep::new(r, DepDirection::Out)], 100.0, k.clone()).unwrap();
    p.add_task(
        TaskKind::HostTask,
        vec![Dep::new(l, DepDirection::In), Dep::new(r, DepDirection::In), Dep::new(a, DepDirection::InOut)],
        10.0,
        k,
    )
    .unwrap();
    p.seal();
    p
}

#[test]
fn listing_program_matches_serial_reference_in_sim() {
    let p = listing_program(4096, 1000.0, 0);
    let out = run_sim(&p, &RunConfig::new(2), &SimOptions::default()).unwrap();
    assert_eq!(out.buffers, serial_reference(&p));
    assert_eq!(out.report.tasks, 4);
    assert!(out.report.wall_us >= 2000.0);
}

#[test]
fn listing_program_matches_serial_reference_threaded() {
    let p = listing_program(4096, 1.0, 1000);
    let opts = WorkerOptions { handlers: 2, ..WorkerOptions::default() };
    let out = run_threads(&p, &RunConfig::new(2), &opts).unwrap();
    assert_eq!(out.buffers, serial_reference(&p));
    assert_eq!(out.report.events[&crate::events::EventType::Exit], 2);
}

#[test]
fn listing_trace_shows_enter_execute_exit_in_order() {
    let p = listing_program(64, 1000.0, 0);
    let out = run_sim(&p, &RunConfig::new(2), &SimOptions::default()).unwrap();
    let data: Vec<DataAction> = out.trace.data_records().iter().map(|r| r.action).collect();
    let first = |a| data.iter().position(|&x| x == a).unwrap();
    assert!(first(DataAction::Forward) < first(DataAction::Write));
    assert!(first(DataAction::Write) < first(DataAction::Retrieve));
    let tasks: Vec<_> = out.trace.tasks().into_iter().filter(|r| r.state == TaskState::Complete).map(|r| r.task.0).collect();
    assert_eq!(tasks, vec![0, 1, 2, 3]);
}

#[test]
fn empty_program_reports_only_fixed_costs() {
    let mut p = Program::new();
    p.seal();
    let out = run_sim(&p, &RunConfig::new(2), &SimOptions::default()).unwrap();
    assert_eq!(out.report.tasks, 0);
    assert_eq!(out.report.total_busy_us(), 0.0);
    assert_eq!(out.report.events.get(&crate::events::EventType::Execute), None);
    let frac = out.report.startup_fraction() + out.report.scheduling_fraction() + out.report.shutdown_fraction();
    assert!(frac <= 1.0 + 1e-9);
}

#[test]
fn chain_never_has_two_tasks_in_flight() {
    let out = run_sim(&chain(8, 500.0), &RunConfig::new(3), &SimOptions::default()).unwrap();
    let mut live = 0i32;
    for r in out.trace.tasks() {
        if r.task.0 == 0 {
            continue;
        }
        live += if r.state == TaskState::Dispatched { 1 } else { -1 };
        assert!(live <= 1);
    }
    assert_eq!(out.buffers, serial_reference(&chain(8, 500.0)));
}

#[test]
fn diamond_dispatches_branches_together() {
    let p = diamond();
    let out = run_sim(&p, &RunConfig::new(2), &SimOptions::default()).unwrap();
    assert_eq!(out.buffers, serial_reference(&p));
    let recs = out.trace.tasks();
    let at = |t, s| recs.iter().find(|r| r.task.0 == t && r.state == s).unwrap().ts_us;
    // Both branches start before either finishes.
    assert!(at(1, TaskState::Dispatched).max(at(2, TaskState::Dispatched)) < at(1, TaskState::Complete).min(at(2, TaskState::Complete)));
}

#[test]
fn max_inflight_serializes_independent_tasks() {
    let mut p = Program::new();
    for _ in 0..4 {
        let b = p.add_buffer(8);
        p.add_task(TaskKind::TargetTask, vec![Dep::new(b, DepDirection::Out)], 1000.0, KernelDescriptor::default())
            .unwrap();
    }
    p.seal();
    let free = run_sim(&p, &RunConfig::new(4), &SimOptions::default()).unwrap();
    let cfg = RunConfig { max_inflight: Some(1), ..RunConfig::new(4) };
    let capped = run_sim(&p, &cfg, &SimOptions::default()).unwrap();
    assert!(capped.report.wall_us > free.report.wall_us + 2500.0, "{} vs {}", capped.report.wall_us, free.report.wall_us);
    assert_eq!(capped.buffers, serial_reference(&p));
}

#[test]
fn sim_is_deterministic() {
    let p = diamond();
    let opts = SimOptions { seed: 7, jitter_us: 3.0, ..SimOptions::default() };
    let a = run_sim(&p, &RunConfig::new(3), &opts).unwrap();
    let b = run_sim(&p, &RunConfig::new(3), &opts).unwrap();
    assert_eq!(a.report.to_text(), b.report.to_text());
    assert_eq!(a.trace.events_csv(), b.trace.events_csv());
    assert_eq!(a.trace.data_csv(), b.trace.data_csv());
}

#[test]
fn report_text_round_trips() {
    let out = run_sim(&diamond(), &RunConfig::new(2), &SimOptions::default()).unwrap();
    let text = out.report.to_text();
    let back = RunReport::parse(&text).unwrap();
    assert_eq!(back.to_text(), text);
    assert!(RunReport::parse("tasks=x").unwrap_err().starts_with("line 1"));
}

#[test]
fn crashed_worker_aborts_run() {
    let p = chain(2, 10.0);
    let cfg = RunConfig { event_timeout: std::time::Duration::from_millis(50), ..RunConfig::new(1) };
    let (graph, schedule) = prepare(&p, &cfg).unwrap();
    let net = crate::transport::sim::SimNet::new(2, crate::transport::sim::NetModel::new(1.0, 1000.0, 0));
    let mut orch = Orchestrator::new(net.port(NodeId::HEAD), graph, schedule, &cfg, crate::trace::Trace::new());
    orch.pump();
    net.kill(NodeId(1));
    while net.advance() != crate::transport::sim::Advance::Idle {}
    net.advance_to(orch.earliest_deadline().unwrap() + 1.0);
    orch.check_all();
    assert!(orch.is_finished());
    assert!(matches!(orch.take_error(), Some(RunError::Event { .. })));
}

#[test]
fn zero_workers_rejected() {
    let p = listing_program(8, 1.0, 0);
    assert!(matches!(run_sim(&p, &RunConfig::new(0), &SimOptions::default()), Err(RunError::Invalid(_))));
}
