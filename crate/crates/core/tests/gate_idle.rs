use std::sync::Arc;
use std::thread;
use std::time::Duration;

use taskmesh::events::{run_worker, Action, EventClient, NodeCtx, WorkerOptions};
use taskmesh::graph::NodeId;
use taskmesh::trace::Trace;
use taskmesh::transport::mem::MemNet;

fn cpu_seconds() -> f64 {
    let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
    // SAFETY: getrusage only writes into the provided struct.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) };
    assert_eq!(rc, 0);
    let tv = |t: libc::timeval| t.tv_sec as f64 + t.tv_usec as f64 / 1e6;
    tv(ru.ru_utime) + tv(ru.ru_stime)
}

#[test]
fn idle_worker_does_not_spin() {
    let net = MemNet::new(2);
    let ctx = Arc::new(NodeCtx::new(NodeId(1), Trace::new()));
    let port = net.port(NodeId(1));
    let opts = WorkerOptions { handlers: 4, ..WorkerOptions::default() };
    let h = thread::spawn(move || run_worker(port, ctx, &opts).unwrap());
    let head = net.port(NodeId(0));
    let client = EventClient::new(head.clone(), 8, Trace::new());
    client.submit(NodeId(1), Action::Sync).unwrap().wait(&head).unwrap();

    let before = cpu_seconds();
    thread::sleep(Duration::from_millis(500));
    let used = cpu_seconds() - before;
    assert!(used < 0.05, "idle worker used {used:.3}s of CPU in 0.5s");

    client.submit(NodeId(1), Action::Exit).unwrap().wait(&head).unwrap();
    h.join().unwrap();
}
