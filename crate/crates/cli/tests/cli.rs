use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use taskmesh_bench::Pattern;
use taskmesh_cli::{cmd_check, cmd_run, ExperimentConfig, Launcher, Transport};

fn launcher() -> Launcher {
    Launcher::new(PathBuf::from(env!("CARGO_BIN_EXE_taskmesh")))
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taskmesh"))
}

fn small_sim() -> ExperimentConfig {
    ExperimentConfig { width: 4, steps: 3, pattern: Pattern::Stencil1D, iterations: 1000, ..ExperimentConfig::default() }
}

/// Data rows of a run CSV as (kind, cells).
fn rows(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# taskmesh-run v"));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let body = lines.map(|l| l.split(',').map(String::from).collect::<Vec<_>>()).collect::<Vec<_>>();
    for r in &body {
        assert_eq!(r.len(), header.len());
    }
    (header, body)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    let transport = prop_oneof![Just(Transport::Sim), Just(Transport::Threads), Just(Transport::Tcp)];
    let pattern = (0usize..4).prop_map(|i| Pattern::ALL[i]);
    let path = proptest::option::of("[a-z][a-z0-9_/.-]{0,12}".prop_map(PathBuf::from));
    (
        (transport, 1usize..64, pattern, 0u32..4, 1usize..40, any::<u64>(), 1e-3f64..1e3, 1usize..20),
        (any::<u64>(), 1u16..64, proptest::option::of(1usize..16), path.clone(), 0.0f64..100.0, 1e-3f64..1e4),
        (1e-3f64..100.0, 0.0f64..50.0, 0.0f64..50.0, proptest::option::of(1usize..32), any::<bool>(), path),
    )
        .prop_map(|(a, b, c)| ExperimentConfig {
            transport: a.0,
            nodes: a.1,
            pattern: a.2,
            width: 1 << a.3,
            steps: a.4,
            iterations: a.5,
            ccr: a.6,
            repeats: a.7,
            seed: b.0,
            channels: b.1,
            handlers: b.2,
            output: b.3,
            latency_us: b.4,
            bandwidth: b.5,
            ns_per_iteration: c.0,
            jitter_us: c.1,
            head_event_us: c.2,
            max_inflight: c.3,
            weak_scaling: c.4,
            trace_dir: c.5,
        })
        .prop_map(|mut c| {
            // The 2n-wide weak-scaling grid must stay a power of two for fft and tree.
            if c.weak_scaling && matches!(c.pattern, Pattern::Fft | Pattern::Tree) {
                c.nodes = 1 << (c.nodes % 6);
            }
            c
        })
        .prop_filter("representable", |c| c.validate().is_ok())
}

proptest! {
    #[test]
    fn config_round_trip(cfg in arb_config()) {
        let text = cfg.to_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_text(), text);
    }
}

#[test]
fn summary_matches_recomputation() {
    // Threads: wall times vary from run to run, so the deviation is not zero.
    let cfg = ExperimentConfig { transport: Transport::Threads, handlers: Some(2), ..small_sim() };
    let csv = cmd_run(&ExperimentConfig { repeats: 5, ..cfg }, &launcher()).unwrap();
    let (header, body) = rows(&csv);
    assert_eq!(body.len(), 6);
    let summary = body.last().unwrap();
    assert_eq!(summary[0], "summary");
    for name in ["wall_us", "busy_us", "overhead_fraction", "bytes_moved", "events"] {
        let c = col(&header, name);
        let xs: Vec<f64> = body[..5].iter().map(|r| r[c].parse().unwrap()).collect();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let got_m: f64 = summary[c].parse().unwrap();
        let got_s: f64 = summary[col(&header, &format!("{name}_stddev"))].parse().unwrap();
        assert!((got_m - m).abs() <= 1e-6 * m.abs().max(1.0), "{name} mean {got_m} vs {m}");
        assert!((got_s - var.sqrt()).abs() <= 1e-5 * m.abs().max(1.0), "{name} stddev {got_s} vs {}", var.sqrt());
    }
}

#[test]
fn ten_repeats_give_ten_rows_and_a_summary() {
    let out = bin().args(["run", "--set", "repeats=10", "--set", "iterations=1000"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, body) = rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(body.iter().filter(|r| r[0] == "run").count(), 10);
    assert_eq!(body.iter().filter(|r| r[0] == "summary").count(), 1);
    // Same seed on the simulator: identical wall times.
    let w = col(&header, "wall_us");
    assert!(body[..10].iter().all(|r| r[w] == body[0][w]));
}

#[test]
fn invalid_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "nodes = 2\n# comment\npattern = mesh\n").unwrap();
    let out = bin().args(["run", "-c"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");

    let csv = dir.path().join("out.csv");
    let out = bin().args(["run", "--set", "repeats=0", "-o"]).arg(&csv).output().unwrap();
    assert!(!out.status.success());
    assert!(!csv.exists());
}

#[test]
fn sweep_over_nodes_uses_weak_scaling_grid() {
    let out = bin()
        .args(["sweep", "--axis", "nodes", "--values", "1,2,3", "--set", "iterations=100", "--set", "steps=2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# taskmesh-sweep v"));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (wc, sc) = (header.iter().position(|h| *h == "width").unwrap(), header.iter().position(|h| *h == "steps").unwrap());
    let summaries: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect::<Vec<_>>()).filter(|r| r[2] == "summary").collect();
    assert_eq!(summaries.len(), 3);
    for (r, n) in summaries.iter().zip([1, 2, 3]) {
        assert_eq!((r[0], r[1]), ("nodes", n.to_string().as_str()));
        assert_eq!(r[wc], (2 * n).to_string());
        assert_eq!(r[sc], "32");
    }
}

fn traced_run(dir: &Path, transport: Transport) -> PathBuf {
    let cfg = ExperimentConfig { transport, nodes: 2, trace_dir: Some(dir.to_path_buf()), handlers: Some(2), ..small_sim() };
    cmd_run(&cfg, &launcher()).unwrap();
    dir.join("run-0")
}

fn verdict(dir: &Path) -> Vec<(&'static str, bool)> {
    cmd_check(dir).unwrap().checks.iter().map(|(n, v)| (*n, v.is_empty())).collect()
}

#[test]
fn clean_traces_pass_every_check() {
    for t in [Transport::Sim, Transport::Threads, Transport::Tcp] {
        let tmp = tempfile::tempdir().unwrap();
        let run = traced_run(tmp.path(), t);
        let v = verdict(&run);
        let names: Vec<_> = v.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, ["dag_order", "coherence", "conservation", "tag_isolation", "report"], "{t}");
        assert!(v.iter().all(|(_, ok)| *ok), "{t}: {}", cmd_check(&run).unwrap().render());
        let out = bin().arg("check").arg(&run).output().unwrap();
        assert!(out.status.success());
    }
}

fn failing(dir: &Path) -> Vec<&'static str> {
    verdict(dir).into_iter().filter(|(_, ok)| !ok).map(|(n, _)| n).collect()
}

#[test]
fn forged_duplicate_completion_fails_conservation() {
    let tmp = tempfile::tempdir().unwrap();
    let run = traced_run(tmp.path(), Transport::Sim);
    let path = run.join("events.0.csv");
    let text = fs::read_to_string(&path).unwrap();
    let done = text.lines().find(|l| l.ends_with(",completed")).unwrap().to_string();
    fs::write(&path, format!("{text}{done}\n")).unwrap();
    assert_eq!(failing(&run), ["conservation"]);
    let out = bin().arg("check").arg(&run).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("conservation: FAIL"));
}

#[test]
fn forward_from_stale_copy_fails_coherence() {
    let tmp = tempfile::tempdir().unwrap();
    let run = traced_run(tmp.path(), Transport::Sim);
    let path = run.join("data.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    // After the first write, forward the same buffer from a node that was
    // never given the new version.
    let (i, w) = lines.iter().enumerate().find(|(_, l)| l.contains(",write,")).map(|(i, l)| (i, l.clone())).unwrap();
    let f: Vec<&str> = w.split(',').collect();
    let writer: u16 = f[3].parse().unwrap();
    let stale = if writer == 1 { 2 } else { 1 };
    lines.insert(i + 1, format!("{},forward,{},{stale},{writer}", f[0], f[2]));
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(failing(&run).contains(&"coherence"));
}

#[test]
fn misrouted_frame_fails_tag_isolation() {
    let tmp = tempfile::tempdir().unwrap();
    let run = traced_run(tmp.path(), Transport::Threads);
    let path = run.join("frames.0.tmf");
    let mut frames = taskmesh::transport::read_capture(&fs::read(&path).unwrap(), usize::MAX).unwrap();
    let f = frames.iter_mut().find(|f| f.tag != u64::MAX && f.channel != 0).unwrap();
    f.channel = (f.channel + 1) % 8;
    fs::write(&path, frames.iter().flat_map(|f| f.encode()).collect::<Vec<u8>>()).unwrap();
    assert_eq!(failing(&run), ["tag_isolation"]);
}

#[test]
fn tmf_dump_lists_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let run = traced_run(tmp.path(), Transport::Sim);
    let out = bin().arg("tmf-dump").arg(run.join("frames.0.tmf")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 10);
    assert!(text.contains("notification") && text.contains("execute"));
}
