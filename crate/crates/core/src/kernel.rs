//! Synthetic compute kernel: a calibrated busy loop plus deterministic output
//! generation so that results can be compared against a serial reference.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{BufferId, DepDirection, Program, TaskId};

/// Simulated cost of one loop iteration when no calibration is available
/// (10M iterations take 50 ms).
pub const DEFAULT_NS_PER_ITERATION: f64 = 5.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("buffer {0} is not present on the executing node")]
    MissingBuffer(BufferId),
}

/// Spin for `iterations` rounds of a cheap integer recurrence.
pub fn spin(iterations: u64) -> u64 {
    let mut x = 0x9e37_79b9_7f4a_7c15u64;
    for i in 0..iterations {
        x = black_box(x.rotate_left(5) ^ i).wrapping_mul(0x2545_f491_4f6c_dd1d);
    }
    x
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

fn mix(h: u64, v: u64) -> u64 {
    fnv1a(&[h.to_le_bytes(), v.to_le_bytes()].concat())
}

fn fill(seed: u64, size: usize) -> Vec<u8> {
    let mut out = vec![0u8; size];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut out);
    out
}

/// Contents a buffer holds before any task touches it.
pub fn initial_contents(buffer: BufferId, size: u64) -> Vec<u8> {
    fill(mix(0x5eed, buffer.0), size as usize)
}

/// One dependency as seen by the kernel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelDep {
    pub buffer: BufferId,
    pub dir: DepDirection,
    pub size: u64,
}

/// Compute new contents for every written buffer. The result depends only on
/// the task id and the contents of the buffers it reads.
pub fn compute_outputs<'a>(
    task: TaskId,
    deps: &[KernelDep],
    mut read: impl FnMut(BufferId) -> Option<&'a [u8]>,
) -> Result<Vec<(BufferId, Vec<u8>)>, KernelError> {
    let mut h = mix(0x7a5c, task.0 as u64);
    for d in deps.iter().filter(|d| d.dir.reads()) {
        let bytes = read(d.buffer).ok_or(KernelError::MissingBuffer(d.buffer))?;
        h = mix(mix(h, d.buffer.0), fnv1a(bytes));
    }
    Ok(deps
        .iter()
        .filter(|d| d.dir.writes())
        .map(|d| (d.buffer, fill(mix(h, d.buffer.0), d.size as usize)))
        .collect())
}

/// Execute the program on one node in program order.
pub fn serial_reference(program: &Program) -> BTreeMap<BufferId, Vec<u8>> {
    let mut store: BTreeMap<BufferId, Vec<u8>> =
        program.buffers().iter().map(|b| (b.id, initial_contents(b.id, b.size_bytes))).collect();
    for t in program.tasks().iter().filter(|t| !t.kind.is_data()) {
        let deps = kernel_deps(program, &t.deps);
        let out = compute_outputs(t.id, &deps, |b| store.get(&b).map(Vec::as_slice)).expect("all buffers present");
        for (b, bytes) in out {
            store.insert(b, bytes);
        }
    }
    store
}

pub fn kernel_deps(program: &Program, deps: &[crate::graph::Dep]) -> Vec<KernelDep> {
    deps.iter()
        .map(|d| KernelDep { buffer: d.buffer, dir: d.dir, size: program.buffer(d.buffer).map_or(0, |b| b.size_bytes) })
        .collect()
}

/// Checksum over a set of buffers, independent of map iteration order.
pub fn store_checksum(store: &BTreeMap<BufferId, Vec<u8>>) -> u64 {
    store.iter().fold(0xcbf2_9ce4_8422_2325, |h, (b, bytes)| mix(mix(h, b.0), fnv1a(bytes)))
}

/// Measure how many iterations of [`spin`] fit in `target`: a rough rate from
/// a growing probe, then the median of three timed runs near the target.
pub fn calibrate(target: Duration) -> u64 {
    let timed = |n: u64| {
        let t0 = Instant::now();
        black_box(spin(n));
        t0.elapsed().as_secs_f64()
    };
    let mut n = 1_000u64;
    let mut rate = loop {
        let dt = timed(n);
        if dt >= 0.02 || n >= 1 << 40 {
            break n as f64 / dt;
        }
        n *= 4;
    };
    let probe = ((rate * target.as_secs_f64().min(0.2)).round() as u64).max(1);
    let mut rates: Vec<f64> = (0..3).map(|_| probe as f64 / timed(probe)).collect();
    rates.sort_by(f64::total_cmp);
    rate = rates[1];
    ((rate * target.as_secs_f64()).round() as u64).max(1)
}
