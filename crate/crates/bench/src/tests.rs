use std::collections::BTreeSet;

use proptest::prelude::*;
use taskmesh::graph::{derive_edges, validate};

use super::*;

/// Target-to-target edges as ((t-1, j), (t, i)) cell pairs.
fn grid_edges(spec: &BenchSpec) -> BTreeSet<((usize, usize), (usize, usize))> {
    let g = derive_edges(&generate(spec, 8).unwrap()).unwrap();
    let n = spec.task_count();
    let cell = |id: TaskId| ((id.0 - n) / spec.width, (id.0 - n) % spec.width);
    g.edges()
        .iter()
        .filter(|e| g.task(e.producer).kind == TaskKind::TargetTask && g.task(e.consumer).kind == TaskKind::TargetTask)
        .map(|e| (cell(e.producer), cell(e.consumer)))
        .collect()
}

/// Independent edge enumeration per pattern.
fn oracle(pattern: Pattern, width: usize, steps: usize) -> BTreeSet<((usize, usize), (usize, usize))> {
    let mut out = BTreeSet::new();
    let k = (0..).find(|&b| 1usize << b >= width).unwrap();
    // Tree transitions: reduce levels 1..=k, then broadcast levels k..=1.
    let levels: Vec<(bool, usize)> = (1..=k).map(|l| (true, l)).chain((1..=k).rev().map(|l| (false, l))).collect();
    for t in 1..steps {
        for i in 0..width {
            for j in 0..width {
                let hit = match pattern {
                    Pattern::Trivial => false,
                    Pattern::Stencil1D => i.abs_diff(j) <= 1,
                    Pattern::Fft => j == i || (k > 0 && j == i ^ (1 << ((t - 1) % k))),
                    Pattern::Tree if k == 0 => false,
                    Pattern::Tree => {
                        let (reduce, l) = levels[(t - 1) % levels.len()];
                        let (block, half) = (1usize << l, 1usize << (l - 1));
                        if reduce {
                            i % block == 0 && (j == i || j == i + half)
                        } else {
                            (i % block == 0 && j == i) || (i % block == half && j == i - half)
                        }
                    }
                };
                if hit {
                    out.insert(((t - 1, j), (t, i)));
                }
            }
        }
    }
    out
}

#[test]
fn trivial_one_by_sixteen_has_no_cross_edges() {
    let spec = BenchSpec::new(Pattern::Trivial, 1, 16);
    let p = generate(&spec, 1).unwrap();
    assert_eq!(p.tasks().iter().filter(|t| t.kind == TaskKind::TargetTask).count(), 16);
    assert!(grid_edges(&spec).is_empty());
}

#[test]
fn stencil_interior_has_three_predecessors_and_edges_two() {
    assert_eq!(dependencies(Pattern::Stencil1D, 4, 1, 1), vec![0, 1, 2]);
    assert_eq!(dependencies(Pattern::Stencil1D, 4, 1, 0), vec![0, 1]);
    assert_eq!(dependencies(Pattern::Stencil1D, 4, 1, 3), vec![2, 3]);
}

#[test]
fn generated_edges_match_enumeration() {
    for pattern in Pattern::ALL {
        for width in 1..=8usize {
            if matches!(pattern, Pattern::Fft | Pattern::Tree) && !width.is_power_of_two() {
                continue;
            }
            for steps in 1..=8 {
                let spec = BenchSpec::new(pattern, width, steps);
                assert_eq!(grid_edges(&spec), oracle(pattern, width, steps), "{pattern} {width}x{steps}");
            }
        }
    }
}

#[test]
fn stencil_edge_count_per_transition() {
    for width in 2..=8 {
        let spec = BenchSpec::new(Pattern::Stencil1D, width, 5);
        assert_eq!(grid_edges(&spec).len(), 4 * (3 * width - 2));
    }
}

#[test]
fn fft_and_tree_need_power_of_two_width() {
    for p in [Pattern::Fft, Pattern::Tree] {
        assert!(matches!(generate(&BenchSpec::new(p, 6, 2), 1), Err(BenchError::InvalidSpec(_))));
    }
    assert!(generate(&BenchSpec::new(Pattern::Stencil1D, 6, 2), 1).is_ok());
    assert!(generate(&BenchSpec { ccr: 0.0, ..BenchSpec::new(Pattern::Trivial, 1, 1) }, 1).is_err());
    assert!(generate(&BenchSpec::new(Pattern::Trivial, 0, 1), 1).is_err());
}

#[test]
fn weak_scaling_grid() {
    for n in [1, 2, 4, 8, 16, 32] {
        let spec = BenchSpec::weak_scaling(Pattern::Stencil1D, n);
        let p = generate(&spec, 1).unwrap();
        assert_eq!(p.tasks().iter().filter(|t| t.kind == TaskKind::TargetTask).count(), 2 * n * 32);
    }
}

#[test]
fn sizing_formula() {
    let b = 3.0;
    let cm = CostModel::homogeneous(2, 0.0, b);
    // 50 ms, ccr 1, one dependency: the whole task time worth of bytes.
    assert_eq!(bytes_for(50_000.0, 1.0, 1, &cm).bytes, (50_000.0 * b) as u64);
    assert_eq!(bytes_for(50_000.0, 0.5, 2, &cm).bytes, 2 * bytes_for(50_000.0, 1.0, 2, &cm).bytes);
    assert_eq!(bytes_for(50_000.0, 1e12, 3, &cm).bytes, 1);
    let slow = CostModel::homogeneous(2, 100.0, b);
    assert_eq!(bytes_for(150.0, 1.0, 2, &slow), Sizing { bytes: 1, clamped: true });
    assert_eq!(bytes_for(10.0, 1.0, 0, &slow), Sizing { bytes: 1, clamped: false });
}

#[test]
fn in_degree_per_pattern() {
    assert_eq!(max_in_degree(Pattern::Trivial, 8), 0);
    assert_eq!(max_in_degree(Pattern::Stencil1D, 8), 3);
    assert_eq!(max_in_degree(Pattern::Stencil1D, 1), 1);
    assert_eq!(max_in_degree(Pattern::Fft, 8), 2);
    assert_eq!(max_in_degree(Pattern::Tree, 8), 2);
    assert_eq!(max_in_degree(Pattern::Tree, 1), 0);
}

#[test]
fn pattern_tokens_round_trip() {
    for p in Pattern::ALL {
        assert_eq!(p.as_str().parse::<Pattern>().unwrap(), p);
    }
    assert!("mesh".parse::<Pattern>().is_err());
}

proptest! {
    #[test]
    fn generated_programs_validate(pi in 0usize..4, wexp in 0u32..4, extra in 0usize..3, steps in 1usize..6) {
        let pattern = Pattern::ALL[pi];
        let width = if matches!(pattern, Pattern::Fft | Pattern::Tree) { 1 << wexp } else { (1 << wexp) + extra };
        let spec = BenchSpec::new(pattern, width, steps);
        let g = derive_edges(&generate(&spec, 16).unwrap()).unwrap();
        let v = validate(&g);
        prop_assert!(v.is_empty(), "{:?}", v);
        prop_assert_eq!(g.len(), 3 * width * steps);
    }
}
