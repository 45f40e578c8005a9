use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use taskmesh::graph::derive_edges;
use taskmesh::scheduler::{heft_schedule, CostModel};
use taskmesh_bench::{generate, BenchSpec, Pattern};

fn heft(c: &mut Criterion) {
    let mut group = c.benchmark_group("heft");
    for pattern in [Pattern::Stencil1D, Pattern::Fft] {
        for width in [8usize, 16, 32] {
            let graph = derive_edges(&generate(&BenchSpec::new(pattern, width, 16), 1024).unwrap()).unwrap();
            let cost = CostModel::homogeneous(8, 2.0, 1000.0);
            group.bench_with_input(BenchmarkId::new(pattern.as_str(), width), &graph, |b, g| {
                b.iter(|| heft_schedule(g, &cost).unwrap())
            });
        }
    }
    group.finish();
}

fn derive(c: &mut Criterion) {
    let program = generate(&BenchSpec::new(Pattern::Stencil1D, 32, 32), 1024).unwrap();
    c.bench_function("derive_edges/stencil_32x32", |b| b.iter(|| derive_edges(&program).unwrap()));
}

criterion_group!(benches, heft, derive);
criterion_main!(benches);
