use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hybrid_ad::compile::{lower, CompileOptions};
use hybrid_ad::dp::{GaussianMechanism, PrivacyLedger};
use hybrid_ad::dpsgd::{build_loss_graph, precompute_kernels};
use hybrid_ad::{grad, grad_norm, lipschitz_constant, InputBox, LipschitzOptions};
use hybrid_ad_bench::{bmi, random_batch, tanh_mlp, LAYOUTS};

fn derive(c: &mut Criterion) {
    c.bench_function("derive/bmi", |b| {
        b.iter(|| {
            let (mut g, root) = bmi();
            let wrt: Vec<_> = ["a", "w", "h"].iter().map(|n| g.var_id(n).unwrap()).collect();
            let mut bundle = grad(&mut g, root, &wrt).unwrap();
            black_box(grad_norm(&mut g, &mut bundle).unwrap())
        })
    });
}

fn analyze(c: &mut Criterion) {
    c.bench_function("analyze/bmi", |b| {
        b.iter(|| {
            let (mut g, root) = bmi();
            let wrt: Vec<_> = ["a", "w", "h"].iter().map(|n| g.var_id(n).unwrap()).collect();
            let bounds = InputBox::from_graph(&g);
            black_box(lipschitz_constant(&mut g, root, &wrt, &bounds, &LipschitzOptions::default()).unwrap().k_upper)
        })
    });
}

fn compile_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("compile");
    group.sample_size(10);
    for (params, layers) in LAYOUTS {
        group.bench_with_input(BenchmarkId::from_parameter(params), &layers, |b, layers| {
            b.iter(|| {
                let model = build_loss_graph(&tanh_mlp(layers)).unwrap();
                black_box(precompute_kernels(&model).unwrap().step_kernel.len())
            })
        });
    }
    group.finish();
}

fn execute(c: &mut Criterion) {
    let model = build_loss_graph(&tanh_mlp(&[2, 4, 1])).unwrap();
    let kernels = precompute_kernels(&model).unwrap();
    let width = kernels.step_kernel.inputs.len();
    let batch = random_batch(4096, width, 1);
    let mut group = c.benchmark_group("execute/step kernel");
    group.bench_function("sequential", |b| b.iter(|| black_box(kernels.step_kernel.execute(&batch).unwrap())));
    group.bench_function("4 workers", |b| {
        b.iter(|| black_box(kernels.step_kernel.execute_parallel(&batch, 4).unwrap()))
    });
    group.finish();
    let (g, root) = bmi();
    let naive = lower(&g, &[root], &CompileOptions::unoptimized());
    let aot = lower(&g, &[root], &CompileOptions::aot());
    let rows = random_batch(4096, 3, 2);
    let mut group = c.benchmark_group("execute/bmi");
    group.bench_function("naive", |b| b.iter(|| black_box(naive.execute(&rows).unwrap())));
    group.bench_function("aot", |b| b.iter(|| black_box(aot.execute(&rows).unwrap())));
    group.finish();
}

fn ledger(c: &mut Criterion) {
    let mech = GaussianMechanism::with_multiplier(1.0, 1.1).unwrap();
    c.bench_function("ledger/compose 1000 + convert", |b| {
        b.iter(|| {
            let mut l = PrivacyLedger::new();
            for _ in 0..1000 {
                l.compose(&mech);
            }
            black_box(l.to_eps_delta(1e-5).unwrap())
        })
    });
}

criterion_group!(benches, derive, analyze, compile_scaling, execute, ledger);
criterion_main!(benches);
