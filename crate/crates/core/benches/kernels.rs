use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ddsg::ddsg_eval::{EvalScratch, NaiveDdsg, VectorizedDdsg};
use ddsg::evaluator::scalar_fn;
use ddsg::hdmr::{decompose, AnchorPoint, DecomposeOptions, DdsgFunction};
use ddsg::irbc::{IrbcConfig, IrbcModel};
use ddsg::solver::{time_iteration_step, SolverConfig, TimeIterationConfig};
use ddsg::sparse_grid::{BoundaryMode, GridOptions, InterpScratch};
use ddsg::Runtime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn test_ddsg(d: usize, rt: &Runtime) -> DdsgFunction {
    let f = scalar_fn(d, |x| x.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>().sin().exp());
    let anchor = AnchorPoint::center(&f).unwrap();
    let opts = DecomposeOptions::new(2, 0.0, GridOptions::regular(4, BoundaryMode::ModifiedLinear));
    decompose(&f, anchor, &opts, rt).unwrap()
}

fn points(d: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n * d).map(|_| rng.gen()).collect()
}

/// Runtimes to compare: the sequential executor and, when built with the
/// `parallel` feature, a pool with every available core.
fn runtimes() -> Vec<(&'static str, Runtime)> {
    let mut out = vec![("sequential", Runtime::sequential())];
    if cfg!(feature = "parallel") {
        out.push(("parallel", Runtime::from_env().unwrap()));
    }
    out
}

fn kernel(c: &mut Criterion) {
    let d = 8;
    let ddsg = test_ddsg(d, &Runtime::sequential());
    let fast = VectorizedDdsg::compile(&ddsg).unwrap();
    let naive = NaiveDdsg::new(&ddsg);
    let xs = points(d, 1000);
    let mut g = c.benchmark_group("kernel_d8_k2");
    g.throughput(Throughput::Elements(1000));
    g.bench_function("vectorized", |b| {
        let mut sc = EvalScratch::default();
        let mut out = [0.0];
        b.iter(|| {
            for x in xs.chunks(d) {
                fast.evaluate_into(x, &mut out, &mut sc).unwrap();
                black_box(out[0]);
            }
        })
    });
    g.bench_function("naive", |b| {
        let mut sc = InterpScratch::default();
        let mut out = [0.0];
        b.iter(|| {
            for x in xs.chunks(d) {
                naive.evaluate_into(x, &mut out, &mut sc).unwrap();
                black_box(out[0]);
            }
        })
    });
    g.finish();
}

fn batch(c: &mut Criterion) {
    let d = 8;
    let fast = VectorizedDdsg::compile(&test_ddsg(d, &Runtime::sequential())).unwrap();
    let xs = points(d, 20_000);
    let mut g = c.benchmark_group("batch_eval_20k");
    g.throughput(Throughput::Elements(20_000));
    for (name, rt) in runtimes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &rt, |b, rt| {
            b.iter(|| black_box(fast.evaluate_batch(&xs, rt).unwrap()))
        });
    }
    g.finish();
}

fn build(c: &mut Criterion) {
    let mut g = c.benchmark_group("decompose_d8_k2");
    g.sample_size(10);
    for (name, rt) in runtimes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &rt, |b, rt| b.iter(|| black_box(test_ddsg(8, rt))));
    }
    g.finish();
}

fn solver_step(c: &mut Criterion) {
    let model = IrbcModel::new(&IrbcConfig::default()).unwrap();
    let opts = DecomposeOptions::new(1, 1e-4, GridOptions::adaptive(4, 1e-3, BoundaryMode::ModifiedLinear));
    let guess = model.steady_policy();
    let (solver, tic) = (SolverConfig::default(), TimeIterationConfig::default());
    let mut g = c.benchmark_group("time_iteration_step_n2");
    g.sample_size(10);
    for (name, rt) in runtimes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &rt, |b, rt| {
            b.iter(|| black_box(time_iteration_step(&model, &guess, &opts, &solver, &tic, 1, rt).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, kernel, batch, build, solver_step);
criterion_main!(benches);
