use std::path::{Path, PathBuf};
use std::time::Instant;

use ddsg::ddsg_eval::{EvalScratch, NaiveDdsg, VectorizedDdsg};
use ddsg::evaluator::scalar_fn;
use ddsg::hdmr::{
    decompose, exact_cut_evaluate, grid_count, select_anchor, AnchorPoint, ComponentIndex, DdsgFunction,
    DecomposeOptions, DEFAULT_ANCHOR_SAMPLES,
};
use ddsg::irbc::{IrbcModel, PolicySource};
use ddsg::solver::{time_iterate, time_iteration_step, IterationReport, TimeIterationConfig};
use ddsg::sparse_grid::{build, regular_node_count, BoundaryMode, GridOptions, InterpScratch};
use ddsg::{DdsgError, Evaluator, Runtime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{AnchorChoice, RunConfig, TestFunction};
use crate::output::{join, write_csv, CsvSink};
use crate::CliError;

pub const APPROX_SUMMARY: &[&str] = &[
    "function", "dim", "k_max", "eps_eta", "eps_rho", "max_level", "eps_gamma", "boundary", "sg_points",
    "ddsg_points", "ratio_sg_to_ddsg", "sg_linf", "sg_l2", "ddsg_linf", "ddsg_l2", "exact_cut_linf",
];
pub const APPROX_ORDERS: &[&str] = &["order", "accepted", "rejected", "rho", "grid_points"];
pub const APPROX_ETA: &[&str] = &["index", "order", "eta", "accepted"];
pub const APPROX_COUNTS: &[&str] = &["dim", "k_max", "max_level", "sg_points", "ddsg_points", "ratio_sg_to_ddsg"];
pub const SOLVE_REPORTS: &[&str] = &[
    "step", "grid_points", "points_per_order", "accepted", "rejected", "rho_per_order", "eta_min_per_order",
    "eta_avg_per_order", "eta_max_per_order", "euler_avg_log10", "euler_max_log10", "policy_change",
    "clamp_count", "foc_failures", "wall_time_s",
];
pub const SOLVE_SUMMARY: &[&str] = &[
    "countries", "d", "variant", "k_max", "eps_eta", "eps_rho", "max_level", "eps_gamma", "grid_points",
    "euler_avg_log10", "euler_max_log10", "steps", "converged",
];
pub const SOLVE_FAILURES: &[&str] = &["step", "state"];
pub const ANALYZE_ORDERS: &[&str] = &["order", "components", "rho", "eta_min", "eta_avg", "eta_max"];
pub const ANALYZE_ETA: &[&str] = &["index", "order", "eta"];
pub const ANALYZE_SWEEP: &[&str] = &["eps_eta", "accepted", "rejected", "pruned"];
pub const BENCH_TIMES: &[&str] = &[
    "variant", "mean_s", "stddev_s", "repetitions", "points", "interpolations_per_point", "active_slots",
];
pub const BENCH_SUMMARY: &[&str] = &["dim", "k_max", "max_level", "max_abs_diff", "time_ratio"];

fn numerical(e: DdsgError) -> CliError {
    CliError::Numerical(e.to_string())
}

fn uniform(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect()
}

fn test_function(kind: TestFunction, power: u32) -> impl Fn(&[f64]) -> f64 + Sync + Copy {
    move |x: &[f64]| match kind {
        TestFunction::Polynomial => x.iter().sum::<f64>().powi(power as i32),
        TestFunction::ProductPeak => x.iter().map(|v| 1.0 / (0.04 + (v - 0.5).powi(2))).product(),
        TestFunction::SqrtProduct => x[0] * x[1].sqrt(),
    }
}

pub fn approx(cfg: &RunConfig, rt: &Runtime, out: &Path, hash: &str) -> Result<Vec<PathBuf>, CliError> {
    let a = &cfg.approx;
    let d = a.dim;
    let g = test_function(a.function, a.power);
    let f = scalar_fn(d, g);
    let opts = cfg.decompose_options();
    opts.validate(d).map_err(|e| CliError::Config(e.to_string()))?;
    let anchor = match a.anchor {
        AnchorChoice::Center => AnchorPoint::center(&f),
        AnchorChoice::Sampled => select_anchor(&f, DEFAULT_ANCHOR_SAMPLES, cfg.seed, rt),
    }
    .map_err(numerical)?;
    let ddsg = decompose(&f, anchor.clone(), &opts, rt).map_err(numerical)?;
    let compiled = VectorizedDdsg::compile(&ddsg).map_err(numerical)?;
    let sg = build(&f, &opts.grid, rt).map_err(numerical)?;

    let points = uniform(d, a.samples, cfg.seed);
    let mut errs = [(0.0f64, 0.0f64); 3];
    for x in &points {
        let want = g(x);
        let got = [
            sg.interpolate(x).map_err(numerical)?[0],
            compiled.evaluate(x).map_err(numerical)?[0],
            exact_cut_evaluate(&f, &anchor, ddsg.coefficients(), x).map_err(numerical)?[0],
        ];
        for (e, v) in errs.iter_mut().zip(got) {
            let diff = (v - want).abs();
            e.0 = e.0.max(diff);
            e.1 += diff * diff;
        }
    }
    let l2 = |s: f64| (s / points.len() as f64).sqrt();
    let ratio = sg.len() as f64 / ddsg.grid_points() as f64;
    let summary = (
        format!("{:?}", a.function).to_lowercase(),
        d,
        opts.k_max,
        opts.eps_eta,
        opts.eps_rho,
        opts.grid.max_level,
        opts.grid.threshold,
        opts.grid.boundary.to_string(),
        sg.len(),
        ddsg.grid_points(),
        ratio,
        errs[0].0,
        l2(errs[0].1),
        errs[1].0,
        l2(errs[1].1),
        errs[2].0,
    );
    let mut files = vec![write_csv(out, "approx_summary.csv", hash, APPROX_SUMMARY, &[summary])?];

    let orders: Vec<_> = ddsg
        .orders()
        .iter()
        .map(|o| (o.order, o.accepted.len(), o.rejected.len(), join([o.rho]), o.grid_points))
        .collect();
    files.push(write_csv(out, "approx_orders.csv", hash, APPROX_ORDERS, &orders)?);
    files.push(write_csv(out, "approx_eta.csv", hash, APPROX_ETA, &eta_rows(&ddsg, true))?);

    let mut counts = Vec::new();
    for &dim in &a.ratio_dims {
        for &k in &a.ratio_k_max {
            let k = k.min(dim);
            let lvl = opts.grid.max_level;
            let full = regular_node_count(dim, lvl).ok_or_else(|| numerical(DdsgError::CountOverflow))?;
            let dd = grid_count(dim, k, lvl).map_err(numerical)?;
            counts.push((dim, k, lvl, full, dd, full as f64 / dd as f64));
        }
    }
    files.push(write_csv(out, "approx_counts.csv", hash, APPROX_COUNTS, &counts)?);

    let json_path = out.join("approx_ddsg.json");
    std::fs::write(&json_path, ddsg.to_json().map_err(numerical)?).map_err(|e| CliError::io(&json_path, e))?;
    files.push(json_path);
    Ok(files)
}

fn eta_rows(ddsg: &DdsgFunction, with_status: bool) -> Vec<(String, usize, f64, String)> {
    let accepted = ddsg.accepted_set();
    ddsg.orders()
        .iter()
        .flat_map(|o| o.eta.iter().map(move |(u, e)| (u, o.order, *e)))
        .map(|(u, order, e)| {
            let status = if with_status { accepted.contains(u).to_string() } else { String::new() };
            (u.to_string(), order, e, status)
        })
        .collect()
}

fn report_row(r: &IterationReport) -> impl serde::Serialize {
    let eta = |f: fn(&ddsg::solver::EtaSummary) -> f64| join(r.eta.iter().map(|e| Some(f(e))));
    (
        r.step,
        r.grid_points,
        join(r.grid_points_per_order.iter().map(Some)),
        r.accepted.len(),
        r.rejected.len(),
        join(r.rho.iter().copied()),
        eta(|e| e.min),
        eta(|e| e.avg),
        eta(|e| e.max),
        r.euler_avg_log10,
        r.euler_max_log10,
        r.policy_change,
        r.clamp_count,
        r.foc_failures,
        r.wall_time_s,
    )
}

fn model_and_options(cfg: &RunConfig) -> Result<(IrbcModel, DecomposeOptions), CliError> {
    let model = IrbcModel::new(&cfg.model).map_err(|e| CliError::Config(e.to_string()))?;
    let opts = cfg.decompose_options();
    opts.validate(model.params.state_dim())
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok((model, opts))
}

/// Keeps the failed states of an aborted step next to the partial reports.
fn record_failure(e: DdsgError, out: &Path, hash: &str) -> CliError {
    if let DdsgError::FocFailures { step, states, .. } = &e {
        let rows: Vec<_> = states
            .iter()
            .map(|s| (step, join(s.iter().map(Some))))
            .collect();
        if let Err(io) = write_csv(out, "solve_failures.csv", hash, SOLVE_FAILURES, &rows) {
            return io;
        }
    }
    numerical(e)
}

pub fn solve(cfg: &RunConfig, rt: &Runtime, out: &Path, hash: &str) -> Result<Vec<PathBuf>, CliError> {
    let (model, opts) = model_and_options(cfg)?;
    let mut sink = CsvSink::create(out, "solve_reports.csv", hash, SOLVE_REPORTS)?;
    let mut write_err = None;
    let run = time_iterate(&model, &opts, &cfg.solver, &cfg.time_iteration, rt, |r| {
        if write_err.is_none() {
            write_err = sink.row(&report_row(r)).err();
        }
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let res = run.map_err(|e| record_failure(e, out, hash))?;
    let mut files = vec![sink.finish()?];
    let last = res.reports.last().expect("time iteration runs at least one step");
    let summary = (
        cfg.model.countries,
        model.params.state_dim(),
        format!("{:?}", cfg.model.variant).to_lowercase(),
        opts.k_max,
        opts.eps_eta,
        opts.eps_rho,
        opts.grid.max_level,
        opts.grid.threshold,
        last.grid_points,
        last.euler_avg_log10,
        last.euler_max_log10,
        last.step,
        res.converged,
    );
    files.push(write_csv(out, "solve_summary.csv", hash, SOLVE_SUMMARY, &[summary])?);
    let json_path = out.join("policy.json");
    std::fs::write(&json_path, res.policy.to_json().map_err(numerical)?).map_err(|e| CliError::io(&json_path, e))?;
    files.push(json_path);
    Ok(files)
}

/// Accepted / rejected / pruned counts obtained by re-thresholding measured
/// η values order by order.
fn sweep(ddsg: &DdsgFunction, eps: f64) -> (usize, usize, usize) {
    let mut accepted: std::collections::BTreeSet<ComponentIndex> = ddsg
        .orders()
        .first()
        .map(|o| o.accepted.iter().cloned().collect())
        .unwrap_or_default();
    accepted.insert(ComponentIndex::empty());
    let (mut rejected, mut pruned) = (0, 0);
    for o in ddsg.orders().iter().skip(1) {
        for (u, e) in &o.eta {
            if !u.facets().all(|s| accepted.contains(&s)) {
                pruned += 1;
            } else if *e >= eps {
                accepted.insert(u.clone());
            } else {
                rejected += 1;
            }
        }
    }
    (accepted.len() - 1, rejected, pruned)
}

pub fn analyze(cfg: &RunConfig, rt: &Runtime, out: &Path, hash: &str) -> Result<Vec<PathBuf>, CliError> {
    let (model, opts) = model_and_options(cfg)?;
    let d = model.params.state_dim();
    let steady = model.steady_policy();
    let warm;
    let prev: &dyn PolicySource = if cfg.analyze.warmup_steps > 0 {
        let tic = TimeIterationConfig {
            max_steps: cfg.analyze.warmup_steps,
            ..cfg.time_iteration
        };
        warm = time_iterate(&model, &opts, &cfg.solver, &tic, rt, |_| {})
            .map_err(|e| record_failure(e, out, hash))?
            .compiled;
        &warm
    } else {
        &steady
    };
    let measure = DecomposeOptions {
        k_max: cfg.analyze.k_max.min(d),
        eps_rho: 0.0,
        eps_eta: 0.0,
        grid: opts.grid,
    };
    let step = time_iteration_step(&model, prev, &measure, &cfg.solver, &cfg.time_iteration, 1, rt)
        .map_err(|e| record_failure(e, out, hash))?;
    let ddsg = &step.policy;
    let orders: Vec<_> = ddsg
        .orders()
        .iter()
        .map(|o| {
            let vals: Vec<f64> = o.eta.iter().map(|e| e.1).collect();
            let stat = |v: Option<f64>| join([v]);
            let (min, avg, max) = if vals.is_empty() {
                (None, None, None)
            } else {
                (
                    Some(vals.iter().copied().fold(f64::INFINITY, f64::min)),
                    Some(vals.iter().sum::<f64>() / vals.len() as f64),
                    Some(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
                )
            };
            (o.order, o.accepted.len() + o.rejected.len(), join([o.rho]), stat(min), stat(avg), stat(max))
        })
        .collect();
    let mut files = vec![write_csv(out, "analyze_orders.csv", hash, ANALYZE_ORDERS, &orders)?];
    let eta: Vec<_> = eta_rows(ddsg, false).into_iter().map(|(u, o, e, _)| (u, o, e)).collect();
    files.push(write_csv(out, "analyze_eta.csv", hash, ANALYZE_ETA, &eta)?);
    let rows: Vec<_> = cfg
        .analyze
        .eps_eta_sweep
        .iter()
        .map(|&eps| {
            let (a, r, p) = sweep(ddsg, eps);
            (eps, a, r, p)
        })
        .collect();
    files.push(write_csv(out, "analyze_sweep.csv", hash, ANALYZE_SWEEP, &rows)?);
    Ok(files)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

pub fn bench(cfg: &RunConfig, rt: &Runtime, out: &Path, hash: &str) -> Result<Vec<PathBuf>, CliError> {
    let b = cfg.bench;
    let f = scalar_fn(b.dim, |x| {
        x.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>().sin().exp()
    });
    let anchor = AnchorPoint::center(&f).map_err(numerical)?;
    let opts = DecomposeOptions::new(b.k_max, 0.0, GridOptions::regular(b.max_level, BoundaryMode::ModifiedLinear));
    let ddsg = decompose(&f, anchor, &opts, rt).map_err(numerical)?;
    let fast = VectorizedDdsg::compile(&ddsg).map_err(numerical)?;
    let naive = NaiveDdsg::new(&ddsg);
    let points = uniform(b.dim, b.points, cfg.seed);
    let (mut sc, mut is) = (EvalScratch::default(), InterpScratch::default());
    let (mut u, mut v) = ([0.0], [0.0]);

    // correctness precedes speed
    let mut max_diff: f64 = 0.0;
    for x in &points {
        fast.evaluate_into(x, &mut u, &mut sc).map_err(numerical)?;
        naive.evaluate(x, &mut v).map_err(numerical)?;
        max_diff = max_diff.max((u[0] - v[0]).abs());
    }
    if !(max_diff <= 1e-12) {
        return Err(CliError::Numerical(format!(
            "vectorized and naive evaluation differ by {max_diff:e}"
        )));
    }

    fast.reset_interpolation_count();
    let naive_before = naive.interpolation_count();
    let mut sink = 0.0;
    let (mut t_fast, mut t_naive) = (Vec::new(), Vec::new());
    for _ in 0..b.repetitions {
        let t = Instant::now();
        for x in &points {
            fast.evaluate_into(x, &mut u, &mut sc).map_err(numerical)?;
            sink += u[0];
        }
        t_fast.push(t.elapsed().as_secs_f64());
        let t = Instant::now();
        for x in &points {
            naive.evaluate_into(x, &mut v, &mut is).map_err(numerical)?;
            sink += v[0];
        }
        t_naive.push(t.elapsed().as_secs_f64());
    }
    std::hint::black_box(sink);
    let evals = (b.repetitions * b.points) as f64;
    let per_point = [
        fast.interpolation_count() as f64 / evals,
        (naive.interpolation_count() - naive_before) as f64 / evals,
    ];
    let (mf, sf) = mean_std(&t_fast);
    let (mn, sn) = mean_std(&t_naive);
    let slots = fast.active_slot_count();
    let rows = [
        ("vectorized", mf, sf, b.repetitions, b.points, per_point[0], slots),
        ("naive", mn, sn, b.repetitions, b.points, per_point[1], slots),
    ];
    let mut files = vec![write_csv(out, "bench_times.csv", hash, BENCH_TIMES, &rows)?];
    let summary = (b.dim, b.k_max, b.max_level, max_diff, mf / mn);
    files.push(write_csv(out, "bench_summary.csv", hash, BENCH_SUMMARY, &[summary])?);
    Ok(files)
}
