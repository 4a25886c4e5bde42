//! Pointwise FOC solves, the time-iteration loop and Euler-error measurement.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ddsg_eval::VectorizedDdsg;
use crate::error::{DdsgError, Result};
use crate::evaluator::Evaluator;
use crate::hdmr::{decompose, select_anchor, AnchorPoint, DdsgFunction, DecomposeOptions};
use crate::irbc::{FocEvaluation, IrbcModel, PolicySource};
use crate::numerics::{norm2, norm_inf, pairwise_sum};
use crate::runtime::Runtime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Tolerance on the residual ∞-norm.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Smallest backtracking step before giving up.
    pub min_step: f64,
    /// Relative step of finite-difference Jacobians.
    pub fd_epsilon: f64,
    pub jacobian: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-7,
            max_newton_iters: 200,
            min_step: 2f64.powi(-20),
            fd_epsilon: 1e-7,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.newton_tol) || !ok(self.min_step) || !ok(self.fd_epsilon) || self.max_newton_iters == 0 {
            return Err(DdsgError::InvalidArgument("solver tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Converged policy at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FocSolution {
    pub policy: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub clamped: usize,
}

/// Damped (semismooth) Newton on the FOC residuals at state `(a, k)`.
///
/// Steps are clipped so that `k′` and `λ` at most halve, then backtracked on
/// the residual 2-norm.
pub fn solve_foc_at_point(
    model: &IrbcModel,
    a: &[f64],
    k: &[f64],
    next: &dyn PolicySource,
    warm_start: &[f64],
    cfg: &SolverConfig,
) -> Result<FocSolution> {
    let p = &model.params;
    let (n, m) = (p.n, p.policy_len());
    if warm_start.len() != m {
        return Err(DdsgError::DimensionMismatch {
            expected: m,
            got: warm_start.len(),
        });
    }
    let positive: Vec<usize> = (0..n).chain(std::iter::once(m - 1)).collect();
    if positive.iter().any(|&i| !(warm_start[i] > 0.0)) {
        return Err(DdsgError::InvalidArgument("warm start needs k' > 0 and lambda > 0".into()));
    }
    let analytic = cfg.jacobian == JacobianMode::Analytic;
    let mut u = warm_start.to_vec();
    let mut ev = model.foc(a, k, &u, next, analytic)?;
    let mut best = (norm_inf(&ev.residuals), u.clone());
    for it in 0..=cfg.max_newton_iters {
        let res_inf = norm_inf(&ev.residuals);
        if !res_inf.is_finite() {
            break;
        }
        if res_inf < best.0 {
            best = (res_inf, u.clone());
        }
        if res_inf <= cfg.newton_tol {
            return Ok(FocSolution {
                policy: u,
                residual_norm: res_inf,
                iterations: it,
                clamped: ev.clamped,
            });
        }
        if it == cfg.max_newton_iters {
            break;
        }
        let jac = match ev.jacobian.take() {
            Some(j) => j,
            None => model.foc_jacobian_fd(a, k, &u, next, cfg.fd_epsilon)?,
        };
        let rhs = -DVector::from_column_slice(&ev.residuals);
        let du = DMatrix::lu(jac).solve(&rhs).ok_or(DdsgError::SingularJacobian)?;
        let mut step = line_search(model, a, k, next, &u, &du, &positive, norm2(&ev.residuals), cfg)?;
        if step.is_none() {
            // on a kink the direction may leave the piece the Jacobian describes;
            // retry once with the Jacobian of the piece it moves into
            let jac = model.foc_jacobian_toward(a, k, &u, next, cfg.fd_epsilon, Some(du.as_slice()))?;
            if let Some(du) = DMatrix::lu(jac).solve(&rhs) {
                step = line_search(model, a, k, next, &u, &du, &positive, norm2(&ev.residuals), cfg)?;
            }
        }
        match step {
            Some((trial, tev)) => {
                u = trial;
                ev = tev;
            }
            None => break,
        }
    }
    Err(DdsgError::NewtonFailed {
        iterations: cfg.max_newton_iters,
        residual: best.0,
        best: best.1,
    })
}

/// Clipped, backtracking step along `du`; `None` when no step of at least
/// `min_step` decreases the residual 2-norm enough.
#[allow(clippy::too_many_arguments)]
fn line_search(
    model: &IrbcModel,
    a: &[f64],
    k: &[f64],
    next: &dyn PolicySource,
    u: &[f64],
    du: &DVector<f64>,
    positive: &[usize],
    f0: f64,
    cfg: &SolverConfig,
) -> Result<Option<(Vec<f64>, FocEvaluation)>> {
    let mut t: f64 = 1.0;
    for &i in positive {
        if du[i] < 0.0 {
            t = t.min(0.5 * u[i] / -du[i]);
        }
    }
    let analytic = cfg.jacobian == JacobianMode::Analytic;
    while t >= cfg.min_step {
        let trial: Vec<f64> = u.iter().zip(du.iter()).map(|(x, d)| x + t * d).collect();
        let tev = model.foc(a, k, &trial, next, analytic)?;
        let f1 = norm2(&tev.residuals);
        if f1.is_finite() && f1 <= (1.0 - 1e-4 * t) * f0 {
            return Ok(Some((trial, tev)));
        }
        t *= 0.5;
    }
    Ok(None)
}

/// Sample statistics of Euler errors.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerErrors {
    pub avg_log10: f64,
    pub max_log10: f64,
    pub samples: Vec<f64>,
    pub clamped: usize,
}

/// Euler errors of `policy` (used as its own successor) at `n_samples`
/// uniform canonical states drawn from `seed`.
pub fn euler_errors(
    model: &IrbcModel,
    policy: &dyn PolicySource,
    n_samples: usize,
    seed: u64,
    rt: &Runtime,
) -> Result<EulerErrors> {
    if n_samples == 0 {
        return Err(DdsgError::InvalidArgument("n_samples must be at least 1".into()));
    }
    let points = uniform_points(model.params.state_dim(), n_samples, seed);
    let out = rt
        .try_map(&points, |_, x| model.euler_error(x, policy))
        .map_err(|f| f.error)?;
    let samples: Vec<f64> = out.iter().map(|e| e.0).collect();
    let clamped = out.iter().map(|e| e.1).sum();
    Ok(summarize_errors(samples, clamped))
}

fn summarize_errors(samples: Vec<f64>, clamped: usize) -> EulerErrors {
    let mean = pairwise_sum(&samples) / samples.len() as f64;
    let max = samples.iter().copied().fold(0.0, f64::max);
    EulerErrors {
        avg_log10: mean.log10(),
        max_log10: max.log10(),
        samples,
        clamped,
    }
}

fn uniform_points(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    /// Centre of the state box.
    #[default]
    Center,
    /// Sampled against the previous policy, then solved at the chosen point.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeIterationConfig {
    /// Stop once the average Euler error (log10) falls below this value.
    pub euler_tol_log10: f64,
    pub max_steps: usize,
    /// Stop once the policy-change sup-norm falls below this value.
    pub policy_change_tol: f64,
    pub euler_samples: usize,
    pub policy_change_samples: usize,
    pub rng_seed: u64,
    pub anchor: AnchorMode,
    pub anchor_samples: usize,
    /// Largest tolerated share of failed FOC solves per step.
    pub max_failure_rate: f64,
}

impl Default for TimeIterationConfig {
    fn default() -> Self {
        Self {
            euler_tol_log10: -6.0,
            max_steps: 300,
            policy_change_tol: 1e-6,
            euler_samples: 10_000,
            policy_change_samples: 1000,
            rng_seed: 42,
            anchor: AnchorMode::Center,
            anchor_samples: 1000,
            max_failure_rate: 1e-3,
        }
    }
}

impl TimeIterationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 || self.euler_samples == 0 || self.policy_change_samples == 0 {
            return Err(DdsgError::InvalidArgument(
                "max_steps and sample counts must be at least 1".into(),
            ));
        }
        if !(self.policy_change_tol > 0.0) || !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(DdsgError::InvalidArgument("invalid time iteration tolerances".into()));
        }
        Ok(())
    }
}

/// η aggregate of one expansion order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSummary {
    pub order: usize,
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    pub count: usize,
}

/// Metrics of one time-iteration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub step: usize,
    pub grid_points: usize,
    pub grid_points_per_order: Vec<usize>,
    pub accepted: Vec<String>,
    pub rejected: Vec<String>,
    pub rho: Vec<Option<f64>>,
    pub eta: Vec<EtaSummary>,
    pub euler_avg_log10: f64,
    pub euler_max_log10: f64,
    pub policy_change: f64,
    pub clamp_count: u64,
    pub foc_failures: usize,
    pub wall_time_s: f64,
}

impl IterationReport {
    /// Report fields that must not depend on timing or scheduling.
    pub fn metrics(&self) -> (usize, &[Option<f64>], f64, f64, f64, u64, usize) {
        (
            self.grid_points,
            &self.rho,
            self.euler_avg_log10,
            self.euler_max_log10,
            self.policy_change,
            self.clamp_count,
            self.foc_failures,
        )
    }
}

/// Black-box for the decomposition: solves the FOCs at a canonical state.
struct FocEvaluator<'a> {
    model: &'a IrbcModel,
    prev: &'a dyn PolicySource,
    cfg: &'a SolverConfig,
    clamps: AtomicU64,
    solves: AtomicU64,
    failures: Mutex<Vec<Vec<f64>>>,
}

impl FocEvaluator<'_> {
    fn warm_start(&self, x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
        let p = &self.model.params;
        let m = p.policy_len();
        let mut w = vec![0.0; m];
        self.prev.policy_at(x, &mut w, None)?;
        let guess = self.model.steady_policy().guess(k);
        for j in 0..p.n {
            if !(w[j] > 0.0) {
                w[j] = guess[j];
            }
        }
        if p.is_nonsmooth() {
            for v in &mut w[p.n..2 * p.n] {
                *v = v.max(0.0);
            }
        }
        if !(w[m - 1] > 0.0) {
            w[m - 1] = guess[m - 1];
        }
        Ok(w)
    }
}

impl Evaluator for FocEvaluator<'_> {
    fn in_dim(&self) -> usize {
        self.model.params.state_dim()
    }
    fn out_dim(&self) -> usize {
        self.model.params.policy_len()
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (a, k) = self.model.domain.from_canonical(x);
        let warm = self.warm_start(x, &k)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        let solve = |start: &[f64]| solve_foc_at_point(self.model, &a, &k, self.prev, start, self.cfg);
        let mut sol = solve(&warm);
        if sol.is_err() {
            sol = solve(&self.model.steady_policy().guess(&k));
        }
        if sol.is_err() && self.model.params.is_nonsmooth() {
            // Newton can stall on a kink of the successor policy far from a
            // root in the binding regime; restart from that regime
            let p = &self.model.params;
            let mut start = warm.clone();
            for j in 0..p.n {
                start[j] = (1.0 - p.delta) * k[j];
                start[p.n + j] = 0.05 * warm[p.policy_len() - 1];
            }
            let retry = solve(&start);
            if retry.is_ok() {
                sol = retry;
            }
        }
        match sol {
            Ok(s) => {
                self.clamps.fetch_add(s.clamped as u64, Ordering::Relaxed);
                out.copy_from_slice(&s.policy);
            }
            Err(DdsgError::NewtonFailed { best, .. }) => {
                self.failures.lock().expect("failure log poisoned").push(x.to_vec());
                out.copy_from_slice(&best);
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

/// Outcome of one step of [`time_iterate`].
#[derive(Debug)]
pub struct StepOutcome {
    pub policy: DdsgFunction,
    pub compiled: VectorizedDdsg,
    pub clamps: u64,
    pub solves: u64,
    pub failed_states: Vec<Vec<f64>>,
}

/// Solves the FOCs on a fresh decomposition against the fixed policy `prev`.
pub fn time_iteration_step(
    model: &IrbcModel,
    prev: &dyn PolicySource,
    opts: &DecomposeOptions,
    solver: &SolverConfig,
    tic: &TimeIterationConfig,
    step: usize,
    rt: &Runtime,
) -> Result<StepOutcome> {
    let eval = FocEvaluator {
        model,
        prev,
        cfg: solver,
        clamps: AtomicU64::new(0),
        solves: AtomicU64::new(0),
        failures: Mutex::new(Vec::new()),
    };
    let d = model.params.state_dim();
    let anchor_coords = match tic.anchor {
        AnchorMode::Center => vec![0.5; d],
        AnchorMode::Sampled => {
            let proxy = PolicyEvaluator {
                policy: prev,
                in_dim: d,
                out_dim: model.params.policy_len(),
            };
            select_anchor(&proxy, tic.anchor_samples, tic.rng_seed, rt)?.coords
        }
    };
    let anchor = AnchorPoint::at(&eval, anchor_coords)?;
    let policy = decompose(&eval, anchor, opts, rt)?;
    let mut failed_states = eval.failures.into_inner().expect("failure log poisoned");
    failed_states.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    let solves = eval.solves.load(Ordering::Relaxed);
    if failed_states.len() as f64 > tic.max_failure_rate * solves as f64 {
        return Err(DdsgError::FocFailures {
            step,
            failed: failed_states.len(),
            total: solves as usize,
            states: failed_states,
        });
    }
    let compiled = VectorizedDdsg::compile(&policy)?;
    Ok(StepOutcome {
        policy,
        compiled,
        clamps: eval.clamps.load(Ordering::Relaxed),
        solves,
        failed_states,
    })
}

struct PolicyEvaluator<'a> {
    policy: &'a dyn PolicySource,
    in_dim: usize,
    out_dim: usize,
}

impl Evaluator for PolicyEvaluator<'_> {
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.out_dim
    }
    fn evaluate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.policy.policy_at(x, out, None)
    }
}

/// Sup-norm of the difference of two policies on seeded uniform points.
pub fn policy_change(
    a: &dyn PolicySource,
    b: &dyn PolicySource,
    dim: usize,
    out_dim: usize,
    n: usize,
    seed: u64,
    rt: &Runtime,
) -> Result<f64> {
    let points = uniform_points(dim, n, seed);
    let diffs = rt
        .try_map(&points, |_, x| -> Result<f64> {
            let (mut pa, mut pb) = (vec![0.0; out_dim], vec![0.0; out_dim]);
            a.policy_at(x, &mut pa, None)?;
            b.policy_at(x, &mut pb, None)?;
            Ok(pa.iter().zip(&pb).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
        })
        .map_err(|f| f.error)?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Result of a full time-iteration run.
#[derive(Debug)]
pub struct TimeIterationResult {
    pub policy: DdsgFunction,
    pub compiled: VectorizedDdsg,
    pub reports: Vec<IterationReport>,
    pub converged: bool,
}

fn summarize_eta(policy: &DdsgFunction) -> Vec<EtaSummary> {
    policy
        .orders()
        .iter()
        .filter(|o| !o.eta.is_empty())
        .map(|o| {
            let vals: Vec<f64> = o.eta.iter().map(|e| e.1).collect();
            EtaSummary {
                order: o.order,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                avg: pairwise_sum(&vals) / vals.len() as f64,
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                count: vals.len(),
            }
        })
        .collect()
}

/// Time iteration from the steady-state guess. `observer` sees every report
/// as soon as its step finishes.
pub fn time_iterate(
    model: &IrbcModel,
    opts: &DecomposeOptions,
    solver: &SolverConfig,
    tic: &TimeIterationConfig,
    rt: &Runtime,
    mut observer: impl FnMut(&IterationReport),
) -> Result<TimeIterationResult> {
    solver.validate()?;
    tic.validate()?;
    opts.validate(model.params.state_dim())?;
    let (d, m) = (model.params.state_dim(), model.params.policy_len());
    let guess = model.steady_policy();
    let mut current: Option<(DdsgFunction, VectorizedDdsg)> = None;
    let mut reports = Vec::new();
    let mut converged = false;
    for step in 1..=tic.max_steps {
        let started = Instant::now();
        let prev: &dyn PolicySource = match &current {
            Some((_, c)) => c,
            None => &guess,
        };
        let out = time_iteration_step(model, prev, opts, solver, tic, step, rt)?;
        let change = policy_change(&out.compiled, prev, d, m, tic.policy_change_samples, tic.rng_seed ^ 0x5eed, rt)?;
        let errs = euler_errors(model, &out.compiled, tic.euler_samples, tic.rng_seed, rt)?;
        let report = IterationReport {
            step,
            grid_points: out.policy.grid_points(),
            grid_points_per_order: out.policy.orders().iter().map(|o| o.grid_points).collect(),
            accepted: out.policy.accepted().map(|u| u.to_string()).collect(),
            rejected: out.policy.rejected().iter().map(|u| u.to_string()).collect(),
            rho: out.policy.orders().iter().map(|o| o.rho).collect(),
            eta: summarize_eta(&out.policy),
            euler_avg_log10: errs.avg_log10,
            euler_max_log10: errs.max_log10,
            policy_change: change,
            clamp_count: out.clamps + errs.clamped as u64,
            foc_failures: out.failed_states.len(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        observer(&report);
        let stop = report.euler_avg_log10 < tic.euler_tol_log10 || report.policy_change < tic.policy_change_tol;
        reports.push(report);
        current = Some((out.policy, out.compiled));
        if stop {
            converged = true;
            break;
        }
    }
    let (policy, compiled) = current.expect("max_steps >= 1");
    Ok(TimeIterationResult {
        policy,
        compiled,
        reports,
        converged,
    })
}
