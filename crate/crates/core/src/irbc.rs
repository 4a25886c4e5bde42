//! International real business cycle model with optional irreversible
//! investment.
//!
//! States live in levels `(a, k)` and are mapped affinely onto the canonical
//! cube `[0,1]^{2N}` with the productivity coordinates first. Policies are
//! vectors `[k′_1..k′_N, (μ_1..μ_N,) λ]`; residual vectors use the matching
//! layout `[Euler_1..Euler_N, (ψ_1..ψ_N,) resource]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ddsg_eval::{EvalScratch, VectorizedDdsg};
use crate::error::{DdsgError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Smooth,
    Nonsmooth,
}

/// User-facing calibration. Defaults follow the standard parameterization;
/// `γ_j = gamma_base + gamma_spread·(j−1)/(N−1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrbcConfig {
    pub countries: usize,
    pub beta: f64,
    pub gamma_base: f64,
    pub gamma_spread: f64,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
    pub rho_a: f64,
    pub phi_adj: f64,
    pub variant: Variant,
    pub k_min: f64,
    pub k_max: f64,
    pub lna_half_width: f64,
}

impl Default for IrbcConfig {
    fn default() -> Self {
        Self {
            countries: 2,
            beta: 0.99,
            gamma_base: 0.25,
            gamma_spread: 0.75,
            alpha: 0.36,
            delta: 0.01,
            sigma: 0.01,
            rho_a: 0.95,
            phi_adj: 0.5,
            variant: Variant::Smooth,
            k_min: 0.5,
            k_max: 1.5,
            lna_half_width: 0.4,
        }
    }
}

/// Validated parameters with derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrbcParameters {
    pub n: usize,
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub sigma: f64,
    pub rho_a: f64,
    pub phi_adj: f64,
    /// Aggregate productivity `A`.
    pub a_agg: f64,
    pub tau: Vec<f64>,
    pub variant: Variant,
}

fn invalid(msg: String) -> DdsgError {
    DdsgError::InvalidArgument(msg)
}

impl IrbcParameters {
    pub fn from_config(c: &IrbcConfig) -> Result<Self> {
        let open01 = |v: f64| v > 0.0 && v < 1.0;
        if c.countries == 0 {
            return Err(invalid("countries must be at least 1".into()));
        }
        for (name, v) in [("beta", c.beta), ("alpha", c.alpha), ("delta", c.delta)] {
            if !open01(v) {
                return Err(invalid(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(c.sigma >= 0.0) || !c.sigma.is_finite() {
            return Err(invalid(format!("sigma must be >= 0, got {}", c.sigma)));
        }
        if !(0.0..1.0).contains(&c.rho_a) {
            return Err(invalid(format!("rho_a must lie in [0,1), got {}", c.rho_a)));
        }
        if !(c.phi_adj >= 0.0) || !c.phi_adj.is_finite() {
            return Err(invalid(format!("phi_adj must be >= 0, got {}", c.phi_adj)));
        }
        let n = c.countries;
        let gamma: Vec<f64> = (0..n)
            .map(|j| {
                if n == 1 {
                    c.gamma_base
                } else {
                    c.gamma_base + c.gamma_spread * j as f64 / (n - 1) as f64
                }
            })
            .collect();
        if gamma.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(invalid("every gamma_j must be positive".into()));
        }
        let a_agg = (1.0 - c.beta * (1.0 - c.delta)) / (c.alpha * c.beta);
        let tau = gamma.iter().map(|g| a_agg.powf(1.0 / g)).collect();
        Ok(Self {
            n,
            beta: c.beta,
            gamma,
            alpha: c.alpha,
            delta: c.delta,
            sigma: c.sigma,
            rho_a: c.rho_a,
            phi_adj: c.phi_adj,
            a_agg,
            tau,
            variant: c.variant,
        })
    }

    pub fn is_nonsmooth(&self) -> bool {
        self.variant == Variant::Nonsmooth
    }

    /// Policy (and residual) length: `N+1` or `2N+1`.
    pub fn policy_len(&self) -> usize {
        if self.is_nonsmooth() {
            2 * self.n + 1
        } else {
            self.n + 1
        }
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    /// Consumption `(λ/τ_j)^{−γ_j}`.
    pub fn consumption(&self, j: usize, lambda: f64) -> f64 {
        (lambda / self.tau[j]).powf(-self.gamma[j])
    }

    /// Multiplier of the deterministic steady state `a = k = 1`, solving
    /// `Σ_j (A − δ − c_j(λ)) = 0`.
    pub fn steady_lambda(&self) -> f64 {
        let target = self.a_agg - self.delta;
        let excess = |lam: f64| (0..self.n).map(|j| self.consumption(j, lam) - target).sum::<f64>();
        // consumption is decreasing in λ; bracket and bisect
        let (mut lo, mut hi) = (1e-12_f64, 1.0_f64);
        while excess(hi) > 0.0 {
            hi *= 2.0;
        }
        while excess(lo) < 0.0 {
            lo *= 0.5;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn production(a: f64, k: f64, p: &IrbcParameters) -> Result<f64> {
    if !(a > 0.0 && k > 0.0) {
        return Err(invalid(format!("production needs a, k > 0, got a={a}, k={k}")));
    }
    Ok(p.a_agg * a * k.powf(p.alpha))
}

pub fn adjustment_cost(k: f64, k_next: f64, p: &IrbcParameters) -> Result<f64> {
    if !(k > 0.0) {
        return Err(invalid(format!("adjustment cost needs k > 0, got {k}")));
    }
    let g = k_next / k - 1.0;
    Ok(0.5 * p.phi_adj * k * g * g)
}

pub fn investment(k: f64, k_next: f64, p: &IrbcParameters) -> f64 {
    k_next - (1.0 - p.delta) * k
}

/// `ln a′_j = ρ_a ln a_j + σ (e_j + e_global)`.
pub fn law_of_motion(a: &[f64], shocks: &[f64], global: f64, p: &IrbcParameters) -> Vec<f64> {
    a.iter()
        .zip(shocks)
        .map(|(&aj, &ej)| (p.rho_a * aj.ln() + p.sigma * (ej + global)).exp())
        .collect()
}

/// Fischer–Burmeister function `ψ(a, b) = a + b − √(a² + b²)`.
pub fn fischer_burmeister(a: f64, b: f64) -> f64 {
    a + b - a.hypot(b)
}

/// Generalized partial derivatives of [`fischer_burmeister`]. At the origin
/// the element `(1 − 1/√2, 1 − 1/√2)` is used.
pub fn fischer_burmeister_grad(a: f64, b: f64) -> (f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        let c = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
        (c, c)
    } else {
        (1.0 - a / r, 1.0 - b / r)
    }
}

/// Equal-weight degree-3 monomial rule for `N + 1` independent standard
/// normals: nodes `±√(N+1)·e_i`. Each node stores `N` country shocks followed
/// by the global shock.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockQuadrature {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

pub fn make_shock_quadrature(n: usize) -> ShockQuadrature {
    let dim = n + 1;
    let r = (dim as f64).sqrt();
    let mut nodes = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for s in [r, -r] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            nodes.push(e);
        }
    }
    let weights = vec![1.0 / (2 * dim) as f64; 2 * dim];
    ShockQuadrature { nodes, weights }
}

/// Affine box for the state, mapped onto `[0,1]^{2N}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDomain {
    pub k_min: f64,
    pub k_max: f64,
    pub lna_half_width: f64,
}

impl StateDomain {
    pub fn from_config(c: &IrbcConfig) -> Result<Self> {
        if !(c.k_min > 0.0 && c.k_max > c.k_min && c.k_max.is_finite()) {
            return Err(invalid(format!("need 0 < k_min < k_max, got [{}, {}]", c.k_min, c.k_max)));
        }
        if !(c.lna_half_width > 0.0 && c.lna_half_width.is_finite()) {
            return Err(invalid(format!("lna_half_width must be > 0, got {}", c.lna_half_width)));
        }
        Ok(Self {
            k_min: c.k_min,
            k_max: c.k_max,
            lna_half_width: c.lna_half_width,
        })
    }

    pub fn k_scale(&self) -> f64 {
        1.0 / (self.k_max - self.k_min)
    }

    /// Canonical coordinates without clamping.
    pub fn to_canonical_raw(&self, a: &[f64], k: &[f64]) -> Vec<f64> {
        let w = self.lna_half_width;
        a.iter()
            .map(|&aj| (aj.ln() + w) / (2.0 * w))
            .chain(k.iter().map(|&kj| (kj - self.k_min) * self.k_scale()))
            .collect()
    }

    /// Errors if the state is outside the box.
    pub fn to_canonical(&self, a: &[f64], k: &[f64]) -> Result<Vec<f64>> {
        let x = self.to_canonical_raw(a, k);
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DdsgError::OutOfDomain { point: x });
        }
        Ok(x)
    }

    /// Clamps into the box and returns the number of clamped coordinates.
    pub fn to_canonical_clamped(&self, a: &[f64], k: &[f64], out: &mut [f64], clamped: &mut [bool]) -> usize {
        let w = self.lna_half_width;
        let n = a.len();
        let mut count = 0;
        for j in 0..2 * n {
            let raw = if j < n {
                (a[j].ln() + w) / (2.0 * w)
            } else {
                (k[j - n] - self.k_min) * self.k_scale()
            };
            let c = raw.clamp(0.0, 1.0);
            clamped[j] = c != raw;
            count += usize::from(clamped[j]);
            out[j] = c;
        }
        count
    }

    /// `(a, k)` from canonical coordinates.
    pub fn from_canonical(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len() / 2;
        let w = self.lna_half_width;
        let a = x[..n].iter().map(|&v| (v * 2.0 * w - w).exp()).collect();
        let k = x[n..].iter().map(|&v| self.k_min + v * (self.k_max - self.k_min)).collect();
        (a, k)
    }
}

/// Source of next-period policies on the canonical cube.
pub trait PolicySource: Sync {
    /// Writes the policy at `x` and, if requested, its gradient
    /// `grad[o * 2N + j]`.
    fn policy_at(&self, x: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) -> Result<()>;
}

impl PolicySource for VectorizedDdsg {
    fn policy_at(&self, x: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        let mut sc = EvalScratch::default();
        match grad {
            Some(g) => self.evaluate_with_gradient(x, out, g, &mut sc),
            None => self.evaluate_into(x, out, &mut sc),
        }
    }
}

/// The initial guess `k′ = k`, `μ = 0`, `λ = λ_ss`.
#[derive(Debug, Clone)]
pub struct SteadyStatePolicy {
    n: usize,
    nonsmooth: bool,
    lambda: f64,
    domain: StateDomain,
}

impl SteadyStatePolicy {
    pub fn new(model: &IrbcModel) -> Self {
        Self {
            n: model.params.n,
            nonsmooth: model.params.is_nonsmooth(),
            lambda: model.params.steady_lambda(),
            domain: model.domain,
        }
    }

    /// Policy vector for the state `(a, k)`.
    pub fn guess(&self, k: &[f64]) -> Vec<f64> {
        let mut p = k.to_vec();
        if self.nonsmooth {
            p.extend(std::iter::repeat(0.0).take(self.n));
        }
        p.push(self.lambda);
        p
    }
}

impl PolicySource for SteadyStatePolicy {
    fn policy_at(&self, x: &[f64], out: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        let (_, k) = self.domain.from_canonical(x);
        out.copy_from_slice(&self.guess(&k));
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            let d = 2 * self.n;
            for j in 0..self.n {
                g[j * d + self.n + j] = self.domain.k_max - self.domain.k_min;
            }
        }
        Ok(())
    }
}

/// Calibrated model: parameters, state box and shock rule.
#[derive(Debug, Clone)]
pub struct IrbcModel {
    pub params: IrbcParameters,
    pub domain: StateDomain,
    pub quad: ShockQuadrature,
}

/// Residuals at one state together with diagnostic counts.
#[derive(Debug, Clone)]
pub struct FocEvaluation {
    pub residuals: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    /// Successor-state coordinates clamped into the box.
    pub clamped: usize,
}

impl IrbcModel {
    pub fn new(config: &IrbcConfig) -> Result<Self> {
        let params = IrbcParameters::from_config(config)?;
        let domain = StateDomain::from_config(config)?;
        let quad = make_shock_quadrature(params.n);
        Ok(Self { params, domain, quad })
    }

    pub fn steady_policy(&self) -> SteadyStatePolicy {
        SteadyStatePolicy::new(self)
    }

    /// FOC residuals at state `(a, k)` for `candidate`, reading `t+1`
    /// quantities from `next`. With `with_jacobian` the analytic Jacobian with
    /// respect to the candidate is returned as well.
    pub fn foc(
        &self,
        a: &[f64],
        k: &[f64],
        candidate: &[f64],
        next: &dyn PolicySource,
        with_jacobian: bool,
    ) -> Result<FocEvaluation> {
        let p = &self.params;
        let n = p.n;
        let ns = p.is_nonsmooth();
        let m = p.policy_len();
        let d = 2 * n;
        if a.len() != n || k.len() != n || candidate.len() != m {
            return Err(DdsgError::DimensionMismatch {
                expected: m,
                got: candidate.len(),
            });
        }
        let kn = &candidate[..n];
        let mu = if ns { &candidate[n..2 * n] } else { &[][..] };
        let lam = candidate[m - 1];
        let li = m - 1;

        let mut res = vec![0.0; m];
        let mut jac = with_jacobian.then(|| DMatrix::<f64>::zeros(m, m));

        // expectation terms: E_j = Σ_q w_q [λ′ B_jq − (1−δ) μ′_j]
        let mut expect = vec![0.0; n];
        let mut d_expect = vec![0.0; n * n]; // ∂E_j/∂k′_i
        let mut xq = vec![0.0; d];
        let mut clamped = vec![false; d];
        let mut pol = vec![0.0; m];
        let mut grad = vec![0.0; m * d];
        let mut clamp_total = 0;
        let ks = self.domain.k_max - self.domain.k_min;
        for (node, &w) in self.quad.nodes.iter().zip(&self.quad.weights) {
            let a_next = law_of_motion(a, &node[..n], node[n], p);
            clamp_total += self.domain.to_canonical_clamped(&a_next, kn, &mut xq, &mut clamped);
            next.policy_at(&xq, &mut pol, with_jacobian.then_some(&mut grad[..]))?;
            let lam1 = pol[m - 1];
            for j in 0..n {
                let knn = pol[j];
                let g1 = knn / kn[j] - 1.0;
                let mpk = a_next[j] * p.a_agg * p.alpha * kn[j].powf(p.alpha - 1.0);
                let b = mpk + 1.0 - p.delta + 0.5 * p.phi_adj * g1 * (g1 + 2.0);
                let mu1 = if ns { pol[n + j].max(0.0) } else { 0.0 };
                expect[j] += w * (lam1 * b - (1.0 - p.delta) * mu1);
                if with_jacobian {
                    for i in 0..n {
                        // chain rule through the k coordinate of the successor state
                        let dx = if clamped[n + i] { 0.0 } else { 1.0 / ks };
                        let dpol = |o: usize| grad[o * d + n + i] * dx;
                        let dknn = dpol(j);
                        let mut dg1 = dknn / kn[j];
                        let mut db_own = 0.0;
                        if i == j {
                            dg1 -= knn / (kn[j] * kn[j]);
                            db_own = mpk * (p.alpha - 1.0) / kn[j];
                        }
                        let db = db_own + p.phi_adj * (g1 + 1.0) * dg1;
                        let dmu1 = if ns && pol[n + j] > 0.0 { dpol(n + j) } else { 0.0 };
                        d_expect[j * n + i] += w * (dpol(m - 1) * b + lam1 * db - (1.0 - p.delta) * dmu1);
                    }
                }
            }
        }

        for j in 0..n {
            let g = kn[j] / k[j] - 1.0;
            let muj = if ns { mu[j] } else { 0.0 };
            res[j] = lam * (1.0 + p.phi_adj * g) - muj - p.beta * expect[j];
            if let Some(jm) = jac.as_mut() {
                for i in 0..n {
                    jm[(j, i)] = -p.beta * d_expect[j * n + i];
                }
                jm[(j, j)] += lam * p.phi_adj / k[j];
                jm[(j, li)] = 1.0 + p.phi_adj * g;
                if ns {
                    jm[(j, n + j)] = -1.0;
                }
            }
        }
        if ns {
            for j in 0..n {
                let s = investment(k[j], kn[j], p);
                res[n + j] = fischer_burmeister(mu[j], s);
                if let Some(jm) = jac.as_mut() {
                    let (da, db) = fischer_burmeister_grad(mu[j], s);
                    jm[(n + j, n + j)] = da;
                    jm[(n + j, j)] = db;
                }
            }
        }
        let mut r = 0.0;
        for j in 0..n {
            let g = kn[j] / k[j] - 1.0;
            let c = p.consumption(j, lam);
            r += a[j] * p.a_agg * k[j].powf(p.alpha) + k[j] * ((1.0 - p.delta) - 0.5 * p.phi_adj * g * g) - kn[j] - c;
            if let Some(jm) = jac.as_mut() {
                jm[(li, j)] = -p.phi_adj * g - 1.0;
                jm[(li, li)] += p.gamma[j] * c / lam;
            }
        }
        res[li] = r;
        Ok(FocEvaluation {
            residuals: res,
            jacobian: jac,
            clamped: clamp_total,
        })
    }

    /// Forward-difference Jacobian of the residuals with relative step `eps`.
    pub fn foc_jacobian_fd(
        &self,
        a: &[f64],
        k: &[f64],
        candidate: &[f64],
        next: &dyn PolicySource,
        eps: f64,
    ) -> Result<DMatrix<f64>> {
        self.foc_jacobian_toward(a, k, candidate, next, eps, None)
    }

    /// One-sided difference Jacobian whose column `i` steps in the sign of
    /// `direction[i]`: the Jacobian of the smooth piece a move along
    /// `direction` enters when the candidate sits on a kink.
    pub fn foc_jacobian_toward(
        &self,
        a: &[f64],
        k: &[f64],
        candidate: &[f64],
        next: &dyn PolicySource,
        eps: f64,
        direction: Option<&[f64]>,
    ) -> Result<DMatrix<f64>> {
        let m = candidate.len();
        let base = self.foc(a, k, candidate, next, false)?.residuals;
        let mut jac = DMatrix::zeros(m, m);
        let mut c = candidate.to_vec();
        for i in 0..m {
            let sign = match direction {
                Some(d) if d[i] < 0.0 => -1.0,
                _ => 1.0,
            };
            let h = sign * eps * candidate[i].abs().max(1.0);
            c[i] = candidate[i] + h;
            let r = self.foc(a, k, &c, next, false)?.residuals;
            c[i] = candidate[i];
            for row in 0..m {
                jac[(row, i)] = (r[row] - base[row]) / h;
            }
        }
        Ok(jac)
    }

    /// Unit-free Euler error at canonical state `x` for a policy that is its
    /// own successor: `max_j |β E_j / (λ(1 + φ g_j) − μ_j) − 1|`. Returns the
    /// error and the number of clamped successor coordinates.
    pub fn euler_error(&self, x: &[f64], policy: &dyn PolicySource) -> Result<(f64, usize)> {
        let p = &self.params;
        let n = p.n;
        let m = p.policy_len();
        let (a, k) = self.domain.from_canonical(x);
        let mut cand = vec![0.0; m];
        policy.policy_at(x, &mut cand, None)?;
        if p.is_nonsmooth() {
            for v in &mut cand[n..2 * n] {
                *v = v.max(0.0);
            }
        }
        let ev = self.foc(&a, &k, &cand, policy, false)?;
        let lam = cand[m - 1];
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let g = cand[j] / k[j] - 1.0;
            let muj = if p.is_nonsmooth() { cand[n + j] } else { 0.0 };
            let lhs = lam * (1.0 + p.phi_adj * g) - muj;
            // residual = lhs − βE, so βE / lhs − 1 = −residual / lhs
            let e = (ev.residuals[j] / lhs).abs();
            worst = worst.max(if e.is_finite() { e } else { f64::INFINITY });
        }
        Ok((worst, ev.clamped))
    }
}
