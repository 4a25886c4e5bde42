//! Run configuration read from TOML. Unknown keys are rejected and every
//! value is validated before any computation starts.

use std::path::Path;

use ddsg::hdmr::DecomposeOptions;
use ddsg::irbc::{IrbcConfig, IrbcParameters, StateDomain};
use ddsg::solver::{SolverConfig, TimeIterationConfig};
use ddsg::sparse_grid::{BoundaryMode, GridOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for every sampler of the run. Also drives the time-iteration
    /// Euler and policy-change samples.
    pub seed: u64,
    pub grid: GridSection,
    pub hdmr: HdmrSection,
    pub model: IrbcConfig,
    pub solver: SolverConfig,
    pub time_iteration: TimeIterationConfig,
    pub runtime: RuntimeSection,
    pub approx: ApproxSection,
    pub analyze: AnalyzeSection,
    pub bench: BenchSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            grid: GridSection::default(),
            hdmr: HdmrSection::default(),
            model: IrbcConfig::default(),
            solver: SolverConfig::default(),
            time_iteration: TimeIterationConfig::default(),
            runtime: RuntimeSection::default(),
            approx: ApproxSection::default(),
            analyze: AnalyzeSection::default(),
            bench: BenchSection::default(),
        }
    }
}

/// `SG^{ε_γ}_ℓ` part of the `DD^{ε_η}_k SG^{ε_γ}_ℓ` naming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub max_level: u32,
    pub eps_gamma: f64,
    pub boundary: BoundaryMode,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            max_level: 4,
            eps_gamma: 1e-3,
            boundary: BoundaryMode::ModifiedLinear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HdmrSection {
    pub k_max: usize,
    pub eps_eta: f64,
    /// Defaults to `eps_eta`.
    pub eps_rho: Option<f64>,
}

impl Default for HdmrSection {
    fn default() -> Self {
        Self {
            k_max: 1,
            eps_eta: 1e-4,
            eps_rho: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RuntimeSection {
    /// Worker threads; the `DDSG_WORKERS` variable or the core count when unset.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    /// `(x₁ + … + x_d)^power`.
    Polynomial,
    /// Genz product peak `Π (c⁻² + (x_j − 0.5)²)⁻¹` with `c = 5`.
    ProductPeak,
    /// `x₁ √x₂`, two-dimensional.
    SqrtProduct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorChoice {
    Center,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApproxSection {
    pub function: TestFunction,
    pub dim: usize,
    pub power: u32,
    pub anchor: AnchorChoice,
    /// Uniform samples for the L∞ / L2 error estimates.
    pub samples: usize,
    /// Dimensions of the grid-count ratio table.
    pub ratio_dims: Vec<usize>,
    pub ratio_k_max: Vec<usize>,
}

impl Default for ApproxSection {
    fn default() -> Self {
        Self {
            function: TestFunction::Polynomial,
            dim: 4,
            power: 2,
            anchor: AnchorChoice::Center,
            samples: 1000,
            ratio_dims: vec![10, 20],
            ratio_k_max: vec![1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Time-iteration steps with the `[hdmr]` settings before the measured step.
    pub warmup_steps: usize,
    /// Expansion order of the measured step.
    pub k_max: usize,
    pub eps_eta_sweep: Vec<f64>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            warmup_steps: 10,
            k_max: 2,
            eps_eta_sweep: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub dim: usize,
    pub k_max: usize,
    pub max_level: u32,
    pub points: usize,
    pub repetitions: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            dim: 8,
            k_max: 2,
            max_level: 4,
            points: 1000,
            repetitions: 5,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        let raw: toml::Table = text.parse().map_err(|e| bad(format!("{}: {e}", path.display())))?;
        if raw
            .get("time_iteration")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("rng_seed"))
        {
            return Err(bad("time_iteration.rng_seed is set through the top-level `seed` key"));
        }
        toml::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and propagates the run seed.
    pub fn apply_overrides(&mut self, workers: Option<usize>, seed: Option<u64>) {
        if workers.is_some() {
            self.runtime.workers = workers;
        }
        if let Some(s) = seed {
            self.seed = s;
        }
        self.time_iteration.rng_seed = self.seed;
    }

    pub fn decompose_options(&self) -> DecomposeOptions {
        DecomposeOptions {
            k_max: self.hdmr.k_max,
            eps_rho: self.hdmr.eps_rho.unwrap_or(self.hdmr.eps_eta),
            eps_eta: self.hdmr.eps_eta,
            grid: GridOptions::adaptive(self.grid.max_level, self.grid.eps_gamma, self.grid.boundary),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: ddsg::DdsgError| bad(e.to_string());
        self.decompose_options().grid.validate().map_err(cfg)?;
        if self.hdmr.k_max == 0 {
            return Err(bad("hdmr.k_max must be at least 1"));
        }
        if self.hdmr.eps_eta < 0.0 || self.hdmr.eps_rho.is_some_and(|r| r < 0.0) {
            return Err(bad("hdmr thresholds must be >= 0"));
        }
        IrbcParameters::from_config(&self.model).map_err(cfg)?;
        StateDomain::from_config(&self.model).map_err(cfg)?;
        self.solver.validate().map_err(cfg)?;
        self.time_iteration.validate().map_err(cfg)?;
        if self.runtime.workers == Some(0) {
            return Err(bad("runtime.workers must be at least 1"));
        }
        let a = &self.approx;
        if a.dim == 0 || a.samples == 0 || a.power == 0 {
            return Err(bad("approx.dim, approx.samples and approx.power must be at least 1"));
        }
        if a.function == TestFunction::SqrtProduct && a.dim != 2 {
            return Err(bad("approx.function = \"sqrt_product\" needs approx.dim = 2"));
        }
        if a.ratio_dims.contains(&0) || a.ratio_k_max.contains(&0) {
            return Err(bad("approx ratio table entries must be at least 1"));
        }
        if self.analyze.k_max == 0 || self.analyze.eps_eta_sweep.iter().any(|e| !(*e >= 0.0)) {
            return Err(bad("analyze.k_max must be >= 1 and sweep thresholds >= 0"));
        }
        let b = &self.bench;
        if b.dim == 0 || b.k_max == 0 || b.k_max > b.dim || b.points == 0 || b.repetitions < 5 {
            return Err(bad("bench needs dim >= 1, 1 <= k_max <= dim, points >= 1, repetitions >= 5"));
        }
        if !(1..=ddsg::sparse_grid::MAX_LEVEL).contains(&b.max_level) {
            return Err(bad("bench.max_level out of range"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, without the worker count,
    /// which never changes results.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.runtime.workers = None;
        let text = toml::to_string(&canonical).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn runtime(&self) -> Result<ddsg::Runtime, CliError> {
        match self.runtime.workers {
            Some(w) => ddsg::Runtime::new(w),
            None => ddsg::Runtime::from_env(),
        }
        .map_err(|e| bad(e.to_string()))
    }
}
