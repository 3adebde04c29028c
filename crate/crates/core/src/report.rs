//! Solver configuration and the report / solution types both Fisher solvers
//! return.

use serde::{Deserialize, Serialize};

use crate::adaptive::{RestartParams, StepMode, StepParams};
use crate::error::{Error, Result};
use crate::kkt::Residuals;
use crate::pdhcg::search::SearchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Pdhg,
    Pdhcg,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Pdhg => "pdhg",
            Solver::Pdhcg => "pdhcg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    MaxIters,
    /// Iterates became non-finite.
    Diverging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartScheme {
    /// Restart when the relative KKT error of the average decays enough.
    Adaptive,
    /// Restart every `K` inner iterations.
    Fixed(usize),
}

impl RestartScheme {
    /// Parses `adaptive` or `fixed:K`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "adaptive" {
            return Some(Self::Adaptive);
        }
        let k: usize = s.strip_prefix("fixed:")?.parse().ok()?;
        (k > 0).then_some(Self::Fixed(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Target relative KKT error.
    pub tol: f64,
    /// Cap on inner iterations, rejected step attempts included.
    pub max_iters: usize,
    pub restart: RestartScheme,
    pub step: StepMode,
    pub restart_params: RestartParams,
    pub step_params: StepParams,
    /// Inner iterations between residual evaluations.
    pub check_every: usize,
    pub search: SearchConfig,
    /// Scale each utility row to a maximum of 1 before solving.
    pub normalize: bool,
    pub power_iters: usize,
    /// Overrides the starting primal weight.
    pub omega_initial: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 100_000,
            restart: RestartScheme::Adaptive,
            step: StepMode::Adaptive,
            restart_params: RestartParams::default(),
            step_params: StepParams::default(),
            check_every: 40,
            search: SearchConfig::default(),
            normalize: true,
            power_iters: 50,
            omega_initial: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.max_iters == 0 || self.check_every == 0 || self.power_iters == 0 {
            return Err(Error::Config(
                "max_iters, check_every and power_iters must be positive".into(),
            ));
        }
        if let RestartScheme::Fixed(0) = self.restart {
            return Err(Error::Config("fixed restart length must be positive".into()));
        }
        if let Some(w) = self.omega_initial {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config("omega_initial must be positive".into()));
            }
        }
        self.restart_params.validate()?;
        self.search.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    pub rel_kkt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AllocationSummary {
    /// Stored entries with a positive allocation.
    pub positive_entries: usize,
    /// Largest `|Σ_i x_ij - 1|`.
    pub max_supply_violation: f64,
    pub min_buyer_utility: f64,
    pub total_spending: f64,
}

/// Final iterate, in the (possibly normalized) space the solver worked in.
/// `t` and `y` are present for the lifted formulation only.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Solution {
    pub normalized: bool,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub solver: Solver,
    pub status: Status,
    pub inner_iterations: usize,
    pub restarts: usize,
    pub rejected_steps: usize,
    pub wall_time_seconds: f64,
    pub final_residuals: Residuals,
    pub residual_history: Vec<HistoryPoint>,
    pub restart_iterations: Vec<usize>,
    /// Search passes summed over rows, per inner iteration (PDHCG only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subproblem_passes: Vec<u32>,
    pub prices: Vec<f64>,
    pub allocation: AllocationSummary,
    pub instance_fingerprint: String,
    pub config_echo: SolverConfig,
    #[serde(skip)]
    pub solution: Solution,
}

impl SolveReport {
    pub fn price_sum_error(&self, total_budget: f64) -> f64 {
        (self.prices.iter().sum::<f64>() - total_budget).abs() / total_budget
    }
}
