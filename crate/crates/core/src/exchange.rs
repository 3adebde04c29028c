//! Arrow–Debreu equilibrium by fixed-point iteration on budgets:
//! `w ← E·p(w)`, where `p(w)` are the equilibrium prices of the Fisher
//! market with budgets `w`, solved by PDHCG.
//!
//! Budgets live on the unit simplex. The Fisher problem is homogeneous in
//! `w`, so the inner solve runs on `n·w` (mean budget 1) and its prices are
//! divided by `n`; this keeps the inner problem at the scale the solver
//! defaults are tuned for.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::ExchangeInstance;
use crate::pdhcg::solve_fisher_pdhcg_from;
use crate::report::{Solution, SolveReport, SolverConfig, Status};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExchangeConfig {
    /// Stop once `‖w^{k+1} - w^k‖₂` is at most this.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Inner relative KKT tolerance for the early outer iterations.
    pub inner_tol_start: f64,
    /// Consecutive gap increases that flag divergence.
    pub diverge_after: usize,
    /// Inner tolerance of the closing re-solve that checks the fixed point;
    /// `None` skips the check.
    pub verify_tol: Option<f64>,
    /// Budgets are flagged as inside the lower-bound region when
    /// `min_i w_i ≥ lower_bound_constant / n`.
    pub lower_bound_constant: f64,
    pub inner: SolverConfig,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            max_outer: 100,
            inner_tol_start: 1e-5,
            diverge_after: 5,
            verify_tol: Some(1e-8),
            lower_bound_constant: 1e-2,
            inner: SolverConfig::default(),
        }
    }
}

impl ExchangeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0 && self.inner_tol_start > 0.0) {
            return Err(Error::Config("exchange tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.diverge_after == 0 {
            return Err(Error::Config(
                "max_outer and diverge_after must be positive".into(),
            ));
        }
        if let Some(t) = self.verify_tol {
            if !(t > 0.0) {
                return Err(Error::Config("verify_tol must be positive".into()));
            }
        }
        self.inner.validate()
    }

    /// Inner tolerance given the latest budget gap.
    pub fn inner_tol(&self, last_gap: Option<f64>) -> f64 {
        match last_gap {
            Some(g) if g < 10.0 * self.outer_tol => (self.outer_tol / 10.0).min(self.inner_tol_start),
            _ => self.inner_tol_start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeStatus {
    Converged,
    MaxOuter,
    Diverging,
    InnerFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointTrace {
    pub status: ExchangeStatus,
    pub outer_iterations: usize,
    pub budgets_history: Vec<Vec<f64>>,
    /// `‖w^{k+1} - w^k‖₂` per outer iteration.
    pub budget_gaps: Vec<f64>,
    /// Smallest budget per outer iteration, and whether it clears the
    /// configured lower bound.
    pub min_budgets: Vec<f64>,
    pub lower_bound_flags: Vec<bool>,
    pub inner_reports: Vec<SolveReport>,
    pub final_budgets: Vec<f64>,
    pub final_prices: Vec<f64>,
    /// Inner tolerance used on the last outer iteration.
    pub final_inner_tol: f64,
    /// `‖w - E·p(w)‖₂` at the final budgets with a tight inner re-solve.
    pub fixed_point_residual: Option<f64>,
    pub wall_time_seconds: f64,
    pub instance_fingerprint: String,
    pub config_echo: ExchangeConfig,
    #[serde(skip)]
    pub last_solution: Option<Solution>,
}

/// `E·p` for a price vector `p`.
pub fn endowment_value(inst: &ExchangeInstance, p: &[f64]) -> Vec<f64> {
    let e = &inst.endowments;
    (0..e.n_rows()).map(|i| e.row(i).dot(p)).collect()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// One application of the fixed-point map at budgets `w` on the simplex.
///
/// Returns `E·p(w)` renormalized to sum 1, the inner report (prices in the
/// scaled inner space), and the inner solution for warm starts.
pub fn apply_t(
    inst: &ExchangeInstance,
    w: &[f64],
    inner: &SolverConfig,
    warm: Option<&Solution>,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = inst.n_agents() as f64;
    if w.len() != inst.n_agents() {
        return Err(Error::Structural("budget vector length mismatch".into()));
    }
    if w.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Precondition("budgets must be positive".into()));
    }
    let fisher = inst.fisher_at(w.iter().map(|v| v * n).collect())?;
    let report = solve_fisher_pdhcg_from(
        &fisher,
        inner,
        warm.map(|s| (s.x.as_slice(), s.p.as_slice())),
    )?;
    let prices: Vec<f64> = report.prices.iter().map(|p| p / n).collect();
    let mut next = endowment_value(inst, &prices);
    let total: f64 = next.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Precondition(format!(
            "endowment value of prices sums to {total}"
        )));
    }
    for v in &mut next {
        *v /= total;
    }
    debug_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    Ok((next, report))
}

pub fn solve_exchange(inst: &ExchangeInstance, cfg: &ExchangeConfig) -> Result<FixedPointTrace> {
    cfg.validate()?;
    inst.ensure_valid()?;
    let timer = Instant::now();
    let n = inst.n_agents();
    let mut w = vec![1.0 / n as f64; n];
    let floor = cfg.lower_bound_constant / n as f64;
    let mut trace = FixedPointTrace {
        status: ExchangeStatus::MaxOuter,
        outer_iterations: 0,
        budgets_history: vec![w.clone()],
        budget_gaps: Vec::new(),
        min_budgets: Vec::new(),
        lower_bound_flags: Vec::new(),
        inner_reports: Vec::new(),
        final_budgets: Vec::new(),
        final_prices: Vec::new(),
        final_inner_tol: cfg.inner_tol_start,
        fixed_point_residual: None,
        wall_time_seconds: 0.0,
        instance_fingerprint: inst.fingerprint(),
        config_echo: cfg.clone(),
        last_solution: None,
    };
    let mut increases = 0usize;
    let mut last_gap: Option<f64> = None;

    for _ in 0..cfg.max_outer {
        let inner = SolverConfig {
            tol: cfg.inner_tol(last_gap),
            ..cfg.inner.clone()
        };
        let (next, report) = apply_t(inst, &w, &inner, trace.last_solution.as_ref())?;
        trace.outer_iterations += 1;
        trace.final_inner_tol = inner.tol;
        let ok = report.status == Status::Optimal;
        trace.final_prices = report.prices.iter().map(|p| p / n as f64).collect();
        trace.last_solution = Some(report.solution.clone());
        trace.inner_reports.push(report);
        if !ok {
            trace.status = ExchangeStatus::InnerFailed;
            break;
        }
        let gap = l2_dist(&next, &w);
        log::info!("outer {}: budget gap {gap:.3e}", trace.outer_iterations);
        let min_w = next.iter().cloned().fold(f64::INFINITY, f64::min);
        trace.min_budgets.push(min_w);
        trace.lower_bound_flags.push(min_w >= floor);
        trace.budget_gaps.push(gap);
        trace.budgets_history.push(next.clone());
        increases = match last_gap {
            Some(g) if gap > g => increases + 1,
            _ => 0,
        };
        w = next;
        last_gap = Some(gap);
        if gap <= cfg.outer_tol {
            trace.status = ExchangeStatus::Converged;
            break;
        }
        if increases >= cfg.diverge_after {
            trace.status = ExchangeStatus::Diverging;
            break;
        }
    }
    trace.final_budgets = w;
    if let Some(tol) = cfg.verify_tol {
        if trace.status != ExchangeStatus::InnerFailed {
            let (r, _) = verify_fixed_point(
                inst,
                &trace.final_budgets,
                &cfg.inner,
                tol,
                trace.last_solution.as_ref(),
            )?;
            trace.fixed_point_residual = Some(r);
        }
    }
    trace.wall_time_seconds = timer.elapsed().as_secs_f64();
    Ok(trace)
}

/// `‖w - E·p(w)‖₂` with `p(w)` re-solved to relative KKT error `tol`.
pub fn verify_fixed_point(
    inst: &ExchangeInstance,
    w: &[f64],
    inner: &SolverConfig,
    tol: f64,
    warm: Option<&Solution>,
) -> Result<(f64, SolveReport)> {
    let cfg = SolverConfig {
        tol,
        max_iters: inner.max_iters.max(200_000),
        ..inner.clone()
    };
    let (next, report) = apply_t(inst, w, &cfg, warm)?;
    if report.status != Status::Optimal {
        return Err(Error::Precondition(format!(
            "verification solve stopped with status {:?}",
            report.status
        )));
    }
    Ok((l2_dist(&next, w), report))
}
