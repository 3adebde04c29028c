//! Restarted primal-dual loop shared by the lifted and compact solvers.
//!
//! A method supplies one extrapolated primal-dual step plus residual and
//! distance evaluations on its own point type; this module owns step-size
//! control, averaging, restarts and termination.

use std::time::Instant;

use crate::adaptive::{should_restart, StepController, StepMode};
use crate::error::Result;
use crate::kkt::Residuals;
use crate::instance::FisherInstance;
use crate::report::{
    AllocationSummary, HistoryPoint, RestartScheme, Solution, SolveReport, Solver, SolverConfig,
    Status,
};

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepStats {
    /// `‖Δprimal‖²`
    pub primal_sq: f64,
    /// `‖Δdual‖²`
    pub dual_sq: f64,
    /// `Δdualᵀ K Δprimal` for the constraint operator `K`.
    pub interaction: f64,
    pub passes: u32,
}

pub(crate) trait Method {
    type Point: Clone;

    /// Operator norm of the constraint operator.
    fn op_norm(&self) -> f64;
    /// One step from `cur` with extrapolation against `prev`, written to `out`.
    fn step(
        &self,
        cur: &Self::Point,
        prev: &Self::Point,
        tau: f64,
        sigma: f64,
        out: &mut Self::Point,
    ) -> Result<StepStats>;
    fn residuals(&self, z: &Self::Point) -> Result<Residuals>;
    /// Euclidean distances `(primal, dual)` between two points.
    fn distances(&self, a: &Self::Point, b: &Self::Point) -> (f64, f64);
    /// `avg ← (k·avg + z) / (k + 1)`.
    fn accumulate(&self, avg: &mut Self::Point, z: &Self::Point, k: usize);
    /// Recomputes cached products after a point was formed by averaging.
    fn refresh(&self, z: &mut Self::Point);
    fn is_finite(&self, z: &Self::Point) -> bool;
    fn solution(&self, z: &Self::Point) -> Solution;
}

pub(crate) struct RunOutcome<P> {
    pub status: Status,
    pub point: P,
    pub residuals: Residuals,
    pub iterations: usize,
    pub restarts: usize,
    pub rejected_steps: usize,
    pub history: Vec<HistoryPoint>,
    pub restart_iterations: Vec<usize>,
    pub passes: Vec<u32>,
    pub wall_time_seconds: f64,
}

pub(crate) fn run<M: Method>(
    method: &M,
    start: M::Point,
    cfg: &SolverConfig,
) -> Result<RunOutcome<M::Point>> {
    let timer = Instant::now();
    let l_hat = method.op_norm().max(f64::MIN_POSITIVE);
    let mut ctrl = match cfg.step {
        StepMode::Theory => StepController::new(0.5 / l_hat, 1.0, cfg.step_params),
        StepMode::Adaptive | StepMode::FixedEta => {
            let omega = cfg.omega_initial.unwrap_or(1.0);
            StepController::new(cfg.step_params.eta_initial_scale / l_hat, omega, cfg.step_params)
        }
    };

    let mut cur = start;
    method.refresh(&mut cur);
    let mut prev = cur.clone();
    let mut cand = cur.clone();
    let mut avg = cur.clone();
    let mut anchor = cur.clone();

    let r0 = method.residuals(&cur)?;
    let mut history = vec![HistoryPoint {
        iteration: 0,
        rel_kkt: r0.rel_kkt,
    }];
    let mut out = RunOutcome {
        status: Status::MaxIters,
        point: cur.clone(),
        residuals: r0,
        iterations: 0,
        restarts: 0,
        rejected_steps: 0,
        history: Vec::new(),
        restart_iterations: Vec::new(),
        passes: Vec::new(),
        wall_time_seconds: 0.0,
    };
    if r0.rel_kkt < cfg.tol {
        out.status = Status::Optimal;
        out.history = history;
        out.wall_time_seconds = timer.elapsed().as_secs_f64();
        return Ok(out);
    }

    let mut metric_at_restart = r0.rel_kkt;
    let mut metric_previous = r0.rel_kkt;
    let mut best = (r0.rel_kkt, r0);
    let mut inner = 0usize;
    let mut total = 0usize;

    'outer: while total < cfg.max_iters {
        // One accepted step; rejected attempts also count toward the cap.
        loop {
            let stats = method.step(&cur, &prev, ctrl.tau(), ctrl.sigma(), &mut cand)?;
            total += 1;
            out.passes.push(stats.passes);
            if cfg.step != StepMode::Adaptive {
                break;
            }
            let omega = ctrl.omega;
            let weighted = omega * stats.primal_sq + stats.dual_sq / omega;
            let coupling = 2.0 * stats.interaction.abs();
            let eta_bar = if coupling > 0.0 {
                weighted / coupling
            } else {
                f64::INFINITY
            };
            let accept = ctrl.eta <= eta_bar || ctrl.at_eta_floor();
            ctrl.eta = ctrl.next_eta(eta_bar, total);
            debug_assert!({
                let (lo, hi) = ctrl.eta_bounds();
                ctrl.eta >= lo && ctrl.eta <= hi
            });
            if accept {
                break;
            }
            out.rejected_steps += 1;
            if total >= cfg.max_iters {
                break 'outer;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut cand);
        method.accumulate(&mut avg, &cur, inner);
        inner += 1;

        if !method.is_finite(&cur) {
            out.status = Status::Diverging;
            break;
        }

        let fixed_due = matches!(cfg.restart, RestartScheme::Fixed(k) if inner >= k);
        let check_due = inner % cfg.check_every == 0 || fixed_due || total >= cfg.max_iters;
        if !check_due {
            continue;
        }
        let r_cur = method.residuals(&cur)?;
        let r_avg = method.residuals(&avg)?;
        let (metric, from_avg) = if r_avg.rel_kkt <= r_cur.rel_kkt {
            (r_avg.rel_kkt, true)
        } else {
            (r_cur.rel_kkt, false)
        };
        history.push(HistoryPoint {
            iteration: total,
            rel_kkt: metric,
        });
        log::debug!(
            "iter {total}: current {:.3e}, average {:.3e}, eta {:.3e}, omega {:.3e}",
            r_cur.rel_kkt,
            r_avg.rel_kkt,
            ctrl.eta,
            ctrl.omega
        );
        if metric < best.0 {
            best = (metric, if from_avg { r_avg } else { r_cur });
            out.point = if from_avg { avg.clone() } else { cur.clone() };
        }
        if metric < cfg.tol {
            out.status = Status::Optimal;
            break;
        }

        let restart = match cfg.restart {
            RestartScheme::Fixed(_) => fixed_due,
            RestartScheme::Adaptive => should_restart(
                r_avg.rel_kkt,
                metric_at_restart,
                metric_previous,
                inner,
                total,
                &cfg.restart_params,
            ),
        };
        metric_previous = r_avg.rel_kkt;
        if restart {
            method.refresh(&mut avg);
            let (dp, dd) = method.distances(&avg, &anchor);
            if cfg.step != StepMode::Theory {
                ctrl.update_weights(dp, dd);
            }
            anchor.clone_from(&avg);
            cur.clone_from(&avg);
            prev.clone_from(&avg);
            inner = 0;
            metric_at_restart = r_avg.rel_kkt;
            metric_previous = r_avg.rel_kkt;
            out.restarts += 1;
            out.restart_iterations.push(total);
            log::info!(
                "restart {} at iteration {total}: rel_kkt {:.3e}",
                out.restarts,
                r_avg.rel_kkt
            );
        }
    }

    out.iterations = total;
    out.residuals = best.1;
    out.history = history;
    out.wall_time_seconds = timer.elapsed().as_secs_f64();
    if out.status == Status::Diverging {
        out.point = cur;
    }
    Ok(out)
}

/// Validates the inputs and returns the instance the solver works on.
pub(crate) fn prepare(inst: &FisherInstance, cfg: &SolverConfig) -> Result<FisherInstance> {
    cfg.validate()?;
    inst.ensure_valid()?;
    if cfg.normalize {
        Ok(inst.normalize()?.instance)
    } else {
        Ok(inst.clone())
    }
}

pub(crate) fn report<P>(
    solver: Solver,
    original: &FisherInstance,
    work: &FisherInstance,
    cfg: &SolverConfig,
    outcome: RunOutcome<P>,
    solution: Solution,
) -> SolveReport {
    let u = &work.utilities;
    let col_sums = {
        let mut c = vec![0.0; u.n_cols()];
        u.column_sums_into(&solution.x, &mut c);
        c
    };
    let utils = crate::kkt::row_utilities(work, &solution.x);
    let allocation = AllocationSummary {
        positive_entries: solution.x.iter().filter(|&&v| v > 0.0).count(),
        max_supply_violation: col_sums.iter().fold(0.0, |a, c| f64::max(a, (c - 1.0).abs())),
        min_buyer_utility: utils.iter().cloned().fold(f64::INFINITY, f64::min),
        total_spending: solution
            .x
            .iter()
            .zip(u.col_indices())
            .map(|(x, &j)| x * solution.p[j])
            .sum(),
    };
    SolveReport {
        solver,
        status: outcome.status,
        inner_iterations: outcome.iterations,
        restarts: outcome.restarts,
        rejected_steps: outcome.rejected_steps,
        wall_time_seconds: outcome.wall_time_seconds,
        final_residuals: outcome.residuals,
        residual_history: outcome.history,
        restart_iterations: outcome.restart_iterations,
        subproblem_passes: if solver == Solver::Pdhcg {
            outcome.passes
        } else {
            Vec::new()
        },
        prices: solution.p.clone(),
        allocation,
        instance_fingerprint: original.fingerprint(),
        config_echo: cfg.clone(),
        solution,
    }
}
