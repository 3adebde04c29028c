//! Restarted PDHCG on the compact saddle problem
//!
//! ```text
//! min_{x ≥ 0} max_p  -Σ_i w_i log(u_iᵀx_i) + Σ_j p_j (Σ_i x_ij - 1)
//! ```
//!
//! The dual step is the usual extrapolated price update; the primal step is
//! solved exactly, one buyer at a time, by the monotone search in
//! [`search`].

pub mod search;

use rayon::prelude::*;

use crate::driver::{self, Method, StepStats};
use crate::error::{Error, Result};
use crate::instance::FisherInstance;
use crate::kkt::{residuals_compact, Residuals};
use crate::report::{Solution, SolveReport, Solver, SolverConfig};
use crate::sparse::{split_rows, PAR_THRESHOLD};
use search::{solve_row_subproblem, RowProblem, SearchConfig};

/// `(x, p)` with the cached column sums `Σ_i x_ij` and utilities `u_iᵀx_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactPoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub col_sums: Vec<f64>,
    pub row_util: Vec<f64>,
}

impl CompactPoint {
    pub fn new(inst: &FisherInstance, x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        let u = &inst.utilities;
        if x.len() != u.nnz() || p.len() != u.n_cols() {
            return Err(Error::Structural("point does not match instance".into()));
        }
        let mut z = Self {
            x,
            p,
            col_sums: vec![0.0; u.n_cols()],
            row_util: vec![0.0; u.n_rows()],
        };
        refresh(inst, &mut z);
        Ok(z)
    }
}

fn refresh(inst: &FisherInstance, z: &mut CompactPoint) {
    let u = &inst.utilities;
    u.column_sums_into(&z.x, &mut z.col_sums);
    for (i, t) in z.row_util.iter_mut().enumerate() {
        let r = u.row_range(i);
        *t = u.values()[r.clone()]
            .iter()
            .zip(&z.x[r])
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// Feasible starting point: each good split evenly among the buyers who
/// value it, prices `Σw / m`.
pub fn initial_point(inst: &FisherInstance) -> (Vec<f64>, Vec<f64>) {
    let u = &inst.utilities;
    let x = u
        .col_indices()
        .iter()
        .map(|&j| 1.0 / u.col_nnz(j) as f64)
        .collect();
    let p = vec![inst.total_budget() / u.n_cols() as f64; u.n_cols()];
    (x, p)
}

/// `p⁺ = p + σ(2·colsum(x) - colsum(x_prev) - 1)`.
pub fn dual_step_compact(
    p: &[f64],
    col_sums: &[f64],
    prev_col_sums: &[f64],
    sigma: f64,
    out: &mut [f64],
) {
    for j in 0..p.len() {
        out[j] = p[j] + sigma * (2.0 * col_sums[j] - prev_col_sums[j] - 1.0);
    }
}

/// Exact primal step for every buyer. Writes the new allocation and its
/// per-buyer utilities; returns the search passes summed over rows.
pub fn primal_step_compact(
    inst: &FisherInstance,
    x: &[f64],
    prices: &[f64],
    tau: f64,
    search: &SearchConfig,
    out_x: &mut [f64],
    out_util: &mut [f64],
) -> Result<u32> {
    let u = &inst.utilities;
    let solve = |i: usize, xs: &mut [f64], scratch: &mut Vec<f64>| -> Result<(u32, f64)> {
        let prob = RowProblem {
            row: u.row(i),
            x_prev: &x[u.row_range(i)],
            prices,
            tau,
            budget: inst.budgets[i],
        };
        match solve_row_subproblem(&prob, search, xs, scratch) {
            Ok(sol) => Ok((sol.passes as u32, sol.s_tilde)),
            Err(Error::SubproblemStalled {
                passes,
                lower,
                upper,
                ..
            }) => Err(Error::SubproblemStalled {
                row: i,
                passes,
                lower,
                upper,
            }),
            Err(e) => Err(e),
        }
    };
    let rows = split_rows(u, out_x);
    let results: Vec<Result<(u32, f64)>> = if u.nnz() >= PAR_THRESHOLD {
        rows.into_par_iter()
            .enumerate()
            .with_min_len(16)
            .map_init(Vec::new, |scratch, (i, xs)| solve(i, xs, scratch))
            .collect()
    } else {
        let mut scratch = Vec::new();
        rows.into_iter()
            .enumerate()
            .map(|(i, xs)| solve(i, xs, &mut scratch))
            .collect()
    };
    let mut passes = 0u32;
    for (i, r) in results.into_iter().enumerate() {
        let (k, s) = r?;
        passes += k;
        out_util[i] = s;
    }
    Ok(passes)
}

pub(crate) struct Pdhcg<'a> {
    pub inst: &'a FisherInstance,
    pub search: SearchConfig,
    pub power_iters: usize,
}

impl Method for Pdhcg<'_> {
    type Point = CompactPoint;

    fn op_norm(&self) -> f64 {
        // The column-sum operator on the stored pattern has A Aᵀ = diag(col
        // counts); power iteration keeps this honest for any pattern.
        let u = &self.inst.utilities;
        let mut cols = vec![0.0; u.n_cols()];
        crate::sparse::power_norm_estimate(u.nnz(), self.power_iters, |v, out| {
            u.column_sums_into(v, &mut cols);
            for (o, &j) in out.iter_mut().zip(u.col_indices()) {
                *o = cols[j];
            }
        })
    }


    fn step(
        &self,
        cur: &CompactPoint,
        prev: &CompactPoint,
        tau: f64,
        sigma: f64,
        out: &mut CompactPoint,
    ) -> Result<StepStats> {
        dual_step_compact(&cur.p, &cur.col_sums, &prev.col_sums, sigma, &mut out.p);
        let passes = primal_step_compact(
            self.inst,
            &cur.x,
            &out.p,
            tau,
            &self.search,
            &mut out.x,
            &mut out.row_util,
        )?;
        self.inst
            .utilities
            .column_sums_into(&out.x, &mut out.col_sums);
        let mut stats = StepStats {
            passes,
            primal_sq: dist_sq(&out.x, &cur.x),
            dual_sq: dist_sq(&out.p, &cur.p),
            interaction: 0.0,
        };
        for j in 0..out.p.len() {
            stats.interaction += (out.p[j] - cur.p[j]) * (out.col_sums[j] - cur.col_sums[j]);
        }
        Ok(stats)
    }

    fn residuals(&self, z: &CompactPoint) -> Result<Residuals> {
        residuals_compact(self.inst, &z.x, &z.p)
    }

    fn distances(&self, a: &CompactPoint, b: &CompactPoint) -> (f64, f64) {
        (dist_sq(&a.x, &b.x).sqrt(), dist_sq(&a.p, &b.p).sqrt())
    }

    fn accumulate(&self, avg: &mut CompactPoint, z: &CompactPoint, k: usize) {
        let a = k as f64 / (k as f64 + 1.0);
        let b = 1.0 / (k as f64 + 1.0);
        mix(&mut avg.x, &z.x, a, b);
        mix(&mut avg.p, &z.p, a, b);
        mix(&mut avg.col_sums, &z.col_sums, a, b);
        mix(&mut avg.row_util, &z.row_util, a, b);
    }

    fn refresh(&self, z: &mut CompactPoint) {
        refresh(self.inst, z);
    }

    fn is_finite(&self, z: &CompactPoint) -> bool {
        z.p.iter().chain(&z.x).all(|v| v.is_finite())
    }

    fn solution(&self, z: &CompactPoint) -> Solution {
        Solution {
            normalized: false,
            x: z.x.clone(),
            p: z.p.clone(),
            t: None,
            y: None,
        }
    }
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `avg ← a·avg + b·z`
pub(crate) fn mix(avg: &mut [f64], z: &[f64], a: f64, b: f64) {
    for (s, v) in avg.iter_mut().zip(z) {
        *s = a * *s + b * v;
    }
}

/// Runs `k ≥ 1` inner iterations with fixed step sizes from `start`,
/// calling `observe` on every iterate. Returns `(last, average)`.
pub fn inner_loop_compact(
    inst: &FisherInstance,
    start: &CompactPoint,
    tau: f64,
    sigma: f64,
    k: usize,
    search: &SearchConfig,
    observe: &mut dyn FnMut(&CompactPoint),
) -> Result<(CompactPoint, CompactPoint)> {
    if k == 0 {
        return Err(Error::Config("inner loop needs at least one iteration".into()));
    }
    let m = Pdhcg {
        inst,
        search: *search,
        power_iters: 1,
    };
    let mut prev = start.clone();
    let mut cur = start.clone();
    let mut next = start.clone();
    let mut avg = start.clone();
    for it in 0..k {
        m.step(&cur, &prev, tau, sigma, &mut next)?;
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        m.accumulate(&mut avg, &cur, it);
        observe(&cur);
    }
    Ok((cur, avg))
}

/// Operator norm of the column-sum map on the instance's pattern.
pub fn compact_op_norm(inst: &FisherInstance, iters: usize) -> f64 {
    Pdhcg {
        inst,
        search: SearchConfig::default(),
        power_iters: iters,
    }
    .op_norm()
}

pub fn solve_fisher_pdhcg(inst: &FisherInstance, cfg: &SolverConfig) -> Result<SolveReport> {
    solve_fisher_pdhcg_from(inst, cfg, None)
}

/// As [`solve_fisher_pdhcg`], optionally starting from a given `(x, p)`.
pub fn solve_fisher_pdhcg_from(
    inst: &FisherInstance,
    cfg: &SolverConfig,
    warm: Option<(&[f64], &[f64])>,
) -> Result<SolveReport> {
    let work = driver::prepare(inst, cfg)?;
    let (x, p) = match warm {
        Some((x, p)) => (x.to_vec(), p.to_vec()),
        None => initial_point(&work),
    };
    if x.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition("warm start has negative allocations".into()));
    }
    let start = CompactPoint::new(&work, x, p)?;
    let method = Pdhcg {
        inst: &work,
        search: cfg.search,
        power_iters: cfg.power_iters,
    };
    let outcome = driver::run(&method, start, cfg)?;
    let mut solution = method.solution(&outcome.point);
    solution.normalized = cfg.normalize;
    Ok(driver::report(
        Solver::Pdhcg,
        inst,
        &work,
        cfg,
        outcome,
        solution,
    ))
}
