//! Restarted PDHG on the lifted saddle problem
//!
//! ```text
//! min_{x ≥ 0, t} max_{p, y}  -Σ_i w_i log t_i + pᵀ(Σ_i x_i - 1) + Σ_i y_i (t_i - u_iᵀx_i)
//! ```
//!
//! Every update is closed form: a gradient step on the duals, a scalar
//! quadratic for each `t_i`, and a projected gradient step on `x`.

use rayon::prelude::*;

use crate::driver::{self, Method, StepStats};
use crate::error::{Error, Result};
use crate::instance::FisherInstance;
use crate::kkt::{residuals_lifted, Residuals};
use crate::pdhcg::{dist_sq, initial_point, mix};
use crate::report::{Solution, SolveReport, Solver, SolverConfig};
use crate::sparse::{power_norm_estimate, split_rows, PAR_THRESHOLD};

/// Lifted iterate with cached column sums `Σ_i x_ij` and utilities `u_iᵀx_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub col_sums: Vec<f64>,
    pub row_util: Vec<f64>,
}

impl LiftedPoint {
    pub fn new(
        inst: &FisherInstance,
        x: Vec<f64>,
        t: Vec<f64>,
        p: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let u = &inst.utilities;
        if x.len() != u.nnz() || p.len() != u.n_cols() || t.len() != u.n_rows() || y.len() != u.n_rows()
        {
            return Err(Error::Structural("point does not match instance".into()));
        }
        let mut z = Self {
            x,
            t,
            p,
            y,
            col_sums: vec![0.0; u.n_cols()],
            row_util: vec![0.0; u.n_rows()],
        };
        refresh(inst, &mut z);
        Ok(z)
    }

    /// Standard start: the feasible compact start with `t = Ux`, `y = w/t`.
    pub fn initial(inst: &FisherInstance) -> Result<Self> {
        let (x, p) = initial_point(inst);
        let (t, y) = crate::kkt::derived_ty(inst, &x)?;
        Self::new(inst, x, t, p, y)
    }
}

fn refresh(inst: &FisherInstance, z: &mut LiftedPoint) {
    let u = &inst.utilities;
    u.column_sums_into(&z.x, &mut z.col_sums);
    for (i, s) in z.row_util.iter_mut().enumerate() {
        let r = u.row_range(i);
        *s = u.values()[r.clone()]
            .iter()
            .zip(&z.x[r])
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// Extrapolated dual ascent on `p` and `y`, written to `p_out` and `y_out`.
pub fn dual_step(
    cur: &LiftedPoint,
    prev: &LiftedPoint,
    sigma: f64,
    p_out: &mut [f64],
    y_out: &mut [f64],
) {
    for j in 0..cur.p.len() {
        p_out[j] = cur.p[j] + sigma * (2.0 * cur.col_sums[j] - prev.col_sums[j] - 1.0);
    }
    for i in 0..cur.y.len() {
        let t_bar = 2.0 * cur.t[i] - prev.t[i];
        let ux_bar = 2.0 * cur.row_util[i] - prev.row_util[i];
        y_out[i] = cur.y[i] + sigma * (t_bar - ux_bar);
    }
}

/// Minimizer of `-w log t + y t + (t - t_k)²/(2τ)`, always positive.
pub fn primal_step_t(t_k: f64, y: f64, tau: f64, w: f64) -> f64 {
    let b = tau * y - t_k;
    let disc = (b * b + 4.0 * tau * w).sqrt();
    if b > 0.0 {
        2.0 * tau * w / (b + disc)
    } else {
        0.5 * (disc - b)
    }
}

/// Projected gradient step for one allocation entry.
pub fn primal_step_x(x_k: f64, tau: f64, p_j: f64, u_ij: f64, y_i: f64) -> f64 {
    (x_k - tau * (p_j - u_ij * y_i)).max(0.0)
}

pub(crate) struct Pdhg<'a> {
    pub inst: &'a FisherInstance,
    pub power_iters: usize,
}

/// Norm of `(x, t) ↦ (Σ_i x_i, t - Ux)` on the instance's pattern.
pub fn lifted_op_norm(inst: &FisherInstance, iters: usize) -> f64 {
    let u = &inst.utilities;
    let nnz = u.nnz();
    let mut cols = vec![0.0; u.n_cols()];
    let mut resid = vec![0.0; u.n_rows()];
    power_norm_estimate(nnz + u.n_rows(), iters, |v, out| {
        let (vx, vt) = v.split_at(nnz);
        u.column_sums_into(vx, &mut cols);
        for i in 0..u.n_rows() {
            let r = u.row_range(i);
            let ux: f64 = u.values()[r.clone()].iter().zip(&vx[r]).map(|(a, b)| a * b).sum();
            resid[i] = vt[i] - ux;
        }
        let (ox, ot) = out.split_at_mut(nnz);
        for i in 0..u.n_rows() {
            for k in u.row_range(i) {
                ox[k] = cols[u.col_indices()[k]] - u.values()[k] * resid[i];
            }
        }
        ot.copy_from_slice(&resid);
    })
}

impl Method for Pdhg<'_> {
    type Point = LiftedPoint;

    fn op_norm(&self) -> f64 {
        lifted_op_norm(self.inst, self.power_iters)
    }


    fn step(
        &self,
        cur: &LiftedPoint,
        prev: &LiftedPoint,
        tau: f64,
        sigma: f64,
        out: &mut LiftedPoint,
    ) -> Result<StepStats> {
        let u = &self.inst.utilities;
        let w = &self.inst.budgets;
        dual_step(cur, prev, sigma, &mut out.p, &mut out.y);
        for i in 0..cur.t.len() {
            out.t[i] = primal_step_t(cur.t[i], out.y[i], tau, w[i]);
        }
        let p_new = &out.p;
        let y_new = &out.y;
        let row = |i: usize, xs: &mut [f64]| -> f64 {
            let r = u.row_range(i);
            let mut s = 0.0;
            for (o, k) in xs.iter_mut().zip(r) {
                let v = primal_step_x(cur.x[k], tau, p_new[u.col_indices()[k]], u.values()[k], y_new[i]);
                *o = v;
                s += u.values()[k] * v;
            }
            s
        };
        let rows = split_rows(u, &mut out.x);
        if u.nnz() >= PAR_THRESHOLD {
            rows.into_par_iter()
                .zip(out.row_util.par_iter_mut())
                .enumerate()
                .with_min_len(16)
                .for_each(|(i, (xs, s))| *s = row(i, xs));
        } else {
            for (i, (xs, s)) in rows.into_iter().zip(out.row_util.iter_mut()).enumerate() {
                *s = row(i, xs);
            }
        }
        u.column_sums_into(&out.x, &mut out.col_sums);

        let mut interaction = 0.0;
        for j in 0..out.p.len() {
            interaction += (out.p[j] - cur.p[j]) * (out.col_sums[j] - cur.col_sums[j]);
        }
        for i in 0..out.y.len() {
            let dt = out.t[i] - cur.t[i];
            let du = out.row_util[i] - cur.row_util[i];
            interaction += (out.y[i] - cur.y[i]) * (dt - du);
        }
        Ok(StepStats {
            primal_sq: dist_sq(&out.x, &cur.x) + dist_sq(&out.t, &cur.t),
            dual_sq: dist_sq(&out.p, &cur.p) + dist_sq(&out.y, &cur.y),
            interaction,
            passes: 0,
        })
    }

    fn residuals(&self, z: &LiftedPoint) -> Result<Residuals> {
        residuals_lifted(self.inst, &z.x, &z.t, &z.p, &z.y)
    }

    fn distances(&self, a: &LiftedPoint, b: &LiftedPoint) -> (f64, f64) {
        (
            (dist_sq(&a.x, &b.x) + dist_sq(&a.t, &b.t)).sqrt(),
            (dist_sq(&a.p, &b.p) + dist_sq(&a.y, &b.y)).sqrt(),
        )
    }

    fn accumulate(&self, avg: &mut LiftedPoint, z: &LiftedPoint, k: usize) {
        let a = k as f64 / (k as f64 + 1.0);
        let b = 1.0 / (k as f64 + 1.0);
        mix(&mut avg.x, &z.x, a, b);
        mix(&mut avg.t, &z.t, a, b);
        mix(&mut avg.p, &z.p, a, b);
        mix(&mut avg.y, &z.y, a, b);
        mix(&mut avg.col_sums, &z.col_sums, a, b);
        mix(&mut avg.row_util, &z.row_util, a, b);
    }

    fn refresh(&self, z: &mut LiftedPoint) {
        refresh(self.inst, z);
    }

    fn is_finite(&self, z: &LiftedPoint) -> bool {
        z.x.iter()
            .chain(&z.t)
            .chain(&z.p)
            .chain(&z.y)
            .all(|v| v.is_finite())
    }

    fn solution(&self, z: &LiftedPoint) -> Solution {
        Solution {
            normalized: false,
            x: z.x.clone(),
            p: z.p.clone(),
            t: Some(z.t.clone()),
            y: Some(z.y.clone()),
        }
    }
}

/// Runs `k ≥ 1` inner iterations with fixed step sizes from `start`,
/// calling `observe` on every iterate. Returns `(last, average)`.
pub fn inner_loop(
    inst: &FisherInstance,
    start: &LiftedPoint,
    tau: f64,
    sigma: f64,
    k: usize,
    observe: &mut dyn FnMut(&LiftedPoint),
) -> Result<(LiftedPoint, LiftedPoint)> {
    if k == 0 {
        return Err(Error::Config("inner loop needs at least one iteration".into()));
    }
    let m = Pdhg {
        inst,
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

pub fn solve_fisher_pdhg(inst: &FisherInstance, cfg: &SolverConfig) -> Result<SolveReport> {
    let work = driver::prepare(inst, cfg)?;
    let start = LiftedPoint::initial(&work)?;
    let method = Pdhg {
        inst: &work,
        power_iters: cfg.power_iters,
    };
    let outcome = driver::run(&method, start, cfg)?;
    let mut solution = method.solution(&outcome.point);
    solution.normalized = cfg.normalize;
    Ok(driver::report(Solver::Pdhg, inst, &work, cfg, outcome, solution))
}
