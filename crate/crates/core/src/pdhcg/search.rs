//! Exact solve of the per-buyer proximal subproblem
//!
//! ```text
//! min_{x ≥ 0}  -w log(uᵀx) + pᵀx + ‖x - x_prev‖² / (2τ)
//! ```
//!
//! For a trial utility level `s > 0` the minimizer in `x` is
//! `x_j(s) = max(0, x_prev_j - τ p_j + τ w u_j / s)`, and the solution is the
//! unique root of `φ(s) = s - uᵀx(s)`, which is increasing in `s`. Any trial
//! `s` together with `s̃ = uᵀx(s)` brackets the root, so a k-section search
//! keeps the tightest of those brackets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::RowView;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Number of sections per pass; each pass evaluates `sections - 1`
    /// interior candidates. 2 is plain bisection.
    pub sections: usize,
    /// Bracket width at which the search stops, relative to the upper end
    /// of the bracket when that is below 1 and absolute otherwise.
    pub tol: f64,
    pub max_passes: usize,
    /// After each pass, also try the closed-form root on the active set at
    /// the bracket midpoint and stop if it zeroes `φ`.
    pub active_set_finish: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            sections: 32,
            tol: 1e-10,
            max_passes: 200,
            active_set_finish: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sections < 2 {
            return Err(Error::Config("at least 2 sections are required".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("subproblem tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Data of one row subproblem. `x_prev` and `row` are aligned with the
/// row's stored entries; `prices` is the dense price vector.
#[derive(Debug, Clone, Copy)]
pub struct RowProblem<'a> {
    pub row: RowView<'a>,
    pub x_prev: &'a [f64],
    pub prices: &'a [f64],
    pub tau: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSolution {
    /// Utility level at which the returned row was evaluated.
    pub s: f64,
    /// `uᵀx` of the returned row.
    pub s_tilde: f64,
    pub passes: usize,
    pub lower: f64,
    pub upper: f64,
}

impl RowSolution {
    pub fn phi(&self) -> f64 {
        self.s - self.s_tilde
    }
}

/// Candidate row and its utility level for a trial `s`.
pub fn row_candidate(prob: &RowProblem<'_>, s: f64) -> (Vec<f64>, f64) {
    let shift = prob.tau * prob.budget / s;
    let x: Vec<f64> = prob
        .row
        .col_indices
        .iter()
        .zip(prob.row.values)
        .zip(prob.x_prev)
        .map(|((&j, &u), &xp)| (xp - prob.tau * prob.prices[j] + shift * u).max(0.0))
        .collect();
    let s_tilde = x.iter().zip(prob.row.values).map(|(a, u)| a * u).sum();
    (x, s_tilde)
}

/// Row objective `-w log(uᵀx) + pᵀx + ‖x - x_prev‖²/(2τ)`.
pub fn row_objective(prob: &RowProblem<'_>, x: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut lin = 0.0;
    let mut prox = 0.0;
    for (k, (&j, &u)) in prob.row.col_indices.iter().zip(prob.row.values).enumerate() {
        s += u * x[k];
        lin += prob.prices[j] * x[k];
        let d = x[k] - prob.x_prev[k];
        prox += d * d;
    }
    -prob.budget * s.ln() + lin + prox / (2.0 * prob.tau)
}

struct Shifted<'a> {
    a: &'a [f64],
    u: &'a [f64],
    tw: f64,
}

impl Shifted<'_> {
    #[inline]
    fn s_tilde(&self, s: f64) -> f64 {
        let c = self.tw / s;
        let mut acc = 0.0;
        for (&a, &u) in self.a.iter().zip(self.u) {
            acc += u * (a + c * u).max(0.0);
        }
        acc
    }

    /// Root of `s = A + B/s` where `A`, `B` come from the entries active at
    /// `s_ref`. Exact whenever the active set does not change.
    fn active_set_root(&self, s_ref: f64) -> Option<f64> {
        let c = self.tw / s_ref;
        let (mut lin, mut wsum) = (0.0, 0.0);
        for (&a, &u) in self.a.iter().zip(self.u) {
            if a + c * u > 0.0 {
                lin += u * a;
                wsum += u * u;
            }
        }
        let b = self.tw * wsum;
        if b <= 0.0 {
            return None;
        }
        let disc = (lin * lin + 4.0 * b).sqrt();
        let r = if lin >= 0.0 {
            0.5 * (lin + disc)
        } else {
            2.0 * b / (disc - lin)
        };
        (r > 0.0 && r.is_finite()).then_some(r)
    }

    /// Positive lower bound on the root: for any stored `j`,
    /// `s* ≥ u_j (τ w u_j / s* - τ p_j)` because `x_prev ≥ 0`.
    fn lower_bound(&self, tau_p: impl Iterator<Item = f64>) -> f64 {
        let mut best: f64 = 0.0;
        for (&u, tp) in self.u.iter().zip(tau_p) {
            let b = u * tp;
            let c = u * u * self.tw;
            let disc = (b * b + 4.0 * c).sqrt();
            let r = if b > 0.0 { 2.0 * c / (b + disc) } else { 0.5 * (disc - b) };
            best = best.max(r);
        }
        best
    }
}

/// Solves one row subproblem by k-section search, writing the row into `out`.
///
/// `scratch` is reused between calls to avoid allocation.
pub fn solve_row_subproblem(
    prob: &RowProblem<'_>,
    cfg: &SearchConfig,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<RowSolution> {
    solve_row_traced(prob, cfg, out, scratch, &mut |_, _| {})
}

/// As [`solve_row_subproblem`], reporting the bracket after every pass.
pub fn solve_row_traced(
    prob: &RowProblem<'_>,
    cfg: &SearchConfig,
    out: &mut [f64],
    scratch: &mut Vec<f64>,
    observe: &mut dyn FnMut(f64, f64),
) -> Result<RowSolution> {
    let n = prob.row.len();
    debug_assert_eq!(prob.x_prev.len(), n);
    debug_assert_eq!(out.len(), n);
    scratch.clear();
    scratch.extend(
        prob.row
            .col_indices
            .iter()
            .zip(prob.x_prev)
            .map(|(&j, &xp)| xp - prob.tau * prob.prices[j]),
    );
    let f = Shifted {
        a: scratch,
        u: prob.row.values,
        tw: prob.tau * prob.budget,
    };

    let finish = |s: f64, passes: usize, lower: f64, upper: f64, out: &mut [f64]| {
        let c = f.tw / s;
        let mut st = 0.0;
        for k in 0..n {
            let v = (f.a[k] + c * f.u[k]).max(0.0);
            out[k] = v;
            st += f.u[k] * v;
        }
        RowSolution {
            s,
            s_tilde: st,
            passes,
            lower,
            upper,
        }
    };

    let s_lo = f.lower_bound(
        prob.row
            .col_indices
            .iter()
            .map(|&j| prob.tau * prob.prices[j]),
    );
    // Opening bracket from the previous iterate's utility level, or from the
    // analytic lower bound when that level is zero.
    let s0 = {
        let s: f64 = prob.x_prev.iter().zip(prob.row.values).map(|(x, u)| x * u).sum();
        if s > 0.0 {
            s
        } else {
            s_lo
        }
    };
    if !(s0 > 0.0) {
        return Err(Error::Precondition(
            "row has no positive utility entry".into(),
        ));
    }
    let st0 = f.s_tilde(s0);
    if st0 == s0 {
        return Ok(finish(s0, 0, s0, s0, out));
    }
    let mut lower = s0.min(st0).max(s_lo);
    let mut upper = s0.max(st0);
    observe(lower, upper);

    let k = cfg.sections;
    // Tiny budgets give tiny roots; an absolute width would then leave the
    // allocation undetermined.
    let scale = upper.min(1.0);
    let width_tol = cfg.tol * scale;
    let exact_tol = 1e-3 * width_tol;
    // The previous iterate's active set is usually still right, in which
    // case its closed-form root is exact and no pass is needed.
    if cfg.active_set_finish {
        if let Some(r) = f.active_set_root(s0) {
            if r >= lower && r <= upper {
                let st = f.s_tilde(r);
                if (st - r).abs() <= exact_tol {
                    return Ok(finish(r, 0, lower, upper, out));
                }
                upper = upper.min(r.max(st));
                lower = lower.max(r.min(st));
            }
        }
    }
    let mut passes = 0;
    while upper - lower > width_tol {
        if passes >= cfg.max_passes {
            return Err(Error::SubproblemStalled {
                row: usize::MAX,
                passes,
                lower,
                upper,
            });
        }
        passes += 1;
        let (l0, u0) = (lower, upper);
        let width = u0 - l0;
        for l in 1..k {
            let t = l as f64 / k as f64;
            let s = (1.0 - t) * l0 + t * u0;
            let st = f.s_tilde(s);
            if st == s {
                observe(s, s);
                return Ok(finish(s, passes, s, s, out));
            }
            upper = upper.min(s.max(st));
            lower = lower.max(s.min(st));
        }
        if cfg.active_set_finish {
            if let Some(r) = f.active_set_root(0.5 * (lower + upper)) {
                if r >= lower && r <= upper {
                    let st = f.s_tilde(r);
                    if (st - r).abs() <= exact_tol {
                        observe(lower, upper);
                        return Ok(finish(r, passes, lower, upper, out));
                    }
                    upper = upper.min(r.max(st));
                    lower = lower.max(r.min(st));
                }
            }
        }
        observe(lower, upper);
        // Rounding can stall the grid once the bracket is a few ulps wide.
        if upper - lower >= width && width <= 4.0 * f64::EPSILON * upper {
            break;
        }
    }

    let mid = 0.5 * (lower + upper);
    let mut s = mid;
    if cfg.active_set_finish {
        if let Some(r) = f.active_set_root(mid) {
            if r >= lower && r <= upper && (f.s_tilde(r) - r).abs() <= (f.s_tilde(mid) - mid).abs()
            {
                s = r;
            }
        }
    }
    Ok(finish(s, passes, lower, upper, out))
}
