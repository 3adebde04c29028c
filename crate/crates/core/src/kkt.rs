//! Termination residuals and the scaled-KKT / smoothed-gap diagnostics.
//!
//! All `x` arguments are aligned with the stored entries of the utility
//! matrix; off-pattern allocations are identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::FisherInstance;
use crate::pdhcg::search::{row_objective, solve_row_subproblem, RowProblem, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    pub r_primal: f64,
    pub r_dual: f64,
    pub r_gap: f64,
    pub rel_kkt: f64,
}

impl Residuals {
    fn new(r_primal: f64, r_dual: f64, r_gap: f64) -> Self {
        Self {
            r_primal,
            r_dual,
            r_gap,
            rel_kkt: r_primal.max(r_dual).max(r_gap),
        }
    }
}

fn check_lengths(inst: &FisherInstance, x: &[f64], p: &[f64]) -> Result<()> {
    let u = &inst.utilities;
    if x.len() != u.nnz() || p.len() != u.n_cols() {
        return Err(Error::Structural(format!(
            "state has {} allocations and {} prices, instance has {} entries and {} goods",
            x.len(),
            p.len(),
            u.nnz(),
            u.n_cols()
        )));
    }
    Ok(())
}

/// `u_iᵀx_i` for every buyer.
pub fn row_utilities(inst: &FisherInstance, x: &[f64]) -> Vec<f64> {
    let u = &inst.utilities;
    (0..u.n_rows())
        .map(|i| {
            let r = u.row_range(i);
            u.values()[r.clone()]
                .iter()
                .zip(&x[r])
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

/// Relative primal residual, dual residual and gap on the lifted variables.
pub fn residuals_lifted(
    inst: &FisherInstance,
    x: &[f64],
    t: &[f64],
    p: &[f64],
    y: &[f64],
) -> Result<Residuals> {
    check_lengths(inst, x, p)?;
    let u = &inst.utilities;
    let n = u.n_rows();
    if t.len() != n || y.len() != n {
        return Err(Error::Structural("t and y must have one entry per buyer".into()));
    }
    if let Some(i) = t.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!("t[{i}] = {} is not positive", t[i])));
    }
    let w = &inst.budgets;

    let col_sums = u.column_sums(x)?;
    let ux = row_utilities(inst, x);
    let t_err = t
        .iter()
        .zip(&ux)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    let feas = col_sums.iter().fold(0.0f64, |acc, &c| acc.max((c - 1.0).abs()));
    let col_max = col_sums.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
    let r_primal = feas.max(t_err) / (1.0 + col_max.max(t_err).max(1.0));

    let mut wt_err = 0.0f64;
    let mut wt_max = 0.0f64;
    let mut y_max = 0.0f64;
    for i in 0..n {
        let wt = w[i] / t[i];
        wt_err = wt_err.max((wt - y[i]).abs());
        wt_max = wt_max.max(wt.abs());
        y_max = y_max.max(y[i].abs());
    }
    // max_i u_ij y_i over the stored entries of each column
    let mut col_bid = vec![f64::NEG_INFINITY; u.n_cols()];
    let mut x_max = 0.0f64;
    for i in 0..n {
        let r = u.row_range(i);
        for k in r {
            let j = u.col_indices()[k];
            col_bid[j] = col_bid[j].max(u.values()[k] * y[i]);
            x_max = x_max.max(x[k].abs());
        }
    }
    let mut slack_neg = 0.0f64;
    let mut slack_max = 0.0f64;
    for j in 0..u.n_cols() {
        let d = p[j] - col_bid[j];
        slack_neg = slack_neg.max((-d).max(0.0));
        slack_max = slack_max.max(d);
    }
    let r_dual = wt_err.max(slack_neg) / (1.0 + wt_max.max(y_max).max(slack_max));

    let mut gap = 0.0f64;
    let mut pos_max = 0.0f64;
    for i in 0..n {
        for k in u.row_range(i) {
            let j = u.col_indices()[k];
            let d = (p[j] - u.values()[k] * y[i]).max(0.0);
            gap = gap.max(x[k] * d);
            pos_max = pos_max.max(d);
        }
    }
    let r_gap = gap / (1.0 + x_max.max(pos_max));

    Ok(Residuals::new(r_primal, r_dual, r_gap))
}

/// Residuals of an `(x, p)` state with `t = Ux` and `y = w / t`.
pub fn residuals_compact(inst: &FisherInstance, x: &[f64], p: &[f64]) -> Result<Residuals> {
    check_lengths(inst, x, p)?;
    let (t, y) = derived_ty(inst, x)?;
    residuals_lifted(inst, x, &t, p, &y)
}

/// `t = Ux` and `y = w / t`, failing if some buyer gets zero utility.
pub fn derived_ty(inst: &FisherInstance, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = row_utilities(inst, x);
    if let Some(i) = t.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!(
            "buyer {i} has zero utility value"
        )));
    }
    let y = t.iter().zip(&inst.budgets).map(|(t, w)| w / t).collect();
    Ok((t, y))
}

/// Euclidean norm of the scaled KKT residual vector of the lifted problem.
pub fn scaled_kkt_residual(
    inst: &FisherInstance,
    x: &[f64],
    t: &[f64],
    p: &[f64],
    y: &[f64],
    xi: f64,
) -> Result<f64> {
    check_lengths(inst, x, p)?;
    if !(xi > 0.0) {
        return Err(Error::Precondition("xi must be positive".into()));
    }
    let u = &inst.utilities;
    let w = &inst.budgets;
    let mut acc = 0.0;
    for i in 0..u.n_rows() {
        let d = t[i] * y[i] - w[i];
        acc += d * d;
        let mut ux = 0.0;
        for k in u.row_range(i) {
            let j = u.col_indices()[k];
            let s = p[j] - u.values()[k] * y[i];
            let c2 = x[k] - (x[k] - s / xi).max(0.0);
            let c3 = s.min(0.0);
            acc += c2 * c2 + c3 * c3;
            ux += u.values()[k] * x[k];
        }
        let d = t[i] - ux;
        acc += d * d;
    }
    for c in u.column_sums(x)? {
        acc += (c - 1.0) * (c - 1.0);
    }
    Ok(acc.sqrt())
}

/// Scaled KKT residual of the compact problem, with dual slack
/// `p_j - u_ij w_i / (u_iᵀx_i)`.
pub fn scaled_kkt_residual_compact(
    inst: &FisherInstance,
    x: &[f64],
    p: &[f64],
    xi: f64,
) -> Result<f64> {
    check_lengths(inst, x, p)?;
    if !(xi > 0.0) {
        return Err(Error::Precondition("xi must be positive".into()));
    }
    let u = &inst.utilities;
    let (t, _) = derived_ty(inst, x)?;
    let mut acc = 0.0;
    for i in 0..u.n_rows() {
        let bang = inst.budgets[i] / t[i];
        for k in u.row_range(i) {
            let s = p[u.col_indices()[k]] - u.values()[k] * bang;
            let c2 = x[k] - (x[k] - s / xi).max(0.0);
            let c3 = s.min(0.0);
            acc += c2 * c2 + c3 * c3;
        }
    }
    for c in u.column_sums(x)? {
        acc += (c - 1.0) * (c - 1.0);
    }
    Ok(acc.sqrt())
}

/// Eisenberg–Gale objective in minimization form, `-Σ w_i log(u_iᵀx_i)`;
/// infinite if some buyer gets nothing.
pub fn eg_objective(inst: &FisherInstance, x: &[f64]) -> f64 {
    row_utilities(inst, x)
        .iter()
        .zip(&inst.budgets)
        .map(|(&t, &w)| if t > 0.0 { -w * t.ln() } else { f64::INFINITY })
        .sum()
}

/// Smoothed duality gap of `(x, p)` centered at `(cx, cp)`:
/// the maximum over `(x̂ ≥ 0, p̂)` of
/// `L(x, p̂) - L(x̂, p) - (ξ/2)‖(x̂, p̂) - (cx, cp)‖²`
/// with `L(x, p) = -Σ w_i log(u_iᵀx_i) + pᵀ(Σ_i x_i - 1)`.
///
/// The `p̂` part is a closed-form quadratic and the `x̂` part splits into
/// one exactly solved row subproblem per buyer.
pub fn smoothed_gap(
    inst: &FisherInstance,
    x: &[f64],
    p: &[f64],
    cx: &[f64],
    cp: &[f64],
    xi: f64,
) -> Result<f64> {
    check_lengths(inst, x, p)?;
    check_lengths(inst, cx, cp)?;
    if !(xi > 0.0) {
        return Err(Error::Precondition("xi must be positive".into()));
    }
    let u = &inst.utilities;
    let residual: Vec<f64> = u.column_sums(x)?.into_iter().map(|c| c - 1.0).collect();
    let upper = eg_objective(inst, x)
        + cp.iter().zip(&residual).map(|(a, b)| a * b).sum::<f64>()
        + residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * xi);

    let cfg = SearchConfig {
        tol: 1e-14,
        max_passes: 400,
        ..Default::default()
    };
    let mut lower = -p.iter().sum::<f64>();
    let mut scratch = Vec::new();
    for i in 0..u.n_rows() {
        let r = u.row_range(i);
        let prob = RowProblem {
            row: u.row(i),
            x_prev: &cx[r],
            prices: p,
            tau: 1.0 / xi,
            budget: inst.budgets[i],
        };
        let mut out = vec![0.0; prob.row.len()];
        solve_row_subproblem(&prob, &cfg, &mut out, &mut scratch).map_err(|e| match e {
            Error::SubproblemStalled {
                passes,
                lower,
                upper,
                ..
            } => Error::SubproblemStalled {
                row: i,
                passes,
                lower,
                upper,
            },
            e => e,
        })?;
        lower += row_objective(&prob, &out);
    }
    Ok(upper - lower)
}
