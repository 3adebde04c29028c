//! Ground truth for small Fisher markets, kept independent of the solvers.
//!
//! Structured markets have closed-form equilibria. Random tiny markets are
//! solved by projected gradient ascent on the Eisenberg–Gale objective with
//! a per-good simplex projection, and prices are recovered from
//! stationarity as `p_j = max_i u_ij w_i / (u_iᵀx_i)`. That recovery makes
//! prices dual feasible by construction, so the optimality certificate is
//! the duality gap `Σp - Σw ≥ 0` together with complementary slackness.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::instance::FisherInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticKind {
    /// One good shared by every buyer.
    SingleGood,
    /// Dense market where every utility equals the same constant.
    UniformUtility,
    SingleBuyer,
}

impl FromStr for AnalyticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single-good" => Ok(Self::SingleGood),
            "uniform-utility" => Ok(Self::UniformUtility),
            "single-buyer" => Ok(Self::SingleBuyer),
            other => Err(Error::Config(format!("unsupported analytic market kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Allocation aligned with the utility matrix entries.
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    /// `(Σp - Σw) / Σw` at the returned point.
    pub rel_gap: f64,
    /// `max_ij x_ij (p_j - u_ij w_i / t_i) / p_j`.
    pub complementarity: f64,
}

/// Closed-form equilibrium of a structured market. Fails when `inst` does
/// not have the structure `kind` describes.
pub fn analytic_equilibrium(inst: &FisherInstance, kind: AnalyticKind) -> Result<(Vec<f64>, Vec<f64>)> {
    inst.ensure_valid()?;
    let u = &inst.utilities;
    let w = &inst.budgets;
    let total: f64 = w.iter().sum();
    let (n, m) = (inst.n_buyers(), inst.n_goods());
    let mismatch = |what: &str| Err(Error::Precondition(format!("instance is not {what}")));
    match kind {
        AnalyticKind::SingleGood => {
            if m != 1 {
                return mismatch("a single-good market");
            }
            let x = (0..n).map(|i| w[i] / total).collect();
            Ok((x, vec![total]))
        }
        AnalyticKind::UniformUtility => {
            let c = u.values()[0];
            if u.nnz() != n * m || u.values().iter().any(|&v| v != c) {
                return mismatch("a dense market with constant utilities");
            }
            let x = (0..n)
                .flat_map(|i| std::iter::repeat(w[i] / total).take(m))
                .collect();
            Ok((x, vec![total / m as f64; m]))
        }
        AnalyticKind::SingleBuyer => {
            if n != 1 {
                return mismatch("a single-buyer market");
            }
            let row = u.row(0);
            let t: f64 = row.values.iter().sum();
            let mut p = vec![0.0; m];
            for (&j, &v) in row.col_indices.iter().zip(row.values) {
                p[j] = w[0] * v / t;
            }
            Ok((vec![1.0; u.nnz()], p))
        }
    }
}

/// Largest problem [`brute_force_fisher`] accepts.
pub const BRUTE_FORCE_MAX_NNZ: usize = 12;

/// Projected-gradient oracle for tiny markets (at most
/// [`BRUTE_FORCE_MAX_NNZ`] utility entries).
pub fn brute_force_fisher(inst: &FisherInstance, tol: f64) -> Result<OracleSolution> {
    if inst.utilities.nnz() > BRUTE_FORCE_MAX_NNZ {
        return Err(Error::Precondition(format!(
            "brute-force oracle takes at most {BRUTE_FORCE_MAX_NNZ} entries, got {}",
            inst.utilities.nnz()
        )));
    }
    reference_fisher(inst, tol, 200_000)
}

/// Same method as [`brute_force_fisher`] without the size cap, for the
/// moderate instances of the property suite.
pub fn reference_fisher(inst: &FisherInstance, tol: f64, max_iters: usize) -> Result<OracleSolution> {
    inst.ensure_valid()?;
    let u = &inst.utilities;
    let w = &inst.budgets;
    let total: f64 = w.iter().sum();
    let rows = u.entry_rows();
    let cols = u.col_indices();
    let vals = u.values();
    let nnz = u.nnz();
    let n = inst.n_buyers();

    // entries of each column, for the projection
    let mut by_col: Vec<Vec<usize>> = vec![Vec::new(); inst.n_goods()];
    for (k, &j) in cols.iter().enumerate() {
        by_col[j].push(k);
    }

    let utilities = |x: &[f64]| {
        let mut t = vec![0.0; n];
        for k in 0..nnz {
            t[rows[k]] += vals[k] * x[k];
        }
        t
    };
    let objective = |t: &[f64]| -> f64 {
        if t.iter().any(|&v| !(v > 0.0)) {
            return f64::NEG_INFINITY;
        }
        t.iter().zip(w).map(|(ti, wi)| wi * ti.ln()).sum()
    };
    let gradient = |t: &[f64]| -> Vec<f64> { (0..nnz).map(|k| w[rows[k]] * vals[k] / t[rows[k]]).collect() };
    let project = |v: &mut [f64]| {
        for entries in &by_col {
            let mut col: Vec<f64> = entries.iter().map(|&k| v[k]).collect();
            project_simplex(&mut col);
            for (&k, c) in entries.iter().zip(col) {
                v[k] = c;
            }
        }
    };

    let mut x: Vec<f64> = (0..nnz).map(|k| 1.0 / by_col[cols[k]].len() as f64).collect();
    let mut t = utilities(&x);
    let mut f = objective(&t);
    let mut g = gradient(&t);
    let mut alpha = 1.0 / total.max(1e-300);
    let mut best_score = f64::INFINITY;
    let mut stalled = 0;

    for it in 0..max_iters {
        // Armijo backtracking along the projection arc
        let mut trial;
        loop {
            trial = x.iter().zip(&g).map(|(a, b)| a + alpha * b).collect::<Vec<_>>();
            project(&mut trial);
            let t_new = utilities(&trial);
            let f_new = objective(&t_new);
            let lin: f64 = (0..nnz).map(|k| g[k] * (trial[k] - x[k])).sum();
            // slack of a few ulps so that rounding in f cannot stall the search
            let slack = 8.0 * f64::EPSILON * f.abs().max(1.0);
            if f_new >= f + 1e-4 * lin - slack || alpha < 1e-300 {
                break;
            }
            alpha *= 0.5;
        }
        let t_new = utilities(&trial);
        let g_new = gradient(&t_new);
        // Barzilai–Borwein guess for the next step
        let (mut ss, mut sy) = (0.0, 0.0);
        for k in 0..nnz {
            let s = trial[k] - x[k];
            ss += s * s;
            sy += s * (g[k] - g_new[k]);
        }
        let moved = ss.sqrt();
        x = trial;
        t = t_new;
        f = objective(&t);
        g = g_new;
        alpha = if sy > 0.0 { ss / sy } else { alpha * 2.0 };

        if it % 50 == 49 || moved == 0.0 {
            let sol = certify(inst, &x, &t, &by_col, it + 1);
            // fixed-point residual of the projected gradient map at unit step
            let mut probe: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a + b * total.recip()).collect();
            project(&mut probe);
            let fixed = probe.iter().zip(&x).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            if sol.rel_gap < tol && sol.complementarity < tol && fixed < 1e-14 {
                return Ok(sol);
            }
            let score = fixed.max(sol.rel_gap).max(sol.complementarity);
            if score < best_score * 0.999 {
                best_score = score;
                stalled = 0;
            } else {
                stalled += 1;
            }
            // no progress left in double precision
            if stalled >= 400 {
                if sol.rel_gap < tol && sol.complementarity < tol {
                    return Ok(sol);
                }
                break;
            }
        }
    }
    let sol = certify(inst, &x, &t, &by_col, max_iters);
    if sol.rel_gap < tol && sol.complementarity < tol {
        return Ok(sol);
    }
    Err(Error::OracleUnavailable(format!(
        "projected gradient stopped with relative gap {:.3e}, complementarity {:.3e}",
        sol.rel_gap, sol.complementarity
    )))
}

fn certify(inst: &FisherInstance, x: &[f64], t: &[f64], by_col: &[Vec<usize>], iterations: usize) -> OracleSolution {
    let u = &inst.utilities;
    let w = &inst.budgets;
    let rows = u.entry_rows();
    let vals = u.values();
    let total: f64 = w.iter().sum();
    let bang = |k: usize| w[rows[k]] * vals[k] / t[rows[k]];
    let p: Vec<f64> = by_col
        .iter()
        .map(|entries| entries.iter().map(|&k| bang(k)).fold(0.0, f64::max))
        .collect();
    let mut comp = 0.0f64;
    for (j, entries) in by_col.iter().enumerate() {
        for &k in entries {
            comp = comp.max(x[k] * (p[j] - bang(k)) / p[j]);
        }
    }
    OracleSolution {
        x: x.to_vec(),
        rel_gap: (p.iter().sum::<f64>() - total) / total,
        p,
        iterations,
        complementarity: comp,
    }
}

/// Euclidean projection onto `{v ≥ 0, Σv = 1}`.
fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cum += s;
        let cand = (cum - 1.0) / (k + 1) as f64;
        if s - cand > 0.0 {
            theta = cand;
        }
    }
    for e in v.iter_mut() {
        *e = (*e - theta).max(0.0);
    }
}
