//! Property battery for the restarted primal-dual methods: iterate
//! boundedness, the averaged-iterate distance bound, smoothed-gap checks,
//! cross-solver price agreement, exchange decay and relabeling symmetry.
//! Every check reports a measured margin.

use std::fmt;

use market_eq::instance::generate_exchange;
use market_eq::kkt::{row_utilities, smoothed_gap};
use market_eq::oracle::reference_fisher;
use market_eq::pdhcg::{compact_op_norm, initial_point, inner_loop_compact, search::SearchConfig, CompactPoint};
use market_eq::pdhg::{inner_loop, lifted_op_norm, LiftedPoint};
use market_eq::{
    solve_exchange, solve_fisher_pdhcg, solve_fisher_pdhg, ExchangeConfig, FisherInstance, GeneratorConfig,
    SolverConfig, SparseMatrix, Status,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Passed; the margin is how far the measurement is from its bound.
    Pass(f64),
    Fail(String),
    Skipped(String),
}

impl Outcome {
    pub fn failed(&self) -> bool {
        matches!(self, Outcome::Fail(_))
    }
}

#[derive(Debug, Clone)]
pub struct Line {
    pub family: &'static str,
    pub size: String,
    pub outcome: Outcome,
}

impl fmt::Display for Line {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.outcome {
            Outcome::Pass(m) => write!(f, "PASS {} [{}] margin {m:.3e}", self.family, self.size),
            Outcome::Fail(d) => write!(f, "FAIL {} [{}] {d}", self.family, self.size),
            Outcome::Skipped(r) => write!(f, "SKIP {} [{}] {r}", self.family, self.size),
        }
    }
}

/// High-precision saddle point in both parameterizations.
pub struct Star {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn star(inst: &FisherInstance) -> Result<Star, String> {
    let o = reference_fisher(inst, 1e-11, 2_000_000).map_err(|e| e.to_string())?;
    let t = row_utilities(inst, &o.x);
    let y = inst.budgets.iter().zip(&t).map(|(w, t)| w / t).collect();
    Ok(Star { x: o.x, p: o.p, t, y })
}

pub fn suite_instance(n: usize, m: usize, seed: u64) -> FisherInstance {
    let q = match n * m {
        0..=6 => 1.0,
        7..=15 => 0.7,
        _ => 0.3,
    };
    super::fisher(n, m, q, seed)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Relative slack allowed for the oracle's own error.
const SLACK: f64 = 1e-9;

/// Iterates of one inner loop stay inside the ball
/// `‖x-x*‖²/2τ + ‖p-p*‖²/2σ ≤ (same at start) / (1 - στL²)`.
pub fn boundedness_compact(inst: &FisherInstance, s: &Star, tau: f64, sigma: f64, steps: usize) -> Outcome {
    let l = compact_op_norm(inst, 500);
    let st = sigma * tau * l * l;
    if st >= 1.0 {
        return Outcome::Skipped(format!("στL² = {st:.3} ≥ 1"));
    }
    let (x0, p0) = initial_point(inst);
    let energy = |x: &[f64], p: &[f64]| sq(x, &s.x) / (2.0 * tau) + sq(p, &s.p) / (2.0 * sigma);
    let bound = energy(&x0, &p0) / (1.0 - st);
    let start = CompactPoint::new(inst, x0, p0).unwrap();
    let mut worst = 0.0f64;
    let res = inner_loop_compact(inst, &start, tau, sigma, steps, &SearchConfig::default(), &mut |z| {
        worst = worst.max(energy(&z.x, &z.p) / bound);
    });
    if let Err(e) = res {
        return Outcome::Fail(e.to_string());
    }
    if worst <= 1.0 + SLACK {
        Outcome::Pass(1.0 - worst)
    } else {
        Outcome::Fail(format!("energy reached {worst:.6} of the bound"))
    }
}

/// Same ball for the lifted iterates `(x, t)` and `(p, y)`.
pub fn boundedness_lifted(inst: &FisherInstance, s: &Star, tau: f64, sigma: f64, steps: usize) -> Outcome {
    let l = lifted_op_norm(inst, 500);
    let st = sigma * tau * l * l;
    if st >= 1.0 {
        return Outcome::Skipped(format!("στL² = {st:.3} ≥ 1"));
    }
    let z0 = LiftedPoint::initial(inst).unwrap();
    let energy = |z: &LiftedPoint| {
        (sq(&z.x, &s.x) + sq(&z.t, &s.t)) / (2.0 * tau) + (sq(&z.p, &s.p) + sq(&z.y, &s.y)) / (2.0 * sigma)
    };
    let bound = energy(&z0) / (1.0 - st);
    let mut worst = 0.0f64;
    if let Err(e) = inner_loop(inst, &z0, tau, sigma, steps, &mut |z| {
        worst = worst.max(energy(z) / bound);
    }) {
        return Outcome::Fail(e.to_string());
    }
    if worst <= 1.0 + SLACK {
        Outcome::Pass(1.0 - worst)
    } else {
        Outcome::Fail(format!("energy reached {worst:.6} of the bound"))
    }
}

pub struct RestartTrace {
    /// Worst `‖z̄ - z*‖ / (2‖z⁰ - z*‖)` over restarts.
    pub worst_ratio: f64,
    /// Fraction of consecutive restart points whose distance did not grow.
    pub monotone_fraction: f64,
    /// Geometric mean of the per-restart distance ratio.
    pub contraction: f64,
}

/// Restarted PDHCG with theory steps `τ = σ = 1/(2L)` and a fixed inner
/// length, restarting to the average each time.
pub fn restart_trace(inst: &FisherInstance, s: &Star, restarts: usize) -> Result<RestartTrace, String> {
    let l = compact_op_norm(inst, 500);
    let step = 0.5 / l;
    // K ≥ 4L/ξ with ξ = 1
    let k = ((4.0 * l).ceil() as usize).max(16);
    let (x0, p0) = initial_point(inst);
    let mut z = CompactPoint::new(inst, x0, p0).unwrap();
    let dist = |z: &CompactPoint| (sq(&z.x, &s.x) + sq(&z.p, &s.p)).sqrt();
    let mut worst = 0.0f64;
    let mut dists = vec![dist(&z)];
    for _ in 0..restarts {
        let (_, avg) = inner_loop_compact(inst, &z, step, step, k, &SearchConfig::default(), &mut |_| {})
            .map_err(|e| e.to_string())?;
        let d0 = dist(&z);
        let d1 = dist(&avg);
        if d0 > 1e-12 {
            worst = worst.max(d1 / (2.0 * d0));
        }
        dists.push(d1);
        z = avg;
    }
    let pairs = dists.windows(2).filter(|w| w[0] > 1e-10).count().max(1);
    let mono = dists
        .windows(2)
        .filter(|w| w[0] > 1e-10 && w[1] <= w[0] * (1.0 + 1e-12))
        .count();
    let contraction = (dists[dists.len() - 1] / dists[0]).powf(1.0 / restarts as f64);
    Ok(RestartTrace {
        worst_ratio: worst,
        monotone_fraction: mono as f64 / pairs as f64,
        contraction,
    })
}

fn random_state(s: &Star, rng: &mut ChaCha8Rng, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let x = s
        .x
        .iter()
        .map(|v| (v + spread * (rng.gen::<f64>() - 0.5)).max(0.0) + 1e-3 * rng.gen::<f64>())
        .collect();
    let p = s.p.iter().map(|v| v + spread * (rng.gen::<f64>() - 0.5)).collect();
    (x, p)
}

/// `G_ξ(z; z*) ≥ 0` on random states, `G_ξ(z*; z*) ≈ 0`, and the smallest
/// observed `G_ξ / dist²` (an empirical growth constant).
pub fn gap_at_saddle_center(inst: &FisherInstance, s: &Star, xi: f64, samples: usize, seed: u64) -> (Outcome, f64) {
    let at_center = match smoothed_gap(inst, &s.x, &s.p, &s.x, &s.p, xi) {
        Ok(g) => g,
        Err(e) => return (Outcome::Fail(e.to_string()), 0.0),
    };
    if at_center.abs() > 1e-8 {
        return (Outcome::Fail(format!("G at the saddle itself is {at_center:.3e}")), 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_g = f64::INFINITY;
    let mut alpha = f64::INFINITY;
    for _ in 0..samples {
        let (x, p) = random_state(s, &mut rng, 1.0);
        let g = match smoothed_gap(inst, &x, &p, &s.x, &s.p, xi) {
            Ok(g) => g,
            Err(e) => return (Outcome::Fail(e.to_string()), 0.0),
        };
        min_g = min_g.min(g);
        let d2 = sq(&x, &s.x) + sq(&p, &s.p);
        alpha = alpha.min(g / d2);
    }
    let outcome = if min_g >= -1e-10 && alpha > 0.0 {
        Outcome::Pass(min_g)
    } else {
        Outcome::Fail(format!("smallest gap {min_g:.3e}, growth constant {alpha:.3e}"))
    };
    (outcome, alpha)
}

/// Maximizes a concave function over a box by repeated grid refinement.
fn zoom_max(lo: Vec<f64>, hi: Vec<f64>, floor: f64, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    const PTS: usize = 41;
    let d = lo.len();
    let (mut lo, mut hi) = (lo, hi);
    let mut best = f64::NEG_INFINITY;
    let mut arg = lo.clone();
    for _ in 0..60 {
        let steps: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (PTS - 1) as f64).collect();
        let mut idx = vec![0usize; d];
        let mut point = vec![0.0; d];
        loop {
            for k in 0..d {
                point[k] = lo[k] + steps[k] * idx[k] as f64;
            }
            let v = f(&point);
            if v > best {
                best = v;
                arg.clone_from(&point);
            }
            // odometer over the grid
            let mut k = 0;
            while k < d {
                idx[k] += 1;
                if idx[k] < PTS {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        if steps.iter().all(|&s| s < 1e-13) {
            break;
        }
        for k in 0..d {
            lo[k] = (arg[k] - 2.0 * steps[k]).max(floor);
            hi[k] = arg[k] + 2.0 * steps[k];
        }
    }
    best
}

/// `G_ξ` by brute-force grid search. The maximand is a sum of independent
/// terms in each `p̂_j` and in each buyer's row of `x̂`, so each block is
/// searched on its own grid.
pub fn grid_smoothed_gap(inst: &FisherInstance, x: &[f64], p: &[f64], cx: &[f64], cp: &[f64], xi: f64) -> f64 {
    let u = &inst.utilities;
    let w = &inst.budgets;
    let t = row_utilities(inst, x);
    let f_x: f64 = t.iter().zip(w).map(|(t, w)| -w * t.ln()).sum();
    let r = u.column_sums(x).unwrap();
    let mut total = f_x;
    // L(x, p̂) part: p̂ᵀ(Σx - 1) - ξ/2 (p̂ - cp)²
    for j in 0..inst.n_goods() {
        let rj = r[j] - 1.0;
        let half = 2.0 * rj.abs() / xi + 1.0;
        total += zoom_max(vec![cp[j] - half], vec![cp[j] + half], f64::NEG_INFINITY, &|v| {
            v[0] * rj - 0.5 * xi * (v[0] - cp[j]).powi(2)
        });
    }
    // -L(x̂, p) part: Σp plus per-row w log(uᵀx̂) - pᵀx̂ - ξ/2‖x̂ - cx‖²
    total += p.iter().sum::<f64>();
    for i in 0..inst.n_buyers() {
        let rr = u.row_range(i);
        let row = u.row(i);
        let c = &cx[rr];
        let hi: Vec<f64> = c.iter().map(|v| v.abs() + w[i] / xi + 2.0).collect();
        total += zoom_max(vec![0.0; c.len()], hi, 0.0, &|v| {
            let s: f64 = v.iter().zip(row.values).map(|(a, b)| a * b).sum();
            if s <= 0.0 {
                return f64::NEG_INFINITY;
            }
            let lin: f64 = v.iter().zip(row.col_indices).map(|(a, &j)| a * p[j]).sum();
            w[i] * s.ln() - lin - 0.5 * xi * v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        });
    }
    total
}

pub fn gap_grid_agreement(inst: &FisherInstance, s: &Star, xi: f64, samples: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let (x, p) = random_state(s, &mut rng, 0.8);
        let (cx, cp) = random_state(s, &mut rng, 0.8);
        let g = match smoothed_gap(inst, &x, &p, &cx, &cp, xi) {
            Ok(g) => g,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        let grid = grid_smoothed_gap(inst, &x, &p, &cx, &cp, xi);
        worst = worst.max((g - grid).abs());
    }
    if worst <= 1e-4 {
        Outcome::Pass(1e-4 - worst)
    } else {
        Outcome::Fail(format!("grid and exact gap differ by {worst:.3e}"))
    }
}

/// Both solvers at a tight tolerance reach the oracle prices.
pub fn price_agreement(inst: &FisherInstance, s: &Star) -> Outcome {
    let cfg = SolverConfig {
        tol: 1e-9,
        max_iters: 400_000,
        ..Default::default()
    };
    let a = solve_fisher_pdhcg(inst, &cfg);
    let b = solve_fisher_pdhg(inst, &cfg);
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e.to_string()),
    };
    if a.status != Status::Optimal || b.status != Status::Optimal {
        return Outcome::Fail(format!("statuses {:?} / {:?}", a.status, b.status));
    }
    let d = super::max_rel_diff(&a.prices, &s.p)
        .max(super::max_rel_diff(&b.prices, &s.p))
        .max(super::max_rel_diff(&a.prices, &b.prices));
    if d <= 1e-5 {
        Outcome::Pass(1e-5 - d)
    } else {
        Outcome::Fail(format!("prices differ by {d:.3e} relative"))
    }
}

/// Budget gaps of the exchange iteration shrink from one outer step to the
/// next on at least 90% of the steps after the second.
pub fn exchange_decay(seed: u64) -> Outcome {
    let inst = generate_exchange(&GeneratorConfig {
        n: 100,
        m: 40,
        sparsity_u: 0.2,
        sparsity_e: 0.5,
        seed,
    })
    .unwrap();
    let cfg = ExchangeConfig {
        outer_tol: 1e-9,
        inner_tol_start: 1e-10,
        verify_tol: None,
        inner: SolverConfig {
            max_iters: 400_000,
            ..Default::default()
        },
        ..Default::default()
    };
    let trace = match solve_exchange(&inst, &cfg) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let gaps = &trace.budget_gaps;
    if gaps.len() < 4 {
        return Outcome::Skipped(format!("only {} outer iterations", gaps.len()));
    }
    let ratios: Vec<f64> = gaps[2..].windows(2).map(|w| w[1] / w[0]).collect();
    let shrinking = ratios.iter().filter(|&&r| r < 1.0).count() as f64 / ratios.len() as f64;
    if shrinking >= 0.9 {
        Outcome::Pass(shrinking - 0.9)
    } else {
        Outcome::Fail(format!("gap shrank on {:.0}% of steps, ratios {ratios:?}", 100.0 * shrinking))
    }
}

/// Relabels buyers by `rows` and goods by `cols`: new buyer `r` is old buyer
/// `rows[r]`, new good `c` is old good `cols[c]`.
pub fn permute(inst: &FisherInstance, rows: &[usize], cols: &[usize]) -> FisherInstance {
    let mut inv_col = vec![0; cols.len()];
    for (new, &old) in cols.iter().enumerate() {
        inv_col[old] = new;
    }
    let mut inv_row = vec![0; rows.len()];
    for (new, &old) in rows.iter().enumerate() {
        inv_row[old] = new;
    }
    let trip: Vec<_> = inst.utilities.iter().map(|(i, j, v)| (inv_row[i], inv_col[j], v)).collect();
    let u = SparseMatrix::from_triplets(inst.n_buyers(), inst.n_goods(), trip).unwrap();
    let w = rows.iter().map(|&r| inst.budgets[r]).collect();
    FisherInstance::new(u, w).unwrap()
}

/// Residual trajectories of the original and a relabeled instance agree,
/// and the final prices map onto each other.
pub fn permutation_symmetry(inst: &FisherInstance, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..inst.n_buyers()).collect();
    let mut cols: Vec<usize> = (0..inst.n_goods()).collect();
    rand::seq::SliceRandom::shuffle(rows.as_mut_slice(), &mut rng);
    rand::seq::SliceRandom::shuffle(cols.as_mut_slice(), &mut rng);
    let other = permute(inst, &rows, &cols);
    let cfg = SolverConfig {
        tol: 1e-6,
        ..Default::default()
    };
    let a = solve_fisher_pdhcg(inst, &cfg).unwrap();
    let b = solve_fisher_pdhcg(&other, &cfg).unwrap();
    if a.residual_history.len() != b.residual_history.len() {
        return Outcome::Fail(format!(
            "history lengths {} vs {}",
            a.residual_history.len(),
            b.residual_history.len()
        ));
    }
    let mut worst = 0.0f64;
    for (h, g) in a.residual_history.iter().zip(&b.residual_history) {
        if h.iteration != g.iteration {
            return Outcome::Fail("check iterations differ".into());
        }
        worst = worst.max((h.rel_kkt - g.rel_kkt).abs() / h.rel_kkt.max(1e-300));
    }
    let mapped: Vec<f64> = cols.iter().map(|&old| a.prices[old]).collect();
    worst = worst.max(super::max_rel_diff(&b.prices, &mapped));
    if worst <= 1e-6 {
        Outcome::Pass(1e-6 - worst)
    } else {
        Outcome::Fail(format!("trajectories differ by {worst:.3e} relative"))
    }
}

/// Runs every family on one instance of each size.
pub fn run_property_suite(seed: u64, sizes: &[(usize, usize)]) -> Vec<Line> {
    let mut lines = Vec::new();
    for &(n, m) in sizes {
        let size = format!("{n}x{m}");
        let inst = suite_instance(n, m, seed);
        let mut push = |family: &'static str, outcome: Outcome| {
            lines.push(Line {
                family,
                size: size.clone(),
                outcome,
            })
        };
        let s = match star(&inst) {
            Ok(s) => s,
            Err(e) => {
                for f in ["boundedness", "restart-distance", "gap-at-saddle", "price-agreement"] {
                    push(f, Outcome::Skipped(format!("oracle unavailable: {e}")));
                }
                continue;
            }
        };
        let lc = compact_op_norm(&inst, 500);
        let ll = lifted_op_norm(&inst, 500);
        let a = boundedness_compact(&inst, &s, 0.5 / lc, 0.5 / lc, 10_000);
        let b = boundedness_lifted(&inst, &s, 0.5 / ll, 0.5 / ll, 10_000);
        push("boundedness", worst_of(a, b));
        push(
            "restart-distance",
            match restart_trace(&inst, &s, 20) {
                Ok(r) if r.worst_ratio <= 1.0 + SLACK => Outcome::Pass(1.0 - r.worst_ratio),
                Ok(r) => Outcome::Fail(format!("‖z̄-z*‖ reached {:.4}×2‖z⁰-z*‖", r.worst_ratio)),
                Err(e) => Outcome::Fail(e),
            },
        );
        push("gap-at-saddle", gap_at_saddle_center(&inst, &s, 1.0, 100, seed).0);
        if n * m <= 6 {
            push("gap-grid-oracle", gap_grid_agreement(&inst, &s, 1.0, 5, seed));
        }
        push("price-agreement", price_agreement(&inst, &s));
        push("permutation", permutation_symmetry(&inst, seed));
    }
    lines.push(Line {
        family: "exchange-decay",
        size: "100x40".into(),
        outcome: exchange_decay(seed),
    });
    lines
}

fn worst_of(a: Outcome, b: Outcome) -> Outcome {
    match (a, b) {
        (f @ Outcome::Fail(_), _) | (_, f @ Outcome::Fail(_)) => f,
        (s @ Outcome::Skipped(_), _) | (_, s @ Outcome::Skipped(_)) => s,
        (Outcome::Pass(x), Outcome::Pass(y)) => Outcome::Pass(x.min(y)),
    }
}
