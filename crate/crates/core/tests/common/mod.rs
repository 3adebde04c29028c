#![allow(dead_code)]

pub mod theory;

use market_eq::instance::generate_fisher;
use market_eq::{FisherInstance, GeneratorConfig};

pub fn fisher(n: usize, m: usize, q: f64, seed: u64) -> FisherInstance {
    generate_fisher(&GeneratorConfig::fisher(n, m, q, seed)).unwrap()
}

/// Dense copy of the utility pattern, `None` off the pattern.
pub fn dense_pattern(inst: &FisherInstance) -> Vec<Vec<Option<f64>>> {
    let mut d = vec![vec![None; inst.n_goods()]; inst.n_buyers()];
    for (i, j, v) in inst.utilities.iter() {
        d[i][j] = Some(v);
    }
    d
}

/// Relative residuals `[primal, dual, gap, kkt]`, written directly from the
/// displayed criteria on a dense layout. `x` is aligned with the stored
/// entries in row-major order.
pub fn reference_residuals(inst: &FisherInstance, x: &[f64], t: &[f64], p: &[f64], y: &[f64]) -> [f64; 4] {
    let u = dense_pattern(inst);
    let (n, m) = (inst.n_buyers(), inst.n_goods());
    let w = &inst.budgets;
    let mut xd = vec![vec![0.0; m]; n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..m {
            if u[i][j].is_some() {
                xd[i][j] = x[k];
                k += 1;
            }
        }
    }

    let colsum: Vec<f64> = (0..m).map(|j| (0..n).map(|i| xd[i][j]).sum()).collect();
    let ux: Vec<f64> = (0..n)
        .map(|i| (0..m).map(|j| u[i][j].unwrap_or(0.0) * xd[i][j]).sum())
        .collect();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let infeas: Vec<f64> = colsum.iter().map(|c| c - 1.0).collect();
    let t_gap = (0..n).map(|i| (t[i] - ux[i]).abs()).fold(0.0f64, f64::max);
    let primal = inf(&infeas).max(t_gap) / (1.0 + inf(&colsum).max(t_gap).max(1.0));

    let wt: Vec<f64> = (0..n).map(|i| w[i] / t[i]).collect();
    let wt_y: Vec<f64> = (0..n).map(|i| wt[i] - y[i]).collect();
    let slack: Vec<f64> = (0..m)
        .map(|j| {
            let best = (0..n)
                .filter_map(|i| u[i][j].map(|v| v * y[i]))
                .fold(f64::NEG_INFINITY, f64::max);
            p[j] - best
        })
        .collect();
    let neg = slack.iter().map(|s| (-s).max(0.0)).fold(0.0f64, f64::max);
    let slack_max = slack.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let dual = inf(&wt_y).max(neg) / (1.0 + inf(&wt).max(inf(y)).max(slack_max));

    let mut num = 0.0f64;
    let mut pos = 0.0f64;
    let mut xmax = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            if let Some(v) = u[i][j] {
                let d = (p[j] - v * y[i]).max(0.0);
                num = num.max(xd[i][j] * d);
                pos = pos.max(d);
                xmax = xmax.max(xd[i][j].abs());
            }
        }
    }
    let gap = num / (1.0 + xmax.max(pos));
    [primal, dual, gap, primal.max(dual).max(gap)]
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
        / scale
}
