//! `bench`: runs every (instance, solver, seed) of a suite file and writes
//! one CSV row per run plus a geometric-mean row per (instance, solver).

use std::fmt::Write as _;
use std::fs;

use market_eq::instance::generate_fisher;
use market_eq::{GeneratorConfig, SolverConfig, Status};
use serde::Deserialize;

use crate::{solve_with, write_json, Algo, BenchArgs, CliResult, Failure, EXIT_NOT_OPTIMAL};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Suite {
    /// Base solver configuration; command-line flags override it.
    #[serde(default)]
    pub config: Option<SolverConfig>,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Entry {
    pub n: usize,
    pub m: usize,
    pub q: f64,
    pub solvers: Vec<Algo>,
    pub seeds: Vec<u64>,
}

pub(crate) const HEADER: &str = "n,m,q,solver,seed,status,iterations,restarts,wall_time_seconds,rel_kkt";

pub(crate) fn geomean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

fn load_suite(a: &BenchArgs) -> CliResult<Suite> {
    let text = fs::read_to_string(&a.suite).map_err(|e| Failure::from(e).context(&a.suite))?;
    let suite: Suite =
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", a.suite.display())))?;
    if suite.entries.is_empty() {
        return Err(Failure::usage("suite has no entries"));
    }
    for e in &suite.entries {
        if e.seeds.is_empty() || e.solvers.is_empty() {
            return Err(Failure::usage("every suite entry needs at least one seed and one solver"));
        }
    }
    Ok(suite)
}

pub(crate) fn cmd_bench(a: &BenchArgs) -> CliResult<i32> {
    let suite = load_suite(a)?;
    let base = match (&a.solver.config, &suite.config) {
        (None, Some(c)) => a.solver.apply(c.clone())?,
        _ => a.solver.config()?,
    };
    if let Some(dir) = &a.reports {
        fs::create_dir_all(dir).map_err(|e| Failure::from(e).context(dir))?;
    }

    let mut csv = String::from(HEADER);
    csv.push('\n');
    let mut all_optimal = true;
    for e in &suite.entries {
        for &algo in &e.solvers {
            let name = algo_name(algo);
            let mut iters = Vec::new();
            let mut times = Vec::new();
            for &seed in &e.seeds {
                let inst = generate_fisher(&GeneratorConfig {
                    n: e.n,
                    m: e.m,
                    sparsity_u: e.q,
                    sparsity_e: 1.0,
                    seed,
                })?;
                let report = solve_with(algo, &inst, &base)?;
                log::info!("{name} n={} m={} seed={seed}: {:?}", e.n, e.m, report.status);
                all_optimal &= report.status == Status::Optimal;
                let _ = writeln!(
                    csv,
                    "{},{},{},{name},{seed},{},{},{},{:e},{:e}",
                    e.n,
                    e.m,
                    e.q,
                    status_name(report.status),
                    report.inner_iterations,
                    report.restarts,
                    report.wall_time_seconds,
                    report.final_residuals.rel_kkt
                );
                iters.push(report.inner_iterations as f64);
                times.push(report.wall_time_seconds.max(f64::MIN_POSITIVE));
                if let Some(dir) = &a.reports {
                    let path = dir.join(format!("{name}_n{}_m{}_seed{seed}.json", e.n, e.m));
                    write_json(&report, Some(&path))?;
                }
            }
            let _ = writeln!(
                csv,
                "{},{},{},{name},geomean,,{:e},,{:e},",
                e.n,
                e.m,
                e.q,
                geomean(&iters),
                geomean(&times)
            );
        }
    }

    match &a.out {
        Some(path) => fs::write(path, csv).map_err(|e| Failure::from(e).context(path))?,
        None => print!("{csv}"),
    }
    Ok(if all_optimal { 0 } else { EXIT_NOT_OPTIMAL })
}

fn algo_name(a: Algo) -> &'static str {
    match a {
        Algo::Pdhg => "pdhg",
        Algo::Pdhcg => "pdhcg",
    }
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Optimal => "optimal",
        Status::MaxIters => "max-iters",
        Status::Diverging => "diverging",
    }
}
