use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use market_eq::adaptive::StepMode;
use market_eq::instance::io::{is_exchange_dir, load_exchange, load_fisher, save_exchange, save_fisher, Format};
use market_eq::instance::{generate_exchange, generate_fisher};
use market_eq::kkt::{residuals_compact, residuals_lifted};
use market_eq::report::{RestartScheme, Solution};
use market_eq::{
    solve_exchange, solve_fisher_pdhcg, solve_fisher_pdhg, Error, ExchangeConfig, ExchangeStatus, FisherInstance,
    GeneratorConfig, SolveReport, SolverConfig, Status,
};
use serde::Serialize;

mod bench;

const EXIT_USAGE: i32 = 1;
const EXIT_NOT_OPTIMAL: i32 = 2;
const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "market-eq", version, about = "Fisher and Arrow-Debreu market equilibrium solvers")]
struct Cli {
    /// Cap on solver worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a random Fisher or exchange instance to a directory.
    Generate(GenerateArgs),
    /// Solve a Fisher instance and write a JSON report.
    Solve(SolveArgs),
    /// Recompute residuals of a solution file.
    Check(CheckArgs),
    /// Run a benchmark suite and write a CSV table.
    Bench(BenchArgs),
    /// Solve an exchange instance by fixed-point iteration on budgets.
    Exchange(ExchangeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    m: usize,
    /// Probability that a utility entry is nonzero.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Generate an exchange instance with this endowment density.
    #[arg(long)]
    sparsity_e: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = FormatArg::Mtx)]
    format: FormatArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Mtx,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mtx => Format::MatrixMarket,
            FormatArg::Csv => Format::CsvTriplets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
enum Algo {
    Pdhg,
    Pdhcg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StepArg {
    Theory,
    Adaptive,
    FixedEta,
}

/// Solver flags shared by `solve`, `bench` and `exchange`.
#[derive(Debug, Clone, Args)]
struct SolverFlags {
    /// JSON solver configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// `adaptive` or `fixed:K`.
    #[arg(long)]
    restart: Option<String>,
    /// Sections per row-search pass.
    #[arg(long)]
    sections: Option<usize>,
    #[arg(long, value_enum)]
    step: Option<StepArg>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Instance directory.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Pdhcg)]
    algo: Algo,
    #[command(flatten)]
    solver: SolverFlags,
    /// Report path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the final iterate here.
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// JSON suite file.
    #[arg(long)]
    suite: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// CSV table path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one JSON report per run.
    #[arg(long)]
    reports: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExchangeArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    outer_tol: f64,
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
    #[command(flatten)]
    solver: SolverFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

impl SolverFlags {
    pub(crate) fn config(&self) -> CliResult<SolverConfig> {
        let cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::from(e).context(path))?;
                serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
            }
            None => SolverConfig::default(),
        };
        self.apply(cfg)
    }

    /// Overrides fields of `cfg` with the flags that were given.
    fn apply(&self, mut cfg: SolverConfig) -> CliResult<SolverConfig> {
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(k) = self.max_iters {
            cfg.max_iters = k;
        }
        if let Some(r) = &self.restart {
            cfg.restart = RestartScheme::parse(r)
                .ok_or_else(|| Failure::usage(format!("bad --restart {r:?}; expected adaptive or fixed:K")))?;
        }
        if let Some(k) = self.sections {
            cfg.search.sections = k;
        }
        if let Some(s) = self.step {
            cfg.step = match s {
                StepArg::Theory => StepMode::Theory,
                StepArg::Adaptive => StepMode::Adaptive,
                StepArg::FixedEta => StepMode::FixedEta,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Failure {
    fn context(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| Failure::from(e).context(path)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn load_fisher_dir(dir: &Path) -> CliResult<FisherInstance> {
    if is_exchange_dir(dir) {
        return Err(Failure::usage(format!("{} holds an exchange instance", dir.display())));
    }
    Ok(load_fisher(dir, None)?)
}

pub(crate) fn solve_with(algo: Algo, inst: &FisherInstance, cfg: &SolverConfig) -> CliResult<SolveReport> {
    Ok(match algo {
        Algo::Pdhg => solve_fisher_pdhg(inst, cfg)?,
        Algo::Pdhcg => solve_fisher_pdhcg(inst, cfg)?,
    })
}

fn status_code(status: Status) -> i32 {
    if status == Status::Optimal {
        0
    } else {
        EXIT_NOT_OPTIMAL
    }
}

fn cmd_generate(a: &GenerateArgs) -> CliResult<i32> {
    let cfg = GeneratorConfig {
        n: a.n,
        m: a.m,
        sparsity_u: a.q,
        sparsity_e: a.sparsity_e.unwrap_or(1.0),
        seed: a.seed,
    };
    if a.sparsity_e.is_some() {
        save_exchange(&generate_exchange(&cfg)?, &a.out, a.format.into())?;
    } else {
        save_fisher(&generate_fisher(&cfg)?, &a.out, a.format.into())?;
    }
    log::info!("wrote instance to {}", a.out.display());
    Ok(0)
}

fn cmd_solve(a: &SolveArgs) -> CliResult<i32> {
    let cfg = a.solver.config()?;
    let inst = load_fisher_dir(&a.instance)?;
    let report = solve_with(a.algo, &inst, &cfg)?;
    if let Some(path) = &a.solution {
        write_json(&report.solution, Some(path))?;
    }
    write_json(&report, a.out.as_deref())?;
    eprintln!(
        "{}: {:?} after {} iterations, relative KKT error {:.3e}",
        report.solver.name(),
        report.status,
        report.inner_iterations,
        report.final_residuals.rel_kkt
    );
    Ok(status_code(report.status))
}

fn cmd_check(a: &CheckArgs) -> CliResult<i32> {
    let inst = load_fisher_dir(&a.instance)?;
    let text = fs::read_to_string(&a.solution).map_err(|e| Failure::from(e).context(&a.solution))?;
    let sol: Solution = serde_json::from_str(&text)
        .map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", a.solution.display()),
        })?;
    // residuals are evaluated where the solver worked
    let work = if sol.normalized {
        inst.normalize()?.instance
    } else {
        inst
    };
    let r = match (&sol.t, &sol.y) {
        (Some(t), Some(y)) => residuals_lifted(&work, &sol.x, t, &sol.p, y)?,
        _ => residuals_compact(&work, &sol.x, &sol.p)?,
    };
    write_json(&r, a.out.as_deref())?;
    Ok(0)
}

fn cmd_exchange(a: &ExchangeArgs) -> CliResult<i32> {
    let inner = a.solver.config()?;
    let cfg = ExchangeConfig {
        outer_tol: a.outer_tol,
        max_outer: a.max_outer,
        inner,
        ..Default::default()
    };
    let inst = load_exchange(&a.instance, None)?;
    let trace = solve_exchange(&inst, &cfg)?;
    write_json(&trace, a.out.as_deref())?;
    eprintln!(
        "exchange: {:?} after {} outer iterations, last budget gap {:.3e}",
        trace.status,
        trace.outer_iterations,
        trace.budget_gaps.last().copied().unwrap_or(f64::NAN)
    );
    Ok(match trace.status {
        ExchangeStatus::Converged => 0,
        _ => EXIT_NOT_OPTIMAL,
    })
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MARKET_EQ_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> CliResult<i32> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Check(a) => cmd_check(a),
        Command::Bench(a) => bench::cmd_bench(a),
        Command::Exchange(a) => cmd_exchange(a),
    }
}

fn main() {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => process::exit(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            process::exit(f.code);
        }
    }
}
