//! Matrix-free primal-dual solvers for linear Fisher markets and a
//! fixed-point outer loop for Arrow–Debreu exchange markets.
//!
//! [`pdhg`] runs restarted PDHG on the lifted Eisenberg–Gale saddle problem;
//! [`pdhcg`] runs the conjugate variant that solves each buyer's primal
//! subproblem exactly. Both report relative KKT residuals from [`kkt`].

pub mod adaptive;
mod driver;
pub mod error;
pub mod exchange;
pub mod instance;
pub mod kkt;
pub mod oracle;
pub mod pdhcg;
pub mod pdhg;
pub mod report;
pub mod sparse;

pub use error::{Error, Result};
pub use exchange::{solve_exchange, ExchangeConfig, ExchangeStatus, FixedPointTrace};
pub use instance::{ExchangeInstance, FisherInstance, GeneratorConfig};
pub use kkt::Residuals;
pub use pdhcg::solve_fisher_pdhcg;
pub use pdhg::solve_fisher_pdhg;
pub use report::{SolveReport, Solver, SolverConfig, Status};
pub use sparse::SparseMatrix;
