//! Market data: Fisher and exchange instances, validation, preprocessing and
//! synthetic generators.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub mod io;

/// Tolerance on endowment column sums.
pub const ENDOWMENT_SUM_TOL: f64 = 1e-12;

/// One reason an instance cannot be solved as posed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    BuyerWithoutGoods { buyer: usize },
    GoodUnvalued { good: usize },
    NonpositiveBudget { buyer: usize, value: f64 },
    DimensionMismatch { expected: usize, found: usize, what: String },
    EndowmentColumnSum { good: usize, sum: f64 },
    NegativeEntry { row: usize, col: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BuyerWithoutGoods { buyer } => {
                write!(f, "buyer {buyer} values no good")
            }
            Violation::GoodUnvalued { good } => write!(f, "good {good} unvalued"),
            Violation::NonpositiveBudget { buyer, value } => {
                write!(f, "nonpositive budget {value} for buyer {buyer}")
            }
            Violation::DimensionMismatch {
                expected,
                found,
                what,
            } => write!(f, "{what}: expected {expected}, found {found}"),
            Violation::EndowmentColumnSum { good, sum } => {
                write!(f, "endowments of good {good} sum to {sum}, not 1")
            }
            Violation::NegativeEntry { row, col, value } => {
                write!(f, "negative entry {value} at ({row}, {col})")
            }
        }
    }
}

fn pattern_violations(u: &SparseMatrix) -> Vec<Violation> {
    let mut out = Vec::new();
    for i in 0..u.n_rows() {
        if u.row_nnz(i) == 0 {
            out.push(Violation::BuyerWithoutGoods { buyer: i });
        }
    }
    for j in 0..u.n_cols() {
        if u.col_nnz(j) == 0 {
            out.push(Violation::GoodUnvalued { good: j });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FisherInstance {
    pub utilities: SparseMatrix,
    pub budgets: Vec<f64>,
}

/// A normalized instance together with the per-buyer factors that were
/// divided out of each utility row.
#[derive(Debug, Clone)]
pub struct Normalized {
    pub instance: FisherInstance,
    pub row_scales: Vec<f64>,
}

impl FisherInstance {
    pub fn new(utilities: SparseMatrix, budgets: Vec<f64>) -> Result<Self> {
        if utilities.n_rows() != budgets.len() {
            return Err(Error::Structural(format!(
                "utility matrix has {} rows but {} budgets were given",
                utilities.n_rows(),
                budgets.len()
            )));
        }
        Ok(Self { utilities, budgets })
    }

    pub fn n_buyers(&self) -> usize {
        self.utilities.n_rows()
    }

    pub fn n_goods(&self) -> usize {
        self.utilities.n_cols()
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    /// Every violated solvability condition; empty means solvable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.budgets.len() != self.n_buyers() {
            out.push(Violation::DimensionMismatch {
                expected: self.n_buyers(),
                found: self.budgets.len(),
                what: "budget vector length".into(),
            });
        }
        out.extend(pattern_violations(&self.utilities));
        for (i, &w) in self.budgets.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                out.push(Violation::NonpositiveBudget { buyer: i, value: w });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Scales each utility row so its largest entry is 1. Equilibrium
    /// allocations and prices are unchanged by this.
    pub fn normalize(&self) -> Result<Normalized> {
        self.ensure_valid()?;
        let u = &self.utilities;
        let mut row_scales = Vec::with_capacity(u.n_rows());
        let mut values = u.values().to_vec();
        for i in 0..u.n_rows() {
            let r = u.row_range(i);
            let max = values[r.clone()].iter().cloned().fold(0.0, f64::max);
            for v in &mut values[r] {
                *v /= max;
            }
            row_scales.push(max);
        }
        Ok(Normalized {
            instance: FisherInstance {
                utilities: u.with_values(values),
                budgets: self.budgets.clone(),
            },
            row_scales,
        })
    }

    /// Copy with a different budget vector.
    pub fn with_budgets(&self, budgets: Vec<f64>) -> Result<Self> {
        Self::new(self.utilities.clone(), budgets)
    }

    /// Hex SHA-256 over dimensions, pattern, and bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        hash_matrix(&mut h, &self.utilities);
        for w in &self.budgets {
            h.update(w.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn hash_matrix(h: &mut Sha256, m: &SparseMatrix) {
    h.update((m.n_rows() as u64).to_le_bytes());
    h.update((m.n_cols() as u64).to_le_bytes());
    for (i, j, v) in m.iter() {
        h.update((i as u64).to_le_bytes());
        h.update((j as u64).to_le_bytes());
        h.update(v.to_bits().to_le_bytes());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeInstance {
    pub utilities: SparseMatrix,
    pub endowments: SparseMatrix,
}

impl ExchangeInstance {
    pub fn new(utilities: SparseMatrix, endowments: SparseMatrix) -> Result<Self> {
        if utilities.n_rows() != endowments.n_rows() || utilities.n_cols() != endowments.n_cols()
        {
            return Err(Error::Structural(format!(
                "utilities are {}x{} but endowments are {}x{}",
                utilities.n_rows(),
                utilities.n_cols(),
                endowments.n_rows(),
                endowments.n_cols()
            )));
        }
        Ok(Self {
            utilities,
            endowments,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.utilities.n_rows()
    }

    pub fn n_goods(&self) -> usize {
        self.utilities.n_cols()
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = pattern_violations(&self.utilities);
        let e = &self.endowments;
        if e.n_rows() != self.n_agents() || e.n_cols() != self.n_goods() {
            out.push(Violation::DimensionMismatch {
                expected: self.n_goods(),
                found: e.n_cols(),
                what: "endowment columns".into(),
            });
            return out;
        }
        let sums = e
            .column_sums(e.values())
            .expect("values are aligned with their own pattern");
        for (j, s) in sums.into_iter().enumerate() {
            if (s - 1.0).abs() > ENDOWMENT_SUM_TOL {
                out.push(Violation::EndowmentColumnSum { good: j, sum: s });
            }
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// The Fisher market faced by the agents at budgets `w`.
    pub fn fisher_at(&self, budgets: Vec<f64>) -> Result<FisherInstance> {
        FisherInstance::new(self.utilities.clone(), budgets)
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        hash_matrix(&mut h, &self.utilities);
        hash_matrix(&mut h, &self.endowments);
        hex::encode(h.finalize())
    }
}

/// Parameters of the random market generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    pub m: usize,
    /// Probability that a utility entry is nonzero.
    pub sparsity_u: f64,
    /// Probability that an endowment entry is nonzero.
    #[serde(default = "default_sparsity_e")]
    pub sparsity_e: f64,
    pub seed: u64,
}

fn default_sparsity_e() -> f64 {
    1.0
}

impl GeneratorConfig {
    pub fn fisher(n: usize, m: usize, q: f64, seed: u64) -> Self {
        Self {
            n,
            m,
            sparsity_u: q,
            sparsity_e: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be at least 1".into()));
        }
        for (name, q) in [("sparsity_u", self.sparsity_u), ("sparsity_e", self.sparsity_e)] {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::Config(format!("{name} = {q} is not in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Uniform draw on the open interval (0, 1).
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            return v;
        }
    }
}

/// Bernoulli(q) pattern with Uniform(0,1) values. Empty rows and columns get
/// one entry at a uniformly chosen position so that every buyer and every
/// good appears at least once.
fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, q: f64) -> Result<SparseMatrix> {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut col_count = vec![0usize; m];
    for row in rows.iter_mut() {
        for (j, c) in col_count.iter_mut().enumerate() {
            if q >= 1.0 || rng.gen::<f64>() < q {
                row.push((j, open_unit(rng)));
                *c += 1;
            }
        }
    }
    for row in rows.iter_mut() {
        if row.is_empty() {
            let j = rng.gen_range(0..m);
            row.push((j, open_unit(rng)));
            col_count[j] += 1;
        }
    }
    for j in 0..m {
        if col_count[j] == 0 {
            let i = rng.gen_range(0..n);
            let pos = rows[i].partition_point(|&(c, _)| c < j);
            rows[i].insert(pos, (j, open_unit(rng)));
            col_count[j] += 1;
        }
    }
    let mut row_offsets = Vec::with_capacity(n + 1);
    row_offsets.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for row in rows {
        for (j, v) in row {
            cols.push(j);
            vals.push(v);
        }
        row_offsets.push(cols.len());
    }
    SparseMatrix::from_csr(n, m, row_offsets, cols, vals)
}

/// Random Fisher market: budgets `w_i ~ U(0,1)` (exact zeros redrawn), then
/// a Bernoulli(`sparsity_u`) utility pattern with `U(0,1)` values.
pub fn generate_fisher(cfg: &GeneratorConfig) -> Result<FisherInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let budgets: Vec<f64> = (0..cfg.n).map(|_| open_unit(&mut rng)).collect();
    let utilities = random_matrix(&mut rng, cfg.n, cfg.m, cfg.sparsity_u)?;
    FisherInstance::new(utilities, budgets)
}

/// Random exchange market: utilities as in [`generate_fisher`], endowments
/// drawn the same way with `sparsity_e` and each column rescaled to sum to 1.
pub fn generate_exchange(cfg: &GeneratorConfig) -> Result<ExchangeInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let utilities = random_matrix(&mut rng, cfg.n, cfg.m, cfg.sparsity_u)?;
    let raw = random_matrix(&mut rng, cfg.n, cfg.m, cfg.sparsity_e)?;
    let sums = raw.column_sums(raw.values())?;
    let values: Vec<f64> = raw
        .col_indices()
        .iter()
        .zip(raw.values())
        .map(|(&j, &v)| v / sums[j])
        .collect();
    let mut endowments = raw.with_values(values);
    fix_column_sums(&mut endowments);
    ExchangeInstance::new(utilities, endowments)
}

/// Pushes the rounding residue of each column onto its largest entry so
/// that the column sums to 1 to within a couple of ulps.
fn fix_column_sums(e: &mut SparseMatrix) {
    let mut values = e.values().to_vec();
    for j in 0..e.n_cols() {
        let entries = e.col_entries(j);
        let sum: f64 = entries.iter().map(|&k| values[k]).sum();
        if let Some(&kmax) = entries
            .iter()
            .max_by(|&&a, &&b| values[a].total_cmp(&values[b]))
        {
            values[kmax] += 1.0 - sum;
        }
    }
    *e = e.with_values(values);
}
