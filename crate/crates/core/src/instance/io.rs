//! On-disk instance formats.
//!
//! An instance is a directory:
//!
//! * `utilities.mtx` or `utilities.csv`: the utility matrix,
//! * `budgets.txt`: one budget per line (Fisher instances),
//! * `endowments.mtx` or `endowments.csv`: the endowment matrix (exchange
//!   instances).
//!
//! Matrix Market files use the `coordinate real general` layout with 1-based
//! indices. CSV triplet files hold `i,j,value` lines with 0-based indices; an
//! optional `# shape: <rows> <cols>` comment fixes the dimensions, otherwise
//! they are inferred from the largest indices. An `i,j,value` header line is
//! tolerated. Floats are written in shortest round-trip form.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExchangeInstance, FisherInstance, Violation};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    MatrixMarket,
    CsvTriplets,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::MatrixMarket => "mtx",
            Format::CsvTriplets => "csv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "matrix-market" | "mtx" => Some(Format::MatrixMarket),
            "csv-triplets" | "csv" => Some(Format::CsvTriplets),
            _ => None,
        }
    }
}

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn write_matrix_market(m: &SparseMatrix, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{MM_HEADER}")?;
    writeln!(out, "{} {} {}", m.n_rows(), m.n_cols(), m.nnz())?;
    for (i, j, v) in m.iter() {
        writeln!(out, "{} {} {:?}", i + 1, j + 1, v)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let fields: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
    if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(parse_err(path, ln, "missing %%MatrixMarket matrix header"));
    }
    if fields[2] != "coordinate" || fields[4] != "general" {
        return Err(parse_err(
            path,
            ln,
            "only coordinate general matrices are supported",
        ));
    }
    if !matches!(fields[3].as_str(), "real" | "integer" | "double") {
        return Err(parse_err(path, ln, format!("unsupported field type {}", fields[3])));
    }

    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (ln, size) = body
        .next()
        .ok_or_else(|| parse_err(path, ln, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(path, ln, format!("bad size line: {e}")))?;
    let [n_rows, n_cols, nnz] = dims[..] else {
        return Err(parse_err(path, ln, "size line must have three integers"));
    };

    let mut triplets = Vec::with_capacity(nnz);
    let mut last_line = ln;
    for (ln, line) in body {
        last_line = ln;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, ln, "expected `row col value`"));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad row index: {e}")))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad column index: {e}")))?;
        let v: f64 = toks[2]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad value: {e}")))?;
        if i == 0 || j == 0 || i > n_rows || j > n_cols {
            return Err(parse_err(path, ln, format!("index ({i}, {j}) out of range")));
        }
        if triplets.len() == nnz {
            return Err(parse_err(
                path,
                ln,
                format!("more entries than the {nnz} declared"),
            ));
        }
        if v < 0.0 {
            return Err(Error::Validation(vec![Violation::NegativeEntry {
                row: i - 1,
                col: j - 1,
                value: v,
            }]));
        }
        triplets.push((i - 1, j - 1, v));
    }
    if triplets.len() != nnz {
        return Err(parse_err(
            path,
            last_line,
            format!("declared {nnz} entries but found {}", triplets.len()),
        ));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, triplets)
}

pub fn write_triplets_csv(m: &SparseMatrix, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# shape: {} {}", m.n_rows(), m.n_cols())?;
    for (i, j, v) in m.iter() {
        writeln!(out, "{i},{j},{v:?}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_triplets_csv(path: &Path) -> Result<SparseMatrix> {
    let text = fs::read_to_string(path)?;
    let mut shape: Option<(usize, usize)> = None;
    let mut triplets = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let ln = k + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(rest) = comment.trim().strip_prefix("shape:") {
                let d: Vec<usize> = rest
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, ln, format!("bad shape comment: {e}")))?;
                let [r, c] = d[..] else {
                    return Err(parse_err(path, ln, "shape comment needs two integers"));
                };
                shape = Some((r, c));
            }
            continue;
        }
        if line.eq_ignore_ascii_case("i,j,value") {
            continue;
        }
        let toks: Vec<&str> = line.split(',').map(str::trim).collect();
        if toks.len() != 3 {
            return Err(parse_err(path, ln, "expected `i,j,value`"));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad row index: {e}")))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad column index: {e}")))?;
        let v: f64 = toks[2]
            .parse()
            .map_err(|e| parse_err(path, ln, format!("bad value: {e}")))?;
        if v < 0.0 {
            return Err(Error::Validation(vec![Violation::NegativeEntry {
                row: i,
                col: j,
                value: v,
            }]));
        }
        triplets.push((i, j, v));
    }
    let (n_rows, n_cols) = shape.unwrap_or_else(|| {
        let r = triplets.iter().map(|t| t.0 + 1).max().unwrap_or(0);
        let c = triplets.iter().map(|t| t.1 + 1).max().unwrap_or(0);
        (r, c)
    });
    SparseMatrix::from_triplets(n_rows, n_cols, triplets)
}

pub fn write_vector(v: &[f64], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for x in v {
        writeln!(out, "{x:?}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|e| parse_err(path, k + 1, format!("bad value: {e}")))?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_matrix(path: &Path, format: Format) -> Result<SparseMatrix> {
    match format {
        Format::MatrixMarket => read_matrix_market(path),
        Format::CsvTriplets => read_triplets_csv(path),
    }
}

pub fn write_matrix(m: &SparseMatrix, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::MatrixMarket => write_matrix_market(m, path),
        Format::CsvTriplets => write_triplets_csv(m, path),
    }
}

fn matrix_path(dir: &Path, stem: &str, format: Format) -> PathBuf {
    dir.join(format!("{stem}.{}", format.extension()))
}

/// Finds `<stem>.mtx` or `<stem>.csv` in `dir` when no format is forced.
fn locate(dir: &Path, stem: &str, format: Option<Format>) -> Result<(PathBuf, Format)> {
    let candidates: &[Format] = match &format {
        Some(f) => std::slice::from_ref(f),
        None => &[Format::MatrixMarket, Format::CsvTriplets],
    };
    for &f in candidates {
        let p = matrix_path(dir, stem, f);
        if p.exists() {
            return Ok((p, f));
        }
    }
    Err(Error::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no {stem}.mtx or {stem}.csv in {}", dir.display()),
    )))
}

pub fn save_fisher(inst: &FisherInstance, dir: &Path, format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&inst.utilities, &matrix_path(dir, "utilities", format), format)?;
    write_vector(&inst.budgets, &dir.join("budgets.txt"))
}

pub fn load_fisher(dir: &Path, format: Option<Format>) -> Result<FisherInstance> {
    let (path, fmt) = locate(dir, "utilities", format)?;
    let utilities = read_matrix(&path, fmt)?;
    let budgets = read_vector(&dir.join("budgets.txt"))?;
    FisherInstance::new(utilities, budgets)
}

pub fn save_exchange(inst: &ExchangeInstance, dir: &Path, format: Format) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&inst.utilities, &matrix_path(dir, "utilities", format), format)?;
    write_matrix(&inst.endowments, &matrix_path(dir, "endowments", format), format)
}

pub fn load_exchange(dir: &Path, format: Option<Format>) -> Result<ExchangeInstance> {
    let (up, uf) = locate(dir, "utilities", format)?;
    let (ep, ef) = locate(dir, "endowments", format)?;
    ExchangeInstance::new(read_matrix(&up, uf)?, read_matrix(&ep, ef)?)
}

/// True when `dir` holds an exchange instance rather than a Fisher one.
pub fn is_exchange_dir(dir: &Path) -> bool {
    locate(dir, "endowments", None).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_exchange, generate_fisher, GeneratorConfig};

    #[test]
    fn fisher_round_trip_both_formats() {
        let inst = generate_fisher(&GeneratorConfig::fisher(10, 5, 0.4, 3)).unwrap();
        for fmt in [Format::MatrixMarket, Format::CsvTriplets] {
            let dir = tempfile::tempdir().unwrap();
            save_fisher(&inst, dir.path(), fmt).unwrap();
            let back = load_fisher(dir.path(), None).unwrap();
            assert_eq!(back, inst);
        }
    }

    #[test]
    fn exchange_round_trip() {
        let cfg = GeneratorConfig {
            n: 8,
            m: 4,
            sparsity_u: 0.5,
            sparsity_e: 0.5,
            seed: 1,
        };
        let inst = generate_exchange(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_exchange(&inst, dir.path(), Format::MatrixMarket).unwrap();
        assert!(is_exchange_dir(dir.path()));
        assert_eq!(load_exchange(dir.path(), None).unwrap(), inst);
    }

    #[test]
    fn wrong_nnz_count_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.mtx");
        fs::write(&p, format!("{MM_HEADER}\n2 2 3\n1 1 1.0\n2 2 0.5\n")).unwrap();
        match read_matrix_market(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("declared 3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.mtx");
        fs::write(&p, format!("{MM_HEADER}\n% comment\n2 2 1\n1 x 1.0\n")).unwrap();
        assert!(matches!(read_matrix_market(&p), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn negative_csv_utility_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.csv");
        fs::write(&p, "i,j,value\n0,0,1.0\n1,0,-0.5\n").unwrap();
        assert!(matches!(read_triplets_csv(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn budget_length_mismatch_on_load() {
        let inst = generate_fisher(&GeneratorConfig::fisher(4, 3, 0.5, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_fisher(&inst, dir.path(), Format::CsvTriplets).unwrap();
        fs::write(dir.path().join("budgets.txt"), "0.5\n0.5\n").unwrap();
        assert!(matches!(load_fisher(dir.path(), None), Err(Error::Structural(_))));
    }
}
