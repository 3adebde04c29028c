//! Row-compressed storage for nonnegative market matrices.
//!
//! Every solver step is row separable, so rows are the primary layout. Column
//! access goes through a transpose index built once at construction: for each
//! column, the positions of its stored entries in increasing row order. Column
//! reductions walk that index serially per column, which makes the result
//! independent of how many worker threads are used.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Work below this many stored entries is done on the calling thread.
pub(crate) const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    // transpose index
    col_offsets: Vec<usize>,
    col_entries: Vec<usize>,
}

/// Borrowed view of one stored row.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub col_indices: &'a [usize],
    pub values: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn new(col_indices: &'a [usize], values: &'a [f64]) -> Result<Self> {
        if col_indices.len() != values.len() {
            return Err(Error::Structural(format!(
                "row has {} indices but {} values",
                col_indices.len(),
                values.len()
            )));
        }
        Ok(Self {
            col_indices,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Unchecked dot product with a dense vector; indices are trusted.
    #[inline]
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.col_indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| v * dense[j])
            .sum()
    }
}

/// `Σ_k values[k] · dense[col_indices[k]]`, rejecting out-of-range indices.
pub fn row_dot(row: RowView<'_>, dense: &[f64]) -> Result<f64> {
    if let Some(&j) = row.col_indices.iter().find(|&&j| j >= dense.len()) {
        return Err(Error::Structural(format!(
            "row index {j} out of bounds for dense vector of length {}",
            dense.len()
        )));
    }
    Ok(row.dot(dense))
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets in any order.
    ///
    /// Zero values are dropped. Negative, non-finite, out-of-range, or
    /// duplicated entries are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n_rows || j >= n_cols {
                return Err(Error::Structural(format!(
                    "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
                )));
            }
            check_value(i, j, v)?;
            if v != 0.0 {
                entries.push((i, j, v));
            }
        }
        entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::Structural(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }

        let mut row_offsets = vec![0usize; n_rows + 1];
        for &(i, _, _) in &entries {
            row_offsets[i + 1] += 1;
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices = entries.iter().map(|e| e.1).collect();
        let values = entries.iter().map(|e| e.2).collect();
        Ok(Self::assemble(n_rows, n_cols, row_offsets, col_indices, values))
    }

    /// Builds a matrix from raw CSR arrays, checking every storage invariant.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1 {
            return Err(Error::Structural(format!(
                "row_offsets has length {}, expected {}",
                row_offsets.len(),
                n_rows + 1
            )));
        }
        if col_indices.len() != values.len() {
            return Err(Error::Structural(
                "col_indices and values differ in length".into(),
            ));
        }
        if row_offsets[0] != 0 || row_offsets[n_rows] != values.len() {
            return Err(Error::Structural(
                "row_offsets must start at 0 and end at nnz".into(),
            ));
        }
        for i in 0..n_rows {
            let (lo, hi) = (row_offsets[i], row_offsets[i + 1]);
            if lo > hi {
                return Err(Error::Structural(format!(
                    "row_offsets decreases at row {i}"
                )));
            }
            let cols = &col_indices[lo..hi];
            if cols.iter().any(|&j| j >= n_cols) {
                return Err(Error::Structural(format!(
                    "row {i} has a column index >= {n_cols}"
                )));
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Structural(format!(
                    "row {i} column indices are not strictly increasing"
                )));
            }
            for k in lo..hi {
                check_value(i, col_indices[k], values[k])?;
                if values[k] == 0.0 {
                    return Err(Error::Structural(format!(
                        "explicit zero stored at ({i}, {})",
                        col_indices[k]
                    )));
                }
            }
        }
        Ok(Self::assemble(n_rows, n_cols, row_offsets, col_indices, values))
    }

    fn assemble(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        let mut col_offsets = vec![0usize; n_cols + 1];
        for &j in &col_indices {
            col_offsets[j + 1] += 1;
        }
        for j in 0..n_cols {
            col_offsets[j + 1] += col_offsets[j];
        }
        let mut cursor = col_offsets.clone();
        let mut col_entries = vec![0usize; col_indices.len()];
        // Row-major walk, so entries of each column land in increasing row order.
        for (k, &j) in col_indices.iter().enumerate() {
            col_entries[cursor[j]] = k;
            cursor[j] += 1;
        }
        Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
            col_offsets,
            col_entries,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let r = self.row_range(i);
        RowView {
            col_indices: &self.col_indices[r.clone()],
            values: &self.values[r],
        }
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    /// Entry positions of column `j`, in increasing row order.
    pub fn col_entries(&self, j: usize) -> &[usize] {
        &self.col_entries[self.col_offsets[j]..self.col_offsets[j + 1]]
    }

    /// Row index of every stored entry.
    pub fn entry_rows(&self) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            rows.extend(std::iter::repeat(i).take(self.row_range(i).len()));
        }
        rows
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.col_offsets[j + 1] - self.col_offsets[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            self.row_range(i)
                .map(move |k| (i, self.col_indices[k], self.values[k]))
        })
    }

    /// Same pattern, new values. Used for per-row rescaling.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.nnz());
        Self {
            values,
            ..self.clone()
        }
    }

    /// Per-column sums of a vector aligned with the stored entries.
    pub fn column_sums(&self, entry_values: &[f64]) -> Result<Vec<f64>> {
        if entry_values.len() != self.nnz() {
            return Err(Error::Structural(format!(
                "expected {} entry values, got {}",
                self.nnz(),
                entry_values.len()
            )));
        }
        let mut out = vec![0.0; self.n_cols];
        self.column_sums_into(entry_values, &mut out);
        Ok(out)
    }

    /// Unchecked variant of [`column_sums`](Self::column_sums) writing into `out`.
    pub fn column_sums_into(&self, entry_values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(entry_values.len(), self.nnz());
        debug_assert_eq!(out.len(), self.n_cols);
        let sum_col = |j: usize| -> f64 {
            let mut acc = 0.0;
            for &k in self.col_entries(j) {
                acc += entry_values[k];
            }
            acc
        };
        if self.nnz() >= PAR_THRESHOLD {
            out.par_iter_mut()
                .enumerate()
                .with_min_len(64)
                .for_each(|(j, o)| *o = sum_col(j));
        } else {
            for (j, o) in out.iter_mut().enumerate() {
                *o = sum_col(j);
            }
        }
    }

    /// `y = M x` for dense `x` of length `n_cols`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).dot(x);
        }
    }

    /// `x = Mᵀ y` for dense `y` of length `n_rows`, via the transpose index.
    pub fn apply_transpose(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n_rows);
        let rows = self.entry_rows();
        for (j, xj) in x.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &k in self.col_entries(j) {
                acc += self.values[k] * y[rows[k]];
            }
            *xj = acc;
        }
    }

    /// Estimates the largest singular value by power iteration on `MᵀM`.
    pub fn op_norm_estimate(&self, iters: usize) -> f64 {
        let mut row_buf = vec![0.0; self.n_rows];
        power_norm_estimate(self.n_cols, iters, |v, out| {
            self.apply(v, &mut row_buf);
            self.apply_transpose(&row_buf, out);
        })
    }
}

/// Splits an entry-aligned buffer into one mutable slice per row.
pub(crate) fn split_rows<'a>(m: &SparseMatrix, mut buf: &'a mut [f64]) -> Vec<&'a mut [f64]> {
    debug_assert_eq!(buf.len(), m.nnz());
    let mut out = Vec::with_capacity(m.n_rows());
    for i in 0..m.n_rows() {
        let (head, tail) = buf.split_at_mut(m.row_nnz(i));
        out.push(head);
        buf = tail;
    }
    out
}

fn check_value(i: usize, j: usize, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Structural(format!(
            "entry ({i}, {j}) = {v} is not a finite nonnegative value"
        )));
    }
    Ok(())
}

/// Power iteration for `‖K‖₂` given the normal operator `v ↦ KᵀK v` on a
/// space of dimension `dim`. Starts from the all-ones vector, which is not
/// orthogonal to the Perron vector of a nonnegative operator.
pub fn power_norm_estimate(
    dim: usize,
    iters: usize,
    mut normal_apply: impl FnMut(&[f64], &mut [f64]),
) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut w = vec![0.0; dim];
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        normal_apply(&v, &mut w);
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return 0.0;
        }
        // Rayleigh quotient vᵀKᵀKv with ‖v‖ = 1.
        lambda = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    lambda.max(0.0).sqrt()
}
