//! Compressed sparse row storage and a banded LU factorization.
//!
//! Finite element matrices on a lexicographically numbered lattice have a
//! bandwidth of one grid row, so a band factorization without pivoting is a
//! direct solver with `O(n * bw^2)` setup and `O(n * bw)` solves. Both the
//! forward and the transposed system can be solved with one factorization,
//! which is what the discrete adjoint needs.

use crate::error::{Error, Result};

/// Square or rectangular matrix in CSR layout. Column indices are strictly
/// increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    /// Explicit zeros are kept so that matrices assembled on the same mesh
    /// share a sparsity pattern.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = cursor[r];
            cols[k] = c;
            vals[k] = v;
            cursor[r] += 1;
        }

        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            for &(c, v) in &scratch {
                if col_indices.len() > row_offsets[r] && *col_indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
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

    /// Iterates over the stored `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Stored value at `(r, c)`, zero if not in the pattern.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[range.clone()].binary_search(&c) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// `out = A x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *o = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = A^T x`
    pub fn tr_mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.row_offsets[r]..self.row_offsets[r + 1] {
                out[self.col_indices[k]] += self.values[k] * xr;
            }
        }
    }

    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        self.tr_mul_vec_into(x, &mut out);
        out
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        (0..self.nrows)
            .map(|r| x[r] * self.row(r).map(|(c, v)| v * x[c]).sum::<f64>())
            .sum()
    }

    /// Row and column restriction `A[rows, cols]`; `col_map[c]` gives the new
    /// index of original column `c`, or `None` to drop it.
    pub fn restrict(&self, rows: &[usize], col_map: &[Option<usize>], ncols: usize) -> Self {
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for &r in rows {
            for (c, v) in self.row(r) {
                if let Some(nc) = col_map[c] {
                    col_indices.push(nc);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        // col_map preserves order for the lattice numbering used here, but do
        // not rely on it.
        let mut out = Self {
            nrows: rows.len(),
            ncols,
            row_offsets,
            col_indices,
            values,
        };
        out.sort_rows();
        out
    }

    fn sort_rows(&mut self) {
        for r in 0..self.nrows {
            let range = self.row_offsets[r]..self.row_offsets[r + 1];
            if self.col_indices[range.clone()].windows(2).all(|w| w[0] < w[1]) {
                continue;
            }
            let mut pairs: Vec<(usize, f64)> = self.col_indices[range.clone()]
                .iter()
                .copied()
                .zip(self.values[range.clone()].iter().copied())
                .collect();
            pairs.sort_by_key(|&(c, _)| c);
            for (k, (c, v)) in range.zip(pairs) {
                self.col_indices[k] = c;
                self.values[k] = v;
            }
        }
    }

    /// `alpha * self + beta * other`, merging the two patterns.
    pub fn lincomb(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch {}x{} vs {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut row_offsets = Vec::with_capacity(self.nrows + 1);
        let mut col_indices = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        row_offsets.push(0);
        for r in 0..self.nrows {
            let (mut a, mut b) = (self.row_offsets[r], other.row_offsets[r]);
            let (ae, be) = (self.row_offsets[r + 1], other.row_offsets[r + 1]);
            while a < ae || b < be {
                let ca = if a < ae { self.col_indices[a] } else { usize::MAX };
                let cb = if b < be { other.col_indices[b] } else { usize::MAX };
                if ca == cb {
                    col_indices.push(ca);
                    values.push(alpha * self.values[a] + beta * other.values[b]);
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    col_indices.push(ca);
                    values.push(alpha * self.values[a]);
                    a += 1;
                } else {
                    col_indices.push(cb);
                    values.push(beta * other.values[b]);
                    b += 1;
                }
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.ncols, self.nrows, &triplets).expect("transpose indices in range")
    }

    /// Row-major dense copy. Intended for tests and tiny problems.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in dense.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] += v;
            }
        }
        dense
    }

    /// Largest `|a_ij - a_ji| / max|a|`; zero for an exactly symmetric matrix.
    pub fn symmetry_defect(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                worst = worst.max((v - self.get(c, r)).abs());
            }
        }
        worst / scale
    }
}

/// LU factors of a banded matrix, computed without pivoting.
///
/// Suitable for matrices whose symmetric part is positive definite (mass,
/// stiffness and Crank-Nicolson step matrices); a pivot below the relative
/// threshold is reported as an error instead of being silently used.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandedLu {
    const PIVOT_RTOL: f64 = 1e-13;

    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::LinearSolve(format!(
                "matrix is not square ({}x{})",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let (mut lower, mut upper) = (0usize, 0usize);
        for r in 0..n {
            for (c, _) in a.row(r) {
                if c < r {
                    lower = lower.max(r - c);
                } else {
                    upper = upper.max(c - r);
                }
            }
        }
        let width = lower + upper + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for r in 0..n {
            for (c, v) in a.row(r) {
                band[r * width + c + lower - r] += v;
                scale = scale.max(v.abs());
            }
        }
        let tiny = Self::PIVOT_RTOL * scale;

        for k in 0..n {
            let pivot = band[k * width + lower];
            if !(pivot.abs() > tiny) {
                return Err(Error::LinearSolve(format!(
                    "pivot {pivot:e} at row {k} below threshold {tiny:e}"
                )));
            }
            let last_row = (k + lower).min(n - 1);
            let last_col = (k + upper).min(n - 1);
            for i in k + 1..=last_row {
                let ik = i * width + k + lower - i;
                let l = band[ik] / pivot;
                band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    band[i * width + j + lower - i] -= l * band[k * width + j + lower - k];
                }
            }
        }
        Ok(Self {
            n,
            lower,
            upper,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.lower, self.upper)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * (self.lower + self.upper + 1) + j + self.lower - i]
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut acc = x[i];
            for j in i.saturating_sub(self.lower)..i {
                acc -= self.at(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..=(i + self.upper).min(n - 1) {
                acc -= self.at(i, j) * x[j];
            }
            x[i] = acc / self.at(i, i);
        }
    }

    /// Solves `A^T x = b` in place.
    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n);
        // U^T z = b
        for i in 0..n {
            let mut acc = x[i];
            for j in i.saturating_sub(self.upper)..i {
                acc -= self.at(j, i) * x[j];
            }
            x[i] = acc / self.at(i, i);
        }
        // L^T x = z
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..=(i + self.lower).min(n - 1) {
                acc -= self.at(j, i) * x[j];
            }
            x[i] = acc;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        x
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm2(a: &[f64]) -> f64 {
        dot(a, a).sqrt()
    }

    fn tridiag(n: usize, lo: f64, d: f64, up: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, d));
            if i > 0 {
                t.push((i, i - 1, lo));
            }
            if i + 1 < n {
                t.push((i, i + 1, up));
            }
        }
        CsrMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn triplets_are_summed_and_sorted() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, 0.0)])
            .unwrap();
        assert_eq!(a.row_offsets(), &[0, 2, 3]);
        assert_eq!(a.col_indices(), &[0, 2, 1]);
        assert_eq!(a.values(), &[2.0, 4.0, 0.0]);
        assert_eq!(a.get(0, 2), 4.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn lincomb_merges_patterns() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 5.0), (1, 1, 1.0)]).unwrap();
        let c = a.lincomb(2.0, &b, -1.0).unwrap();
        assert_eq!(c.to_dense(), vec![vec![2.0, -5.0], vec![0.0, 3.0]]);
    }

    #[test]
    fn banded_lu_solves_nonsymmetric_system_and_transpose() {
        let a = tridiag(7, -1.3, 4.0, -0.6);
        let lu = BandedLu::factor(&a).unwrap();
        assert_eq!(lu.bandwidths(), (1, 1));
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin() + 1.0).collect();

        let x = lu.solve(&b);
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&r) <= 1e-13 * norm2(&b));

        let xt = lu.solve_transpose(&b);
        let rt: Vec<f64> = a.tr_mul_vec(&xt).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(norm2(&rt) <= 1e-13 * norm2(&b));
    }

    #[test]
    fn zero_pivot_is_an_error() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(BandedLu::factor(&a), Err(Error::LinearSolve(_))));
    }

    #[test]
    fn restrict_keeps_selected_block() {
        let a = tridiag(4, -1.0, 2.0, -1.0);
        let map = vec![None, Some(0), Some(1), None];
        let b = a.restrict(&[1, 2], &map, 2);
        assert_eq!(b.to_dense(), vec![vec![2.0, -1.0], vec![-1.0, 2.0]]);
    }
}
