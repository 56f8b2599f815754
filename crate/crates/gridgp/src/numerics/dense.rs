//! Dense column-major matrices with a blocked Cholesky factorization.
//!
//! The factorization is right-looking with the trailing update parallelized
//! over columns, which is where essentially all of the time goes for the
//! exact-likelihood evaluations at a few thousand observations.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense matrix of 64-bit reals, column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Column-major data, length `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "entry count must equal rows * cols");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[c * self.rows + r] = v;
    }

    #[inline]
    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self * x` for a vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len());
        let mut y = vec![0.0; self.rows];
        for (c, &xc) in x.iter().enumerate() {
            if xc != 0.0 {
                let col = self.col(c);
                for (yi, &cv) in y.iter_mut().zip(col) {
                    *yi += cv * xc;
                }
            }
        }
        y
    }

    /// `selfᵀ * x`.
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len());
        (0..self.cols).map(|c| dot(self.col(c), x)).collect()
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let bcol = other.col(j);
            let ocol = out.col_mut(j);
            for (k, &b) in bcol.iter().enumerate() {
                if b != 0.0 {
                    let acol = self.col(k);
                    for (o, &a) in ocol.iter_mut().zip(acol) {
                        *o += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lower-triangular Cholesky factor `L` with `L·Lᵀ = self`.
    ///
    /// Only the lower triangle of the input is read. Fails with
    /// [`Error::NotPositiveDefinite`] on a non-positive pivot, which is how
    /// invalid covariance parameter sets surface during fitting.
    pub fn cholesky(&self) -> Result<DenseMatrix> {
        assert_eq!(self.rows, self.cols, "cholesky requires a square matrix");
        let n = self.rows;
        let mut l = self.clone();
        // Zero the upper triangle so the result is a clean lower factor.
        for c in 0..n {
            let col = l.col_mut(c);
            for v in col.iter_mut().take(c) {
                *v = 0.0;
            }
        }

        const BLOCK: usize = 96;
        let mut scratch = vec![0.0; 0];
        let mut k0 = 0;
        while k0 < n {
            let kb = BLOCK.min(n - k0);
            // Factor the diagonal block in place (unblocked).
            for j in k0..k0 + kb {
                let mut d = l.get(j, j);
                for t in k0..j {
                    let v = l.get(j, t);
                    d -= v * v;
                }
                if d <= 0.0 || !d.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: j, pivot: d });
                }
                let dj = d.sqrt();
                l.set(j, j, dj);
                // Column j below the diagonal block start is updated lazily in
                // the panel solve; here only rows within the block matter.
                for i in (j + 1)..(k0 + kb) {
                    let mut v = l.get(i, j);
                    for t in k0..j {
                        v -= l.get(i, t) * l.get(j, t);
                    }
                    l.set(i, j, v / dj);
                }
            }
            let below = n - (k0 + kb);
            if below > 0 {
                // Panel solve: rows k0+kb..n of columns k0..k0+kb.
                for j in k0..k0 + kb {
                    let djj = l.get(j, j);
                    for t in k0..j {
                        let ljt = l.get(j, t);
                        if ljt != 0.0 {
                            let (tcol, jcol) = borrow_two_cols(&mut l, t, j);
                            let lo = k0 + kb;
                            for i in 0..below {
                                jcol[lo + i] -= ljt * tcol[lo + i];
                            }
                        }
                    }
                    let jcol = l.col_mut(j);
                    for v in &mut jcol[k0 + kb..] {
                        *v /= djj;
                    }
                }
                // Copy the panel (rows k0+kb..n, cols k0..k0+kb) for the update.
                scratch.clear();
                scratch.resize(below * kb, 0.0);
                for (t, chunk) in scratch.chunks_mut(below).enumerate() {
                    chunk.copy_from_slice(&l.col(k0 + t)[k0 + kb..]);
                }
                // Trailing symmetric update, parallel over trailing columns:
                // A[j.., j] -= panel_row(j) · panel_rows(j..)ᵀ.
                let rows = self.rows;
                let lo = k0 + kb;
                let scratch_ref = &scratch;
                l.data[lo * rows..]
                    .par_chunks_mut(rows)
                    .enumerate()
                    .for_each(|(jj, coldata)| {
                        let j = lo + jj;
                        for t in 0..kb {
                            let panel = &scratch_ref[t * below..(t + 1) * below];
                            let f = panel[j - lo];
                            if f != 0.0 {
                                let dst = &mut coldata[j..];
                                let src = &panel[j - lo..];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d -= f * s;
                                }
                            }
                        }
                    });
            }
            k0 += kb;
        }
        Ok(l)
    }

    /// Solve `L·x = b` (or `Lᵀ·x = b` when `transposed`) for lower-triangular `self`.
    pub fn triangular_solve(&self, b: &[f64], transposed: bool) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, b.len(), "dimension mismatch in triangular solve");
        let n = self.rows;
        for i in 0..n {
            if self.get(i, i) == 0.0 {
                return Err(Error::SingularFactor(i));
            }
        }
        let mut x = b.to_vec();
        if !transposed {
            // Forward substitution, column-oriented so inner loops are contiguous.
            for j in 0..n {
                x[j] /= self.get(j, j);
                let xj = x[j];
                if xj != 0.0 {
                    let col = self.col(j);
                    for i in j + 1..n {
                        x[i] -= col[i] * xj;
                    }
                }
            }
        } else {
            for j in (0..n).rev() {
                let col = self.col(j);
                let mut s = x[j];
                for i in j + 1..n {
                    s -= col[i] * x[i];
                }
                x[j] = s / col[j];
            }
        }
        Ok(x)
    }

    /// Solve `A·x = b` given `self = L` from [`DenseMatrix::cholesky`].
    pub fn cholesky_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let y = self.triangular_solve(b, false)?;
        self.triangular_solve(&y, true)
    }

    /// `2 · Σ log L_ii`, the log-determinant of the factored matrix.
    pub fn cholesky_logdet(&self) -> f64 {
        (0..self.rows).map(|i| self.get(i, i).ln()).sum::<f64>() * 2.0
    }
}

/// Householder QR of a tall matrix: returns the square upper-triangular `R`
/// and `Qᵀ·rhs` truncated to the column count. Stable for badly row-scaled
/// systems where forming normal equations would cancel.
pub fn qr_factor(mut a: DenseMatrix, rhs: &[f64]) -> (DenseMatrix, Vec<f64>) {
    let m = a.rows();
    let n = a.cols();
    assert!(m >= n, "QR requires at least as many rows as columns");
    assert_eq!(m, rhs.len());
    let mut q_rhs = rhs.to_vec();
    let mut v = vec![0.0; m];
    for k in 0..n {
        // Householder vector for column k below the diagonal.
        let col = a.col(k);
        let mut norm = 0.0;
        for &x in &col[k..] {
            norm += x * x;
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if col[k] >= 0.0 { -norm } else { norm };
        let mut vnorm2 = 0.0;
        for i in k..m {
            v[i] = a.get(i, k);
            if i == k {
                v[i] -= alpha;
            }
            vnorm2 += v[i] * v[i];
        }
        if vnorm2 == 0.0 {
            continue;
        }
        // Apply I - 2vv'/v'v to the remaining columns and the rhs.
        for j in k..n {
            let cj = a.col_mut(j);
            let mut dot = 0.0;
            for i in k..m {
                dot += v[i] * cj[i];
            }
            let f = 2.0 * dot / vnorm2;
            for i in k..m {
                cj[i] -= f * v[i];
            }
        }
        let mut dot = 0.0;
        for i in k..m {
            dot += v[i] * q_rhs[i];
        }
        let f = 2.0 * dot / vnorm2;
        for i in k..m {
            q_rhs[i] -= f * v[i];
        }
    }
    let mut r = DenseMatrix::zeros(n, n);
    for c in 0..n {
        for rr in 0..=c {
            r.set(rr, c, a.get(rr, c));
        }
    }
    q_rhs.truncate(n);
    (r, q_rhs)
}

fn borrow_two_cols(m: &mut DenseMatrix, a: usize, b: usize) -> (&[f64], &mut [f64]) {
    debug_assert!(a < b);
    let rows = m.rows;
    let (left, right) = m.data.split_at_mut(b * rows);
    (&left[a * rows..(a + 1) * rows], &mut right[..rows])
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve the small SPD system `A·x = b` directly; helper for the m×m systems
/// that dominate the neighbor-based methods.
pub fn solve_spd(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let l = a.cholesky()?;
    l.cholesky_solve(b)
}
