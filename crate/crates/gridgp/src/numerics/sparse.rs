//! Compressed sparse column matrices and a sparse Cholesky factorization
//! with a fill-reducing minimum-degree ordering.
//!
//! The factorization is the classic up-looking algorithm driven by the
//! elimination tree; it is what makes the tapered-covariance likelihood and
//! the Markov-random-field coefficient priors tractable.

use crate::error::{Error, Result};
use crate::numerics::dense::DenseMatrix;

/// Symmetric sparse matrix in compressed sparse column form.
///
/// When `sym_lower` is set only the lower triangle (row ≥ col) is stored and
/// the matrix is understood to be symmetric.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    sym_lower: bool,
}

impl SparseMatrix {
    /// Build from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)], sym_lower: bool) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = triplets
            .iter()
            .copied()
            .map(|(r, c, v)| {
                if sym_lower && r < c {
                    (c, r, v)
                } else {
                    (r, c, v)
                }
            })
            .collect();
        entries.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            debug_assert!(r < n && c < n);
            row_idx.push(r);
            values.push(v);
            col_ptr[c + 1] += 1;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        // Merge duplicate (row, col) runs.
        let mut out_rows = Vec::with_capacity(row_idx.len());
        let mut out_vals = Vec::with_capacity(values.len());
        let mut out_ptr = vec![0usize; n + 1];
        for c in 0..n {
            let lo = col_ptr[c];
            let hi = col_ptr[c + 1];
            let mut k = lo;
            while k < hi {
                let r = row_idx[k];
                let mut v = values[k];
                let mut j = k + 1;
                while j < hi && row_idx[j] == r {
                    v += values[j];
                    j += 1;
                }
                out_rows.push(r);
                out_vals.push(v);
                k = j;
            }
            out_ptr[c + 1] = out_rows.len();
        }
        Self { n, col_ptr: out_ptr, row_idx: out_rows, values: out_vals, sym_lower }
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn is_sym_lower(&self) -> bool {
        self.sym_lower
    }

    pub fn col_range(&self, c: usize) -> (&[usize], &[f64]) {
        let lo = self.col_ptr[c];
        let hi = self.col_ptr[c + 1];
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    /// `y = A·x`, honoring symmetric-lower storage.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.n, x.len());
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let (rows, vals) = self.col_range(c);
            for (&r, &v) in rows.iter().zip(vals) {
                y[r] += v * x[c];
                if self.sym_lower && r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }

    /// Densify; intended for oracles and small cases.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n, self.n);
        for c in 0..self.n {
            let (rows, vals) = self.col_range(c);
            for (&r, &v) in rows.iter().zip(vals) {
                m.set(r, c, v);
                if self.sym_lower && r != c {
                    m.set(c, r, v);
                }
            }
        }
        m
    }
}

/// Sparse Cholesky factor of `P·A·Pᵀ = L·Lᵀ`.
#[derive(Clone, Debug)]
pub struct SparseFactor {
    /// `perm[new] = old` ordering applied before factorization.
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    lower: SparseMatrix,
    log_det: f64,
}

impl SparseFactor {
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn lower(&self) -> &SparseMatrix {
        &self.lower
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solve `A·x = b` through the two triangular systems.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lower.n;
        assert_eq!(n, b.len());
        let mut z: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        self.forward_in_place(&mut z);
        self.backward_in_place(&mut z);
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[self.perm[i]] = z[i];
        }
        x
    }

    /// Forward solve `L·z = b'` in permuted coordinates; `self.forward_norm2`
    /// exists for quadratic forms that do not need the full solve.
    pub fn forward_in_place(&self, x: &mut [f64]) {
        let l = &self.lower;
        for j in 0..l.n {
            let (rows, vals) = l.col_range(j);
            // Diagonal is the first entry of each column by construction.
            x[j] /= vals[0];
            let xj = x[j];
            if xj != 0.0 {
                for (&r, &v) in rows.iter().zip(vals).skip(1) {
                    x[r] -= v * xj;
                }
            }
        }
    }

    fn backward_in_place(&self, x: &mut [f64]) {
        let l = &self.lower;
        for j in (0..l.n).rev() {
            let (rows, vals) = l.col_range(j);
            let mut s = x[j];
            for (&r, &v) in rows.iter().zip(vals).skip(1) {
                s -= v * x[r];
            }
            x[j] = s / vals[0];
        }
    }

    /// `bᵀ·A⁻¹·b = ‖L⁻¹·P·b‖²` without the back-substitution.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        let n = self.lower.n;
        let mut z: Vec<f64> = (0..n).map(|i| b[self.perm[i]]).collect();
        self.forward_in_place(&mut z);
        z.iter().map(|v| v * v).sum()
    }

    pub fn inv_perm(&self) -> &[usize] {
        &self.inv_perm
    }
}

/// Greedy minimum-degree ordering on the pattern of a symmetric matrix.
/// Ties break toward the lower original index so orderings are reproducible.
fn min_degree_order(n: usize, adj_in: &[Vec<usize>]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = adj_in.to_vec();
    let mut alive = vec![true; n];
    let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if alive[v] && degree[v] < best_deg {
                best_deg = degree[v];
                best = v;
            }
        }
        let v = best;
        alive[v] = false;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| alive[u]).collect();
        // Connect the eliminated vertex's neighborhood into a clique.
        for &u in &nbrs {
            let merged = merge_sorted(&adj[u], &nbrs, u, v, &alive);
            degree[u] = merged.len();
            adj[u] = merged;
        }
        adj[v].clear();
    }
    order
}

fn merge_sorted(a: &[usize], b: &[usize], skip: usize, dead: usize, alive: &[bool]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let x = if i < a.len() { a[i] } else { usize::MAX };
        let y = if j < b.len() { b[j] } else { usize::MAX };
        let v = if x <= y { i += 1; if x == y { j += 1; } x } else { j += 1; y };
        if v != skip && v != dead && alive[v] {
            out.push(v);
        }
    }
    out
}

/// Sparse Cholesky with minimum-degree ordering. The input must be symmetric
/// positive definite (lower storage recommended).
pub fn sparse_cholesky(a: &SparseMatrix) -> Result<SparseFactor> {
    let n = a.n;
    // Adjacency of the pattern (off-diagonal, both directions).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        let (rows, _) = a.col_range(c);
        for &r in rows {
            if r != c {
                adj[c].push(r);
                adj[r].push(c);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let perm = min_degree_order(n, &adj);
    let mut inv_perm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv_perm[old] = new;
    }

    // Upper triangle of P·A·Pᵀ in CSC (column k holds row indices ≤ k).
    let mut upper_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for c in 0..n {
        let (rows, vals) = a.col_range(c);
        for (&r, &v) in rows.iter().zip(vals) {
            let (pi, pj) = (inv_perm[r], inv_perm[c]);
            let (lo, hi) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            upper_cols[hi].push((lo, v));
        }
    }
    if !a.sym_lower {
        // General storage carries both triangles; collapse mirrored entries.
        for col in upper_cols.iter_mut() {
            col.sort_unstable_by_key(|e| e.0);
            col.dedup_by(|x, first| x.0 == first.0);
        }
    }

    // Elimination tree of the permuted matrix.
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for &(i, _) in &upper_cols[k] {
            let mut i = i;
            while i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                    break;
                }
                if next == k {
                    break;
                }
                i = next;
            }
        }
    }

    // Up-looking numeric factorization.
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut x = vec![0.0; n];
    let mut mark = vec![usize::MAX; n];
    let mut pattern = vec![0usize; n];
    let mut stack = vec![0usize; n];
    let mut log_det = 0.0;
    for k in 0..n {
        // Reach: pattern of row k of L, descendants before ancestors.
        mark[k] = k;
        let mut top = n;
        let mut d = 0.0;
        for &(i, v) in &upper_cols[k] {
            if i == k {
                d += v;
                continue;
            }
            x[i] += v;
            let mut len = 0;
            let mut node = i;
            while mark[node] != k {
                stack[len] = node;
                len += 1;
                mark[node] = k;
                node = parent[node];
            }
            while len > 0 {
                len -= 1;
                top -= 1;
                pattern[top] = stack[len];
            }
        }
        for idx in top..n {
            let j = pattern[idx];
            let col_j = &cols[j];
            let ljj = col_j[0].1;
            let lkj = x[j] / ljj;
            x[j] = 0.0;
            for &(r, v) in col_j.iter().skip(1) {
                x[r] -= v * lkj;
            }
            d -= lkj * lkj;
            cols[j].push((k, lkj));
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: perm[k], pivot: d });
        }
        let dkk = d.sqrt();
        log_det += 2.0 * dkk.ln();
        cols[k].push((k, dkk));
        x[k] = 0.0;
    }

    let mut col_ptr = vec![0usize; n + 1];
    let mut row_idx = Vec::new();
    let mut values = Vec::new();
    for (c, col) in cols.iter().enumerate() {
        for &(r, v) in col {
            row_idx.push(r);
            values.push(v);
        }
        col_ptr[c + 1] = row_idx.len();
    }
    let lower = SparseMatrix { n, col_ptr, row_idx, values, sym_lower: false };
    Ok(SparseFactor { perm, inv_perm, lower, log_det })
}
