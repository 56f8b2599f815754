//! Shared machinery for the low-rank observation model
//! `y = Xβ + Hθ + e`, `θ ~ N(0, S)`, `e ~ N(0, diag(d))`.
//!
//! The marginal likelihood runs entirely through K×K algebra (Woodbury).
//! The posterior used for prediction is assembled once per fit through a
//! Householder QR of the weighted data rows stacked on the prior square
//! root, which stays accurate even when some diagonal variances are
//! essentially zero (saturated predictive processes).

use crate::error::Result;
use crate::numerics::dense::qr_factor;
use crate::numerics::{sparse_cholesky, DenseMatrix, SparseMatrix};

/// Prior precision of the coefficients plus the log-determinant of the prior
/// covariance.
pub enum PriorPrecision<'a> {
    Dense { q: &'a DenseMatrix, log_det_cov: f64 },
    Sparse { q: &'a SparseMatrix, log_det_cov: f64 },
}

impl PriorPrecision<'_> {
    fn add_into(&self, m: &mut DenseMatrix) {
        match self {
            PriorPrecision::Dense { q, .. } => {
                for c in 0..q.cols() {
                    for r in 0..q.rows() {
                        let v = q.get(r, c);
                        if v != 0.0 {
                            m.set(r, c, m.get(r, c) + v);
                        }
                    }
                }
            }
            PriorPrecision::Sparse { q, .. } => {
                for c in 0..q.dimension() {
                    let (rows, vals) = q.col_range(c);
                    for (&r, &v) in rows.iter().zip(vals) {
                        m.set(r, c, m.get(r, c) + v);
                        if q.is_sym_lower() && r != c {
                            m.set(c, r, m.get(c, r) + v);
                        }
                    }
                }
            }
        }
    }

    fn log_det_cov(&self) -> f64 {
        match self {
            PriorPrecision::Dense { log_det_cov, .. } => *log_det_cov,
            PriorPrecision::Sparse { log_det_cov, .. } => *log_det_cov,
        }
    }

    /// A square root `G` with `GᵀG = Q`, densified for the QR stack.
    fn sqrt_rows(&self, k: usize) -> Result<DenseMatrix> {
        match self {
            PriorPrecision::Dense { q, .. } => {
                let l = q.cholesky()?;
                Ok(l.transpose())
            }
            PriorPrecision::Sparse { q, .. } => {
                let f = sparse_cholesky(q)?;
                let perm = f.permutation();
                let lower = f.lower();
                let mut g = DenseMatrix::zeros(k, k);
                for c in 0..k {
                    let (rows, vals) = lower.col_range(c);
                    for (&r, &v) in rows.iter().zip(vals) {
                        g.set(c, perm[r], v);
                    }
                }
                Ok(g)
            }
        }
    }
}

/// Likelihood pieces of one evaluation.
pub struct LowRankLik {
    pub loglik: f64,
    pub beta: Vec<f64>,
}

/// Marginal log-likelihood with the trend profiled by GLS; every solve is
/// K×K or diagonal.
pub fn lowrank_loglik(
    h_rows: &[Vec<(usize, f64)>],
    k: usize,
    d: &[f64],
    prior: &PriorPrecision,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankLik> {
    let n = y.len();
    let p = design.cols();
    debug_assert_eq!(h_rows.len(), n);
    debug_assert_eq!(d.len(), n);

    let mut htdh = DenseMatrix::zeros(k, k);
    let mut htdy = vec![0.0; k];
    let mut htdx = DenseMatrix::zeros(k, p);
    let mut xtdx = DenseMatrix::zeros(p, p);
    let mut xtdy = vec![0.0; p];
    let mut ytdy = 0.0;
    let mut log_det_d = 0.0;
    for i in 0..n {
        let wi = 1.0 / d[i];
        log_det_d += d[i].ln();
        ytdy += y[i] * y[i] * wi;
        let xrow: Vec<f64> = (0..p).map(|j| design.get(i, j)).collect();
        for a in 0..p {
            xtdy[a] += xrow[a] * y[i] * wi;
            for b in 0..=a {
                let v = xtdx.get(a, b) + xrow[a] * xrow[b] * wi;
                xtdx.set(a, b, v);
                xtdx.set(b, a, v);
            }
        }
        for &(a, va) in &h_rows[i] {
            htdy[a] += va * y[i] * wi;
            for bj in 0..p {
                htdx.set(a, bj, htdx.get(a, bj) + va * xrow[bj] * wi);
            }
            for &(b, vb) in &h_rows[i] {
                if b <= a {
                    htdh.set(a, b, htdh.get(a, b) + va * vb * wi);
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            htdh.set(b, a, htdh.get(a, b));
        }
    }

    let mut m = htdh;
    prior.add_into(&mut m);
    let m_chol = m.cholesky()?;

    let t_y = m_chol.cholesky_solve(&htdy)?;
    let mut t_x = DenseMatrix::zeros(k, p);
    for j in 0..p {
        let col = m_chol.cholesky_solve(htdx.col(j))?;
        t_x.col_mut(j).copy_from_slice(&col);
    }
    let y_siy = ytdy - crate::numerics::dot(&htdy, &t_y);
    let mut xt_si_x = DenseMatrix::zeros(p, p);
    let mut xt_si_y = vec![0.0; p];
    for a in 0..p {
        xt_si_y[a] = xtdy[a] - crate::numerics::dot(htdx.col(a), &t_y);
        for b in 0..=a {
            let v = xtdx.get(a, b) - crate::numerics::dot(htdx.col(a), t_x.col(b));
            xt_si_x.set(a, b, v);
            xt_si_x.set(b, a, v);
        }
    }
    let gls_chol = xt_si_x.cholesky()?;
    let beta = gls_chol.cholesky_solve(&xt_si_y)?;
    let quad = y_siy - 2.0 * crate::numerics::dot(&beta, &xt_si_y)
        + beta
            .iter()
            .enumerate()
            .map(|(a, &ba)| ba * crate::numerics::dot(xt_si_x.col(a), &beta))
            .sum::<f64>();
    let log_det_sigma = m_chol.cholesky_logdet() + prior.log_det_cov() + log_det_d;
    let loglik = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_sigma + quad);
    Ok(LowRankLik { loglik, beta })
}

/// Joint flat-trend posterior of `(β, θ)`, factored once and then queried per
/// prediction. Equivalent to universal kriging on the implied covariance.
pub struct LowRankPosterior {
    /// Lower-triangular transpose of the QR triangle of the stacked system.
    r_t: DenseMatrix,
    coef: Vec<f64>,
    pub p: usize,
    pub k: usize,
}

pub fn lowrank_posterior(
    h_rows: &[Vec<(usize, f64)>],
    k: usize,
    d: &[f64],
    prior: &PriorPrecision,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankPosterior> {
    let n = y.len();
    let p = design.cols();
    let total = p + k;
    let g = prior.sqrt_rows(k)?;

    // Stacked rows: weighted data on top, prior square root below.
    let mut c = DenseMatrix::zeros(n + k, total);
    let mut rhs = vec![0.0; n + k];
    for i in 0..n {
        let w = 1.0 / d[i].sqrt();
        for j in 0..p {
            c.set(i, j, design.get(i, j) * w);
        }
        for &(a, va) in &h_rows[i] {
            c.set(i, p + a, va * w);
        }
        rhs[i] = y[i] * w;
    }
    for r in 0..k {
        for j in 0..k {
            let v = g.get(r, j);
            if v != 0.0 {
                c.set(n + r, p + j, v);
            }
        }
    }
    let (r, q_rhs) = qr_factor(c, &rhs);
    let r_t = r.transpose();
    // Back substitution R coef = Qᵀ rhs through the lower transpose.
    let coef = r_t.triangular_solve(&q_rhs, true)?;
    Ok(LowRankPosterior { r_t, coef, p, k })
}

impl LowRankPosterior {
    pub fn beta(&self) -> &[f64] {
        &self.coef[..self.p]
    }

    pub fn theta(&self) -> &[f64] {
        &self.coef[self.p..]
    }

    /// Predictive mean and variance of `x0'β + h0'θ` plus independent noise
    /// variance `d0` at the target.
    pub fn predict(&self, x0: &[f64], h0: &[(usize, f64)], d0: f64) -> Result<(f64, f64)> {
        let mut v = vec![0.0; self.p + self.k];
        v[..self.p].copy_from_slice(x0);
        for &(j, w) in h0 {
            v[self.p + j] = w;
        }
        let mean: f64 = v.iter().zip(&self.coef).map(|(a, b)| a * b).sum();
        let z = self.r_t.triangular_solve(&v, false)?;
        let var: f64 = z.iter().map(|t| t * t).sum::<f64>() + d0;
        Ok((mean, var.max(0.0)))
    }
}
