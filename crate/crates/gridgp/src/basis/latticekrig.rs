//! Lattice kriging: Wendland multiresolution basis with spatial-
//! autoregression (Markov random field) coefficient priors on each center
//! lattice, basis functions normalized so the prior marginal variance is
//! exactly `sigma_w^2 * alpha_r` everywhere, and resolution weights tied to a
//! single decay exponent.

use rayon::prelude::*;

use crate::error::Result;
use crate::gpcore::{FitOptions, Location, PredictionResult, PredictionRow, SpatialDataset};
use crate::numerics::{nelder_mead, sparse_cholesky, DenseMatrix, SparseFactor, SparseMatrix};

use super::lowrank::{lowrank_loglik, lowrank_posterior, LowRankLik, LowRankPosterior, PriorPrecision};
use super::system::{build_basis, BasisFamily, BasisSystem};

#[derive(Clone, Debug)]
pub struct LkParams {
    pub resolutions: usize,
    pub coarsest_spacing: f64,
    /// Support radius as a multiple of center spacing.
    pub overlap: f64,
    /// Lattice stiffness values searched on an outer grid; the SAR center
    /// weight is `4 + kappa^2`.
    pub kappa_grid: Vec<f64>,
    pub fit_opts: FitOptions,
}

impl Default for LkParams {
    fn default() -> Self {
        Self {
            resolutions: 3,
            coarsest_spacing: 1.0,
            overlap: 2.5,
            kappa_grid: vec![0.05, 0.15, 0.5, 1.5],
            fit_opts: FitOptions { tol: 1e-5, max_eval: 300, ..Default::default() },
        }
    }
}

/// Basis plus the per-resolution lattice precisions at one stiffness value.
pub struct LkModel {
    pub basis: BasisSystem,
    pub kappa: f64,
    q_blocks: Vec<SparseMatrix>,
    q_factors: Vec<SparseFactor>,
    /// log|Q_r| for each resolution.
    q_logdets: Vec<f64>,
}

/// SAR precision on an (n_rows × n_cols) lattice: Q = B'B with center weight
/// `4 + kappa^2` and -1 on rook neighbors.
pub fn sar_precision(n_rows: usize, n_cols: usize, kappa: f64) -> SparseMatrix {
    let n = n_rows * n_cols;
    let center = 4.0 + kappa * kappa;
    let idx = |r: usize, c: usize| r * n_cols + c;
    // Row of B for each lattice node.
    let row_of = |i: usize| -> Vec<(usize, f64)> {
        let (r, c) = (i / n_cols, i % n_cols);
        let mut row = vec![(i, center)];
        if r > 0 {
            row.push((idx(r - 1, c), -1.0));
        }
        if r + 1 < n_rows {
            row.push((idx(r + 1, c), -1.0));
        }
        if c > 0 {
            row.push((idx(r, c - 1), -1.0));
        }
        if c + 1 < n_cols {
            row.push((idx(r, c + 1), -1.0));
        }
        row
    };
    // Q[i][j] = sum_k B[i,k] B[j,k]; B is symmetric so iterate its rows.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..n {
        let bi = row_of(i);
        let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for &(k, vik) in &bi {
            for (j, vkj) in row_of(k) {
                if j >= i {
                    *acc.entry(j).or_insert(0.0) += vik * vkj;
                }
            }
        }
        for (j, v) in acc {
            triplets.push((j, i, v));
        }
    }
    SparseMatrix::from_triplets(n, &triplets, true)
}

/// Build the basis and factor the lattice precisions for one kappa.
pub fn lk_model(
    lon_range: (f64, f64),
    lat_range: (f64, f64),
    params: &LkParams,
    kappa: f64,
) -> Result<LkModel> {
    let basis = build_basis(
        lon_range,
        lat_range,
        params.resolutions,
        BasisFamily::Wendland,
        params.coarsest_spacing,
        params.overlap,
        1.0,
    );
    let mut q_blocks = Vec::new();
    let mut q_factors = Vec::new();
    let mut q_logdets = Vec::new();
    for res in &basis.resolutions {
        let q = sar_precision(res.grid.0, res.grid.1, kappa);
        let f = sparse_cholesky(&q)?;
        q_logdets.push(f.log_det());
        q_blocks.push(q);
        q_factors.push(f);
    }
    Ok(LkModel { basis, kappa, q_blocks, q_factors, q_logdets })
}

impl LkModel {
    /// Normalized basis row at `s`: raw Wendland values scaled per resolution
    /// so that `Var(h_r'(s) θ_r) = sigma_w^2 alpha_r` exactly when
    /// `Var(θ_r) = sigma_w^2 alpha_r Q_r^{-1}`.
    pub fn normalized_row(&self, s: &Location) -> Vec<(usize, f64)> {
        let mut row = Vec::new();
        for (r, res) in self.basis.resolutions.iter().enumerate() {
            let local = self.basis.eval_resolution(r, s);
            if local.is_empty() {
                continue;
            }
            let kr = res.centers.len();
            let mut h = vec![0.0; kr];
            for &(j, w) in &local {
                h[j] = w;
            }
            let solved = self.q_factors[r].solve(&h);
            let v: f64 = local.iter().map(|&(j, w)| w * solved[j]).sum();
            if v <= 0.0 {
                continue;
            }
            let scale = 1.0 / v.sqrt();
            for (j, w) in local {
                row.push((res.offset + j, w * scale));
            }
        }
        row
    }

    /// Resolution weights `alpha_r ∝ r^{-nu}` normalized to sum to one.
    /// Negative exponents tilt the weight toward the finest resolutions,
    /// which rough fields need.
    pub fn alphas(&self, nu: f64) -> Vec<f64> {
        let raw: Vec<f64> = (1..=self.basis.resolutions.len())
            .map(|r| (r as f64).powf(-nu))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|a| a / total).collect()
    }

    /// Stacked prior precision `blockdiag(Q_r / (sigma_w^2 alpha_r))` and the
    /// log-determinant of the implied prior covariance.
    pub fn prior(&self, sigma_w2: f64, nu: f64) -> (SparseMatrix, f64) {
        let alphas = self.alphas(nu);
        let k = self.basis.total;
        let mut triplets = Vec::new();
        let mut log_det_cov = 0.0;
        for (r, res) in self.basis.resolutions.iter().enumerate() {
            let scale = 1.0 / (sigma_w2 * alphas[r]);
            let q = &self.q_blocks[r];
            for c in 0..q.dimension() {
                let (rows, vals) = q.col_range(c);
                for (&rr, &v) in rows.iter().zip(vals) {
                    triplets.push((res.offset + rr, res.offset + c, v * scale));
                }
            }
            let kr = res.centers.len() as f64;
            log_det_cov += kr * (sigma_w2 * alphas[r]).ln() - self.q_logdets[r];
        }
        (SparseMatrix::from_triplets(k, &triplets, true), log_det_cov)
    }
}

/// One marginal-likelihood evaluation at fixed structure.
pub fn lk_eval(
    model: &LkModel,
    h_rows: &[Vec<(usize, f64)>],
    sigma_w2: f64,
    nugget: f64,
    nu: f64,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankLik> {
    let (q, log_det_cov) = model.prior(sigma_w2, nu);
    let prior = PriorPrecision::Sparse { q: &q, log_det_cov };
    let d = vec![nugget; y.len()];
    lowrank_loglik(h_rows, model.basis.total, &d, &prior, design, y)
}

/// Posterior for prediction at fixed structure and parameters.
pub fn lk_posterior(
    model: &LkModel,
    h_rows: &[Vec<(usize, f64)>],
    sigma_w2: f64,
    nugget: f64,
    nu: f64,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankPosterior> {
    let (q, log_det_cov) = model.prior(sigma_w2, nu);
    let prior = PriorPrecision::Sparse { q: &q, log_det_cov };
    let d = vec![nugget; y.len()];
    lowrank_posterior(h_rows, model.basis.total, &d, &prior, design, y)
}

/// A fitted lattice-kriging model.
pub struct LkFit {
    pub model: LkModel,
    pub sigma_w2: f64,
    pub nugget: f64,
    pub nu: f64,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    posterior: LowRankPosterior,
}

/// Fit by maximum marginal likelihood: an outer grid over the lattice
/// stiffness (which changes the normalization, so the basis is rebuilt per
/// value) and an inner simplex over variance, nugget, and the resolution
/// decay exponent.
pub fn lk_fit(dataset: &SpatialDataset, params: &LkParams) -> Result<LkFit> {
    let locs = dataset.observed_locations();
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);
    let var_y = {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64
    };

    let mut best: Option<(f64, LkModel, Vec<f64>, bool)> = None;
    for &kappa in &params.kappa_grid {
        let model = lk_model(
            (dataset.geometry.lon_min, dataset.geometry.lon_max),
            (dataset.geometry.lat_min, dataset.geometry.lat_max),
            params,
            kappa,
        )?;
        let h_rows: Vec<Vec<(usize, f64)>> =
            locs.par_iter().map(|s| model.normalized_row(s)).collect();
        // The decay exponent is searched on the raw scale: it legitimately
        // goes negative when the fine resolutions carry the field.
        let x0 = [(0.9 * var_y).ln(), (0.1 * var_y).max(1e-8).ln(), 0.5];
        let obj = |p: &[f64]| -> f64 {
            match lk_eval(&model, &h_rows, p[0].exp(), p[1].exp(), p[2], &design, &y) {
                Ok(e) => -e.loglik,
                Err(_) => f64::INFINITY,
            }
        };
        let res = nelder_mead(
            obj,
            &x0,
            params.fit_opts.init_step,
            params.fit_opts.tol,
            params.fit_opts.max_eval,
        );
        let better = match &best {
            None => true,
            Some((v, _, _, _)) => res.value < *v,
        };
        if better {
            best = Some((res.value, model, res.x.clone(), res.converged));
        }
    }
    let (_, model, x, converged) = best.expect("kappa grid must be nonempty");
    let (sigma_w2, nugget, nu) = (x[0].exp(), x[1].exp(), x[2]);
    let locs2 = dataset.observed_locations();
    let h_rows: Vec<Vec<(usize, f64)>> =
        locs2.par_iter().map(|s| model.normalized_row(s)).collect();
    let lik = lk_eval(&model, &h_rows, sigma_w2, nugget, nu, &design, &y)?;
    let posterior = lk_posterior(&model, &h_rows, sigma_w2, nugget, nu, &design, &y)?;
    Ok(LkFit {
        model,
        sigma_w2,
        nugget,
        nu,
        beta: lik.beta,
        loglik: lik.loglik,
        converged,
        posterior,
    })
}

/// Predict from a fitted lattice-kriging model.
pub fn lk_predict(
    fit: &LkFit,
    trend: &crate::gpcore::TrendKind,
    test: &[Location],
) -> Result<PredictionResult> {
    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s0| {
            let h0 = fit.model.normalized_row(s0);
            let x0 = trend.design_row(s0);
            let (mean, var) = fit.posterior.predict(&x0, &h0, fit.nugget)?;
            Ok(PredictionRow::gaussian(*s0, mean, var))
        })
        .collect();
    Ok(PredictionResult::new("latticekrig", rows?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpcore::{simulate_gp, CovarianceSpec, GridGeometry, TrendSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn normalization_flattens_marginal_variance() {
        let params = LkParams {
            resolutions: 2,
            coarsest_spacing: 0.25,
            ..Default::default()
        };
        let model = lk_model((0.0, 1.0), (0.0, 1.0), &params, 0.3).unwrap();
        let sigma_w2 = 2.3;
        let nu = 1.1;
        let alphas = model.alphas(nu);
        let mut rng = StdRng::seed_from_u64(6);
        for _ in 0..40 {
            let s = Location::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let row = model.normalized_row(&s);
            // Per-resolution variance against a dense solve of Q_r.
            for (r, res) in model.basis.resolutions.iter().enumerate() {
                let kr = res.centers.len();
                let mut h = vec![0.0; kr];
                for &(j, w) in &row {
                    if j >= res.offset && j < res.offset + kr {
                        h[j - res.offset] = w;
                    }
                }
                let qd = model.q_blocks[r].to_dense();
                let l = qd.cholesky().unwrap();
                let solved = l.cholesky_solve(&h).unwrap();
                let v: f64 = h.iter().zip(&solved).map(|(a, b)| a * b).sum();
                let var = sigma_w2 * alphas[r] * v;
                assert!(
                    (var - sigma_w2 * alphas[r]).abs() < 1e-8,
                    "resolution {r}: variance {var} vs target {}",
                    sigma_w2 * alphas[r]
                );
            }
        }
    }

    #[test]
    fn alphas_sum_to_one_and_decay() {
        let params = LkParams { resolutions: 3, coarsest_spacing: 0.5, ..Default::default() };
        let model = lk_model((0.0, 1.0), (0.0, 1.0), &params, 0.5).unwrap();
        let a = model.alphas(1.7);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a[0] > a[1] && a[1] > a[2]);
    }

    #[test]
    fn degenerate_variance_collapses_to_trend() {
        let g = GridGeometry::new(10, 10, (0.0, 0.9), (0.0, 0.9));
        let spec = CovarianceSpec::new(1.0, 0.3, 0.2);
        let ds = simulate_gp(&g, &spec, &TrendSpec::constant_mean(7.0), 2, 20_000).unwrap();
        let params = LkParams { resolutions: 2, coarsest_spacing: 0.3, ..Default::default() };
        let model = lk_model((0.0, 0.9), (0.0, 0.9), &params, 0.3).unwrap();
        let locs = ds.observed_locations();
        let y = ds.observed_values();
        let design = ds.trend.kind.design_matrix(&locs);
        let h_rows: Vec<Vec<(usize, f64)>> =
            locs.iter().map(|s| model.normalized_row(s)).collect();
        let post = lk_posterior(&model, &h_rows, 1e-12, 0.5, 1.0, &design, &y).unwrap();
        // Posterior coefficients are crushed to zero: predictions = trend.
        let s0 = Location::new(0.44, 0.61);
        let (mean, _) = post
            .predict(&[1.0], &model.normalized_row(&s0), 0.5)
            .unwrap();
        assert!((mean - post.beta()[0]).abs() < 1e-6);
    }

    #[test]
    fn woodbury_matches_dense_for_lattice_prior() {
        let g = GridGeometry::new(12, 12, (0.0, 1.1), (0.0, 1.1));
        let spec = CovarianceSpec::new(2.0, 0.4, 0.3);
        let ds = simulate_gp(&g, &spec, &TrendSpec::constant_mean(0.0), 8, 20_000).unwrap();
        let params = LkParams { resolutions: 2, coarsest_spacing: 0.4, ..Default::default() };
        let model = lk_model((0.0, 1.1), (0.0, 1.1), &params, 0.4).unwrap();
        let locs = ds.observed_locations();
        let y = ds.observed_values();
        let design = ds.trend.kind.design_matrix(&locs);
        let h_rows: Vec<Vec<(usize, f64)>> =
            locs.iter().map(|s| model.normalized_row(s)).collect();
        let (sigma_w2, nugget, nu) = (1.7, 0.25, 1.2);
        let lik = lk_eval(&model, &h_rows, sigma_w2, nugget, nu, &design, &y).unwrap();

        // Dense: S = blockdiag(sigma_w2 alpha_r Q_r^{-1}).
        let alphas = model.alphas(nu);
        let n = y.len();
        let k = model.basis.total;
        let mut s_dense = DenseMatrix::zeros(k, k);
        for (r, res) in model.basis.resolutions.iter().enumerate() {
            let qd = model.q_blocks[r].to_dense();
            let l = qd.cholesky().unwrap();
            let kr = res.centers.len();
            for j in 0..kr {
                let mut e = vec![0.0; kr];
                e[j] = 1.0;
                let col = l.cholesky_solve(&e).unwrap();
                for i in 0..kr {
                    s_dense.set(res.offset + i, res.offset + j, sigma_w2 * alphas[r] * col[i]);
                }
            }
        }
        let mut sigma = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for &(a, va) in &h_rows[i] {
                    for &(b, vb) in &h_rows[j] {
                        acc += va * s_dense.get(a, b) * vb;
                    }
                }
                if i == j {
                    acc += nugget;
                }
                sigma.set(i, j, acc);
            }
        }
        let gls = crate::gpcore::WhitenedGls::new(sigma, &design, &y).unwrap();
        assert!(
            (lik.loglik - gls.loglik()).abs() / gls.loglik().abs() < 1e-6,
            "{} vs {}",
            lik.loglik,
            gls.loglik()
        );
    }
}
