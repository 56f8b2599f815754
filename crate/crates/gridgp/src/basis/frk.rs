//! Fixed-rank kriging: bisquare multiresolution basis with dense per-
//! resolution exponential coefficient blocks, an uncorrelated fine-scale
//! process, and measurement error. Everything runs through the shared
//! low-rank machinery, so fitting stays K×K no matter how large N grows.

use rayon::prelude::*;

use crate::error::Result;
use crate::gpcore::{FitOptions, Location, PredictionResult, PredictionRow, SpatialDataset};
use crate::numerics::{nelder_mead, DenseMatrix};

use super::lowrank::{lowrank_loglik, lowrank_posterior, LowRankPosterior, PriorPrecision};
use super::system::{build_basis, BasisFamily, BasisSystem};

#[derive(Clone, Debug)]
pub struct FrkParams {
    pub resolutions: usize,
    /// Center spacing of the coarsest resolution, degrees.
    pub coarsest_spacing: f64,
    /// Aperture as a multiple of center spacing.
    pub overlap: f64,
    /// Known measurement-error variance; estimated jointly with the
    /// fine-scale variance when absent (the two are not separable from the
    /// marginal likelihood, so only their sum is identified).
    pub fixed_noise: Option<f64>,
    pub fit_opts: FitOptions,
}

impl Default for FrkParams {
    fn default() -> Self {
        Self {
            resolutions: 3,
            coarsest_spacing: 1.0,
            overlap: 1.5,
            fixed_noise: None,
            fit_opts: FitOptions { tol: 1e-5, max_eval: 900, ..Default::default() },
        }
    }
}

/// A fitted FRK model.
pub struct FrkFit {
    pub basis: BasisSystem,
    /// Per-resolution coefficient variances.
    pub block_vars: Vec<f64>,
    /// Per-resolution coefficient correlation ranges.
    pub block_ranges: Vec<f64>,
    /// Fine-scale plus measurement variance (the identified sum).
    pub diag_var: f64,
    /// Split of `diag_var` when the measurement variance was supplied.
    pub fine_scale_var: f64,
    pub noise_var: f64,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    posterior: LowRankPosterior,
}

/// Dense block-diagonal prior precision from per-resolution exponential
/// covariance blocks; returns the precision and log|S|.
fn block_prior(
    basis: &BasisSystem,
    block_vars: &[f64],
    block_ranges: &[f64],
) -> Result<(DenseMatrix, f64)> {
    let k = basis.total;
    let mut q = DenseMatrix::zeros(k, k);
    let mut log_det_cov = 0.0;
    for (r, res) in basis.resolutions.iter().enumerate() {
        let kr = res.centers.len();
        let mut block = DenseMatrix::zeros(kr, kr);
        for a in 0..kr {
            for b in 0..kr {
                let d = res.centers[a].distance(&res.centers[b]);
                block.set(a, b, block_vars[r] * (-d / block_ranges[r]).exp());
            }
        }
        let chol = block.cholesky()?;
        log_det_cov += chol.cholesky_logdet();
        // Invert the block through its factor.
        for b in 0..kr {
            let mut e = vec![0.0; kr];
            e[b] = 1.0;
            let col = chol.cholesky_solve(&e)?;
            for a in 0..kr {
                q.set(res.offset + a, res.offset + b, col[a]);
            }
        }
    }
    Ok((q, log_det_cov))
}

fn frk_loglik(
    h_rows: &[Vec<(usize, f64)>],
    basis: &BasisSystem,
    block_vars: &[f64],
    block_ranges: &[f64],
    diag_var: f64,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<super::lowrank::LowRankLik> {
    let (q, log_det_cov) = block_prior(basis, block_vars, block_ranges)?;
    let prior = PriorPrecision::Dense { q: &q, log_det_cov };
    let d = vec![diag_var; y.len()];
    lowrank_loglik(h_rows, basis.total, &d, &prior, design, y)
}

/// Fit the FRK model by marginal maximum likelihood over the block variances,
/// block ranges, and the diagonal variance (unless the measurement variance
/// was supplied and the fine-scale variance alone is searched).
pub fn frk_fit(dataset: &SpatialDataset, params: &FrkParams) -> Result<FrkFit> {
    let basis = build_basis(
        (dataset.geometry.lon_min, dataset.geometry.lon_max),
        (dataset.geometry.lat_min, dataset.geometry.lat_max),
        params.resolutions,
        BasisFamily::Bisquare,
        params.coarsest_spacing,
        params.overlap,
        0.0,
    );
    let locs = dataset.observed_locations();
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);
    let h_rows: Vec<Vec<(usize, f64)>> = locs.par_iter().map(|s| basis.eval_row(s)).collect();

    let r_count = params.resolutions;
    let var_y = {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64
    };

    // Log-parameter vector: [tau^2_r ..., phi_r ..., diag].
    let mut x0 = Vec::with_capacity(2 * r_count + 1);
    for _ in 0..r_count {
        x0.push((var_y / r_count as f64).ln());
    }
    for r in 0..r_count {
        x0.push((2.0 * basis.resolutions[r].spacing).ln());
    }
    let fit_diag = params.fixed_noise.is_none();
    if fit_diag {
        x0.push((0.1 * var_y).max(1e-8).ln());
    } else {
        x0.push((params.fixed_noise.unwrap().max(1e-8)).ln());
    }

    let unpack = |p: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
        let tv: Vec<f64> = (0..r_count).map(|i| p[i].exp()).collect();
        let tr: Vec<f64> = (0..r_count).map(|i| p[r_count + i].exp()).collect();
        (tv, tr, p[2 * r_count].exp())
    };
    let eval_obj = |p: &[f64]| -> f64 {
        let (tv, tr, diag) = unpack(p);
        let diag = if fit_diag { diag } else { params.fixed_noise.unwrap() };
        match frk_loglik(&h_rows, &basis, &tv, &tr, diag.max(1e-10), &design, &y) {
            Ok(e) => -e.loglik,
            Err(_) => f64::INFINITY,
        }
    };
    let res = nelder_mead(
        eval_obj,
        &x0,
        params.fit_opts.init_step,
        params.fit_opts.tol,
        params.fit_opts.max_eval,
    );
    let (block_vars, block_ranges, diag_fit) = unpack(&res.x);
    let diag_var = if fit_diag { diag_fit } else { params.fixed_noise.unwrap() };
    let lik = frk_loglik(&h_rows, &basis, &block_vars, &block_ranges, diag_var, &design, &y)?;
    let (q, log_det_cov) = block_prior(&basis, &block_vars, &block_ranges)?;
    let prior = PriorPrecision::Dense { q: &q, log_det_cov };
    let d = vec![diag_var; y.len()];
    let posterior = lowrank_posterior(&h_rows, basis.total, &d, &prior, &design, &y)?;
    let (fine, noise) = match params.fixed_noise {
        Some(n) => ((diag_var - n).max(0.0), n),
        None => (0.0, diag_var),
    };
    Ok(FrkFit {
        basis,
        block_vars,
        block_ranges,
        diag_var,
        fine_scale_var: fine,
        noise_var: noise,
        beta: lik.beta,
        loglik: lik.loglik,
        converged: res.converged,
        posterior,
    })
}

/// Predict test locations from a fitted FRK model.
pub fn frk_predict(fit: &FrkFit, trend: &crate::gpcore::TrendKind, test: &[Location]) -> Result<PredictionResult> {
    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s0| {
            let h0 = fit.basis.eval_row(s0);
            let x0 = trend.design_row(s0);
            let (mean, var) = fit.posterior.predict(&x0, &h0, fit.diag_var)?;
            Ok(PredictionRow::gaussian(*s0, mean, var))
        })
        .collect();
    Ok(PredictionResult::new("frk", rows?))
}
