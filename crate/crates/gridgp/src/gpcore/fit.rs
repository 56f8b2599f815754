//! Profile log-likelihood and maximum-likelihood fitting for the exact model.

use crate::error::{Error, Result};
use crate::numerics::{nelder_mead, DenseMatrix};

use super::{cov_matrix, CovarianceSpec, SpatialDataset};

/// Whitened generalized-least-squares state shared by likelihood evaluation
/// and kriging: everything downstream needs only `L`, `Z = L⁻¹X`, the small
/// normal-equations factor, and the whitened residual.
pub struct WhitenedGls {
    pub chol: DenseMatrix,
    pub z_design: DenseMatrix,
    pub m_chol: DenseMatrix,
    pub beta: Vec<f64>,
    pub resid_white: Vec<f64>,
    pub log_det: f64,
    pub n: usize,
}

impl WhitenedGls {
    /// Factor `sigma`, whiten the design and data, and profile the trend
    /// coefficients by GLS.
    pub fn new(sigma: DenseMatrix, design: &DenseMatrix, y: &[f64]) -> Result<Self> {
        let n = y.len();
        let p = design.cols();
        let chol = sigma.cholesky()?;
        let log_det = chol.cholesky_logdet();

        let mut z_design = DenseMatrix::zeros(n, p);
        for j in 0..p {
            let col = chol.triangular_solve(design.col(j), false)?;
            z_design.col_mut(j).copy_from_slice(&col);
        }
        let z_y = chol.triangular_solve(y, false)?;

        // P×P normal equations in the whitened space.
        let mut m = DenseMatrix::zeros(p, p);
        for a in 0..p {
            for b in 0..=a {
                let v = crate::numerics::dot(z_design.col(a), z_design.col(b));
                m.set(a, b, v);
                m.set(b, a, v);
            }
        }
        let m_chol = m.cholesky()?;
        let zty: Vec<f64> = (0..p)
            .map(|j| crate::numerics::dot(z_design.col(j), &z_y))
            .collect();
        let beta = m_chol.cholesky_solve(&zty)?;

        let mut resid_white = z_y;
        for j in 0..p {
            let bj = beta[j];
            for (r, zj) in resid_white.iter_mut().zip(z_design.col(j)) {
                *r -= bj * zj;
            }
        }
        Ok(Self { chol, z_design, m_chol, beta, resid_white, log_det, n })
    }

    /// Gaussian log-likelihood at the profiled trend.
    pub fn loglik(&self) -> f64 {
        let quad: f64 = self.resid_white.iter().map(|r| r * r).sum();
        -0.5 * (self.n as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + quad)
    }
}

/// Exact Gaussian log-likelihood of the observed cells under `spec`, with the
/// trend coefficients profiled out by generalized least squares.
pub fn loglik(dataset: &SpatialDataset, spec: &CovarianceSpec) -> Result<f64> {
    spec.validate()?;
    let locs = dataset.observed_locations();
    if locs.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);
    let sigma = cov_matrix(spec, &locs);
    Ok(WhitenedGls::new(sigma, &design, &y)?.loglik())
}

/// Controls for the simplex search over log parameters.
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    pub tol: f64,
    pub max_eval: usize,
    pub init_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_eval: 2000, init_step: 0.4 }
    }
}

/// A fitted covariance specification with its profiled trend.
#[derive(Clone, Debug)]
pub struct GpFit {
    pub spec: CovarianceSpec,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

const MIN_LOG: f64 = -27.6; // exp ≈ 1e-12; keeps the nugget from vanishing entirely

/// Maximize the likelihood over `(partial_sill, range, nugget)` on the log
/// scale with a derivative-free simplex. Never returns a configuration worse
/// than `init`; when the evaluation budget runs out the best-so-far comes
/// back with `converged = false`.
pub fn fit_ml(dataset: &SpatialDataset, init: &CovarianceSpec, opts: FitOptions) -> Result<GpFit> {
    init.validate()?;
    if dataset.n_observed() < 10 {
        return Err(Error::InsufficientPoints { requested: 10, available: dataset.n_observed() });
    }
    let locs = dataset.observed_locations();
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);

    let eval = |p: &[f64]| -> f64 {
        let spec = spec_from_log(p);
        let sigma = cov_matrix(&spec, &locs);
        match WhitenedGls::new(sigma, &design, &y) {
            Ok(gls) => -gls.loglik(),
            Err(_) => f64::INFINITY,
        }
    };

    let x0 = [
        init.partial_sill.max(1e-12).ln(),
        init.range.ln(),
        init.nugget.max(1e-12).ln(),
    ];
    let res = nelder_mead(eval, &x0, opts.init_step, opts.tol, opts.max_eval);
    let spec = spec_from_log(&res.x);
    let sigma = cov_matrix(&spec, &locs);
    let gls = WhitenedGls::new(sigma, &design, &y)?;
    Ok(GpFit {
        spec,
        beta: gls.beta.clone(),
        loglik: gls.loglik(),
        converged: res.converged,
        evaluations: res.evaluations,
    })
}

fn spec_from_log(p: &[f64]) -> CovarianceSpec {
    CovarianceSpec::new(
        p[0].clamp(MIN_LOG, 60.0).exp(),
        p[1].clamp(MIN_LOG, 60.0).exp(),
        p[2].clamp(MIN_LOG, 60.0).exp(),
    )
}
