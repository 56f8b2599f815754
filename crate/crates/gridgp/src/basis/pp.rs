//! Modified predictive processes: the parent process is projected onto its
//! conditional expectation given a small knot set, and the projection's
//! variance deficit is returned as an independent fine-scale component so the
//! latent marginal variance matches the parent exactly. Because the induced
//! basis is the cross-covariance to the knots, it is rebuilt whenever the
//! covariance parameters move.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gpcore::{
    CovarianceSpec, FitOptions, Location, PredictionResult, PredictionRow, SpatialDataset,
};
use crate::numerics::{nelder_mead, DenseMatrix};

use super::lowrank::{lowrank_loglik, lowrank_posterior, LowRankLik, LowRankPosterior, PriorPrecision};

/// Knot locations inducing the low-rank projection.
#[derive(Clone, Debug)]
pub struct KnotSet {
    pub knots: Vec<Location>,
}

/// Regular grid of about `k` knots over the bounding box of `locs`, or a
/// Lloyd k-means refinement of that grid when `kmeans` is set.
pub fn make_knots(locs: &[Location], k: usize, kmeans: bool, seed: u64) -> KnotSet {
    let (mut lon_lo, mut lon_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in locs {
        lon_lo = lon_lo.min(l.lon);
        lon_hi = lon_hi.max(l.lon);
        lat_lo = lat_lo.min(l.lat);
        lat_hi = lat_hi.max(l.lat);
    }
    let aspect = ((lon_hi - lon_lo) / (lat_hi - lat_lo).max(1e-9)).max(1e-9);
    let rows = ((k as f64 / aspect).sqrt().round() as usize).max(1);
    let cols = ((k + rows - 1) / rows).max(1);
    let mut knots = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            // Cell midpoints keep the knots interior.
            let lon = lon_lo + (lon_hi - lon_lo) * (j as f64 + 0.5) / cols as f64;
            let lat = lat_lo + (lat_hi - lat_lo) * (i as f64 + 0.5) / rows as f64;
            knots.push(Location::new(lon, lat));
        }
    }
    if !kmeans {
        return KnotSet { knots };
    }
    // Lloyd iterations seeded from the grid.
    use rand::SeedableRng;
    let _rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let mut sums = vec![(0.0, 0.0, 0usize); knots.len()];
        for l in locs {
            let nearest = knots
                .iter()
                .enumerate()
                .min_by(|a, b| l.distance(a.1).partial_cmp(&l.distance(b.1)).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            sums[nearest].0 += l.lon;
            sums[nearest].1 += l.lat;
            sums[nearest].2 += 1;
        }
        for (knot, (slon, slat, count)) in knots.iter_mut().zip(&sums) {
            if *count > 0 {
                *knot = Location::new(slon / *count as f64, slat / *count as f64);
            }
        }
    }
    KnotSet { knots }
}

/// The induced basis at a set of locations: `H = R_nk R_kk^{-1}` on the
/// correlation scale, plus the per-location variance deficit
/// `sigma_w^2 (1 - r' R_kk^{-1} r) >= 0`.
pub struct PpBasis {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub deficit: Vec<f64>,
    pub r_kk_chol: DenseMatrix,
    pub log_det_rkk: f64,
    pub k: usize,
}

fn correlation(spec: &CovarianceSpec, d: f64) -> f64 {
    (-d / spec.range).exp()
}

/// Build the induced basis for `spec` at `locs`.
pub fn pp_build(knots: &KnotSet, spec: &CovarianceSpec, locs: &[Location]) -> Result<PpBasis> {
    let k = knots.knots.len();
    let mut r_kk = DenseMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let v = if a == b {
                1.0
            } else {
                correlation(spec, knots.knots[a].distance(&knots.knots[b]))
            };
            r_kk.set(a, b, v);
        }
    }
    let r_kk_chol = r_kk.cholesky()?;
    let log_det_rkk = r_kk_chol.cholesky_logdet();
    let built: Result<Vec<(Vec<(usize, f64)>, f64)>> = locs
        .par_iter()
        .map(|s| {
            let r: Vec<f64> = knots
                .knots
                .iter()
                .map(|u| correlation(spec, u.distance(s)))
                .collect();
            let h = r_kk_chol.cholesky_solve(&r)?;
            let explained: f64 = r.iter().zip(&h).map(|(a, b)| a * b).sum();
            let deficit = spec.partial_sill * (1.0 - explained).max(0.0);
            Ok((h.into_iter().enumerate().collect(), deficit))
        })
        .collect();
    let mut rows = Vec::with_capacity(locs.len());
    let mut deficit = Vec::with_capacity(locs.len());
    for (row, def) in built? {
        rows.push(row);
        deficit.push(def);
    }
    Ok(PpBasis { rows, deficit, r_kk_chol, log_det_rkk, k })
}

/// Noise floor keeping the diagonal invertible when the nugget and the
/// deficit both vanish (saturated knots).
const DIAG_FLOOR_REL: f64 = 1e-12;

fn pp_prior(basis: &PpBasis, spec: &CovarianceSpec) -> Result<(DenseMatrix, f64)> {
    let k = basis.k;
    // Prior precision: (sigma_w^2 R_kk)^{-1}.
    let mut q = DenseMatrix::zeros(k, k);
    for j in 0..k {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let col = basis.r_kk_chol.cholesky_solve(&e)?;
        for i in 0..k {
            q.set(i, j, col[i] / spec.partial_sill);
        }
    }
    let log_det_cov = k as f64 * spec.partial_sill.ln() + basis.log_det_rkk;
    Ok((q, log_det_cov))
}

fn pp_diag(basis: &PpBasis, spec: &CovarianceSpec) -> Vec<f64> {
    let floor = DIAG_FLOOR_REL * spec.sill();
    basis
        .deficit
        .iter()
        .map(|&def| (spec.nugget + def).max(floor))
        .collect()
}

fn pp_eval(
    basis: &PpBasis,
    spec: &CovarianceSpec,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankLik> {
    let (q, log_det_cov) = pp_prior(basis, spec)?;
    let prior = PriorPrecision::Dense { q: &q, log_det_cov };
    lowrank_loglik(&basis.rows, basis.k, &pp_diag(basis, spec), &prior, design, y)
}

fn pp_posterior(
    basis: &PpBasis,
    spec: &CovarianceSpec,
    design: &DenseMatrix,
    y: &[f64],
) -> Result<LowRankPosterior> {
    let (q, log_det_cov) = pp_prior(basis, spec)?;
    let prior = PriorPrecision::Dense { q: &q, log_det_cov };
    lowrank_posterior(&basis.rows, basis.k, &pp_diag(basis, spec), &prior, design, y)
}

/// Predictive-process marginal log-likelihood at `spec`.
pub fn pp_loglik(train: &SpatialDataset, knots: &KnotSet, spec: &CovarianceSpec) -> Result<f64> {
    spec.validate()?;
    let locs = train.observed_locations();
    let y = train.observed_values();
    let design = train.trend.kind.design_matrix(&locs);
    let basis = pp_build(knots, spec, &locs)?;
    Ok(pp_eval(&basis, spec, &design, &y)?.loglik)
}

/// A fitted modified predictive process.
pub struct PpFit {
    pub knots: KnotSet,
    pub spec: CovarianceSpec,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    posterior: LowRankPosterior,
}

#[derive(Clone, Debug)]
pub struct PpParams {
    pub knots: usize,
    pub kmeans_knots: bool,
    pub init: CovarianceSpec,
    pub fit_opts: FitOptions,
    pub seed: u64,
}

/// Fit the three covariance parameters by maximum marginal likelihood; the
/// induced basis is rebuilt at every evaluation.
pub fn pp_fit(dataset: &SpatialDataset, params: &PpParams) -> Result<PpFit> {
    params.init.validate()?;
    let locs = dataset.observed_locations();
    if locs.len() < 10 {
        return Err(Error::InsufficientPoints { requested: 10, available: locs.len() });
    }
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);
    let knots = make_knots(&locs, params.knots, params.kmeans_knots, params.seed);

    let obj = |p: &[f64]| -> f64 {
        let spec = CovarianceSpec::new(p[0].exp(), p[1].exp(), p[2].exp());
        match pp_build(&knots, &spec, &locs).and_then(|b| pp_eval(&b, &spec, &design, &y)) {
            Ok(e) => -e.loglik,
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = [
        params.init.partial_sill.max(1e-12).ln(),
        params.init.range.ln(),
        params.init.nugget.max(1e-12).ln(),
    ];
    let res = nelder_mead(
        obj,
        &x0,
        params.fit_opts.init_step,
        params.fit_opts.tol,
        params.fit_opts.max_eval,
    );
    let spec = CovarianceSpec::new(res.x[0].exp(), res.x[1].exp(), res.x[2].exp());
    let basis = pp_build(&knots, &spec, &locs)?;
    let lik = pp_eval(&basis, &spec, &design, &y)?;
    let posterior = pp_posterior(&basis, &spec, &design, &y)?;
    Ok(PpFit {
        knots,
        spec,
        beta: lik.beta,
        loglik: lik.loglik,
        converged: res.converged,
        posterior,
    })
}

/// Predict test locations from a fitted modified predictive process.
pub fn pp_predict(
    fit: &PpFit,
    trend: &crate::gpcore::TrendKind,
    test: &[Location],
) -> Result<PredictionResult> {
    let test_basis = pp_build(&fit.knots, &fit.spec, test)?;
    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .enumerate()
        .map(|(i, s0)| {
            let x0 = trend.design_row(s0);
            let d0 = fit.spec.nugget + test_basis.deficit[i];
            let (mean, var) = fit.posterior.predict(&x0, &test_basis.rows[i], d0)?;
            Ok(PredictionRow::gaussian(*s0, mean, var))
        })
        .collect();
    Ok(PredictionResult::new("pred-proc", rows?))
}
