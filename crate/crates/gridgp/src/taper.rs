//! Covariance tapering: the exponential covariance is multiplied by a
//! compactly supported Wendland correlation, the resulting sparse system is
//! factored once, and both the one-taper likelihood and kriging run on it.
//! Parameters are fitted cheaply by weighted least squares against empirical
//! covariances of the gridded residuals.

use rayon::prelude::*;

use crate::basis::kernels::eval_wendland;
use crate::error::{Error, Result};
use crate::gpcore::{
    cov_value, CovarianceSpec, Location, PredictionResult, PredictionRow, SpatialDataset,
};
use crate::numerics::{golden_section, sparse_cholesky, DenseMatrix, KdTree, SparseFactor, SparseMatrix};

/// Taper correlation: Wendland polynomial scaled to reach zero at `gamma`.
#[derive(Clone, Copy, Debug)]
pub struct TaperSpec {
    /// Taper range in degrees; pairs farther apart are exactly independent.
    pub gamma: f64,
}

impl TaperSpec {
    pub fn new(gamma: f64) -> Self {
        debug_assert!(gamma > 0.0);
        Self { gamma }
    }

    #[inline]
    pub fn value(&self, d: f64) -> f64 {
        eval_wendland(d / self.gamma)
    }
}

/// Empirical covariance estimates on a set of grid offsets.
#[derive(Clone, Debug)]
pub struct EmpiricalCovariance {
    /// (row offset, col offset) in cells.
    pub offsets: Vec<(isize, isize)>,
    /// Euclidean length of each offset in degrees.
    pub distances: Vec<f64>,
    pub estimates: Vec<f64>,
    pub pair_counts: Vec<usize>,
}

/// Hadamard product of the exponential covariance and the taper, stored
/// lower-triangular. Positive definite by the Schur product theorem.
pub fn build_tapered_cov(
    locs: &[Location],
    spec: &CovarianceSpec,
    taper: &TaperSpec,
) -> SparseMatrix {
    let n = locs.len();
    let pts: Vec<[f64; 2]> = locs.iter().map(|l| l.coords()).collect();
    let tree = KdTree::build(&pts);
    let cols: Vec<Vec<(usize, usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut entries = vec![(j, j, spec.sill())];
            for (i, d) in tree.within_radius(pts[j], taper.gamma) {
                if i > j && d < taper.gamma {
                    let v = cov_value(spec, d, false) * taper.value(d);
                    entries.push((i, j, v));
                }
            }
            entries
        })
        .collect();
    let triplets: Vec<(usize, usize, f64)> = cols.into_iter().flatten().collect();
    SparseMatrix::from_triplets(n, &triplets, true)
}

struct TaperedGls {
    factor: SparseFactor,
    beta: Vec<f64>,
    /// Σ⁻¹(y − Xβ̂).
    resid_solved: Vec<f64>,
    /// (XᵀΣ⁻¹X) Cholesky, for the trend-uncertainty term.
    xtsx_chol: DenseMatrix,
    design: DenseMatrix,
    quad: f64,
    n: usize,
}

fn tapered_gls(train: &SpatialDataset, spec: &CovarianceSpec, taper: &TaperSpec) -> Result<TaperedGls> {
    let locs = train.observed_locations();
    let n = locs.len();
    if n == 0 {
        return Err(Error::EmptyTrain);
    }
    let y = train.observed_values();
    let design = train.trend.kind.design_matrix(&locs);
    let p = design.cols();
    let sigma = build_tapered_cov(&locs, spec, taper);
    let factor = sparse_cholesky(&sigma)?;

    let solved_y = factor.solve(&y);
    let solved_x: Vec<Vec<f64>> = (0..p).map(|j| factor.solve(design.col(j))).collect();
    let mut xtsx = DenseMatrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let v = crate::numerics::dot(design.col(a), &solved_x[b]);
            xtsx.set(a, b, v);
            xtsx.set(b, a, v);
        }
        xty[a] = crate::numerics::dot(design.col(a), &solved_y);
    }
    let xtsx_chol = xtsx.cholesky()?;
    let beta = xtsx_chol.cholesky_solve(&xty)?;

    let mut resid_solved = solved_y;
    for j in 0..p {
        let bj = beta[j];
        for (r, s) in resid_solved.iter_mut().zip(&solved_x[j]) {
            *r -= bj * s;
        }
    }
    // rᵀ Σ⁻¹ r with r = y − Xβ̂, using Σ⁻¹r already in hand.
    let mut quad = crate::numerics::dot(&y, &resid_solved);
    for j in 0..p {
        quad -= beta[j] * crate::numerics::dot(design.col(j), &resid_solved);
    }
    Ok(TaperedGls { factor, beta, resid_solved, xtsx_chol, design, quad, n })
}

/// One-taper Gaussian log-likelihood: the exact density with `Σ` replaced by
/// `Σ ⊙ T`, trend profiled by GLS.
pub fn taper_loglik(train: &SpatialDataset, spec: &CovarianceSpec, taper: &TaperSpec) -> Result<f64> {
    spec.validate()?;
    let gls = tapered_gls(train, spec, taper)?;
    Ok(-0.5
        * (gls.n as f64 * (2.0 * std::f64::consts::PI).ln() + gls.factor.log_det() + gls.quad))
}

/// Method-of-moments covariance estimates at gridded offsets of the OLS
/// residuals. Offsets with no complete pair are dropped.
pub fn empirical_cov_gridded(
    dataset: &SpatialDataset,
    max_lag_cells: usize,
    target_lags: usize,
) -> Result<EmpiricalCovariance> {
    let g = &dataset.geometry;
    let (dlon, dlat) = g.spacing();

    // OLS trend removal.
    let locs = dataset.observed_locations();
    if locs.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let y = dataset.observed_values();
    let x = dataset.trend.kind.design_matrix(&locs);
    let p = x.cols();
    let mut xtx = DenseMatrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let v = crate::numerics::dot(x.col(a), x.col(b));
            xtx.set(a, b, v);
            xtx.set(b, a, v);
        }
        xty[a] = crate::numerics::dot(x.col(a), &y);
    }
    let beta = xtx.cholesky()?.cholesky_solve(&xty)?;

    let mut resid: Vec<Option<f64>> = vec![None; g.cell_count()];
    for (k, &idx) in dataset.observed_indices().iter().enumerate() {
        let fitted: f64 = dataset
            .trend
            .kind
            .design_row(&locs[k])
            .iter()
            .zip(&beta)
            .map(|(a, b)| a * b)
            .sum();
        resid[idx] = Some(y[k] - fitted);
    }

    // Half-plane offsets within the radius, thinned deterministically but
    // always keeping lag zero.
    let m = max_lag_cells as isize;
    let mut offsets: Vec<(isize, isize)> = Vec::new();
    for dr in 0..=m {
        let lo = if dr == 0 { 0 } else { -m };
        for dc in lo..=m {
            let len2 = (dr * dr + dc * dc) as f64;
            if len2 <= (m * m) as f64 {
                offsets.push((dr, dc));
            }
        }
    }
    offsets.sort_by(|a, b| {
        let la = a.0 * a.0 + a.1 * a.1;
        let lb = b.0 * b.0 + b.1 * b.1;
        la.cmp(&lb).then(a.cmp(b))
    });
    // The shortest offsets carry the nugget signal; never thin those.
    if offsets.len() > target_lags && target_lags > 1 {
        let near_end = offsets.partition_point(|o| o.0 * o.0 + o.1 * o.1 <= 9);
        if near_end < target_lags {
            let far = &offsets[near_end..];
            let want = target_lags - near_end;
            let stride = (far.len() + want - 1) / want;
            let kept: Vec<(isize, isize)> = far
                .iter()
                .enumerate()
                .filter(|(i, _)| i % stride == 0)
                .map(|(_, &o)| o)
                .collect();
            offsets.truncate(near_end);
            offsets.extend(kept);
        } else {
            offsets.truncate(near_end.max(target_lags));
        }
    }

    let results: Vec<Option<(f64, usize)>> = offsets
        .par_iter()
        .map(|&(dr, dc)| {
            let mut acc = 0.0;
            let mut count = 0usize;
            for r in 0..g.n_rows as isize {
                let r2 = r + dr;
                if r2 < 0 || r2 >= g.n_rows as isize {
                    continue;
                }
                for c in 0..g.n_cols as isize {
                    let c2 = c + dc;
                    if c2 < 0 || c2 >= g.n_cols as isize {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (
                        resid[g.index_of(r as usize, c as usize)],
                        resid[g.index_of(r2 as usize, c2 as usize)],
                    ) {
                        acc += a * b;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                None
            } else {
                Some((acc / count as f64, count))
            }
        })
        .collect();

    let mut out = EmpiricalCovariance {
        offsets: Vec::new(),
        distances: Vec::new(),
        estimates: Vec::new(),
        pair_counts: Vec::new(),
    };
    for (&(dr, dc), res) in offsets.iter().zip(results) {
        if let Some((est, count)) = res {
            out.offsets.push((dr, dc));
            out.distances
                .push(((dc as f64 * dlon).powi(2) + (dr as f64 * dlat).powi(2)).sqrt());
            out.estimates.push(est);
            out.pair_counts.push(count);
        }
    }
    if out.offsets.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(out)
}

/// Result of the least-squares covariance fit.
#[derive(Clone, Debug)]
pub struct TaperFit {
    pub spec: CovarianceSpec,
    pub converged: bool,
    pub weighted_sse: f64,
}

/// Weighted least squares of `(partial_sill, range, nugget)` against the
/// empirical covariances: the nugget only enters the lag-zero estimate, the
/// weights are the pair counts, and the range is profiled by a golden-section
/// search. A fit pushed to the search boundary is flagged unconverged.
pub fn taper_fit(emp: &EmpiricalCovariance, domain_diameter: f64) -> Result<TaperFit> {
    let n_distinct = {
        let mut d: Vec<f64> = emp.distances.clone();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        d.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        d.len()
    };
    if n_distinct < 3 {
        return Err(Error::InsufficientPoints { requested: 3, available: n_distinct });
    }

    let wls = |phi: f64| -> (f64, f64, f64) {
        // Columns: exp(-d/phi) and the lag-zero indicator.
        let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..emp.distances.len() {
            let w = emp.pair_counts[i] as f64;
            let e1 = (-emp.distances[i] / phi).exp();
            let e2 = if emp.distances[i] == 0.0 { 1.0 } else { 0.0 };
            s11 += w * e1 * e1;
            s12 += w * e1 * e2;
            s22 += w * e2 * e2;
            b1 += w * e1 * emp.estimates[i];
            b2 += w * e2 * emp.estimates[i];
        }
        let det = s11 * s22 - s12 * s12;
        let (mut sill, mut nugget) = if det.abs() > 1e-12 {
            ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det)
        } else {
            (b1 / s11.max(1e-300), 0.0)
        };
        if nugget < 0.0 {
            nugget = 0.0;
            sill = b1 / s11.max(1e-300);
        }
        if sill < 0.0 {
            sill = 0.0;
        }
        let mut sse = 0.0;
        for i in 0..emp.distances.len() {
            let w = emp.pair_counts[i] as f64;
            let fit = sill * (-emp.distances[i] / phi).exp()
                + if emp.distances[i] == 0.0 { nugget } else { 0.0 };
            sse += w * (emp.estimates[i] - fit).powi(2);
        }
        (sse, sill, nugget)
    };

    let (lo, hi) = ((1e-3 * domain_diameter).ln(), (10.0 * domain_diameter).ln());
    let log_phi = golden_section(|lp| wls(lp.exp()).0, lo, hi, 1e-10);
    let phi = log_phi.exp();
    let (sse, sill, nugget) = wls(phi);

    let at_boundary = log_phi - lo < 0.05 || hi - log_phi < 0.05;
    let degenerate = sill <= 0.0;
    let spec = CovarianceSpec::new(sill.max(1e-12), phi, nugget.max(0.0));
    Ok(TaperFit { spec, converged: !(at_boundary || degenerate), weighted_sse: sse })
}

/// Kriging with the tapered covariance substituted throughout: the factored
/// sparse system serves every test point, and cross-covariances are tapered
/// identically to the training covariance.
pub fn taper_predict(
    train: &SpatialDataset,
    test: &[Location],
    spec: &CovarianceSpec,
    taper: &TaperSpec,
) -> Result<PredictionResult> {
    spec.validate()?;
    let gls = tapered_gls(train, spec, taper)?;
    let locs = train.observed_locations();
    let pts: Vec<[f64; 2]> = locs.iter().map(|l| l.coords()).collect();
    let tree = KdTree::build(&pts);
    let p = gls.beta.len();
    let n = gls.n;
    let sill = spec.sill();

    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s0| {
            let nbrs = tree.within_radius(s0.coords(), taper.gamma);
            let x0 = train.trend.kind.design_row(s0);
            let mean_trend: f64 = x0.iter().zip(&gls.beta).map(|(a, b)| a * b).sum();
            if nbrs.is_empty() {
                // Beyond the taper range of every observation: trend mean,
                // full variance plus trend uncertainty.
                let mu = gls.xtsx_chol.cholesky_solve(&x0)?;
                let trend_term: f64 = x0.iter().zip(&mu).map(|(a, b)| a * b).sum();
                return Ok(PredictionRow::gaussian(*s0, mean_trend, sill + trend_term));
            }
            let mut c = vec![0.0; n];
            let mut mean = mean_trend;
            for &(i, d) in &nbrs {
                let v = cov_value(spec, d, false) * taper.value(d);
                c[i] = v;
                mean += v * gls.resid_solved[i];
            }
            let z = gls.factor.solve(&c);
            let cz: f64 = nbrs.iter().map(|&(i, _)| c[i] * z[i]).sum();
            let mut u = x0.clone();
            for j in 0..p {
                u[j] -= crate::numerics::dot(gls.design.col(j), &z);
            }
            let mu = gls.xtsx_chol.cholesky_solve(&u)?;
            let trend_term: f64 = u.iter().zip(&mu).map(|(a, b)| a * b).sum();
            Ok(PredictionRow::gaussian(*s0, mean, sill - cz + trend_term))
        })
        .collect();
    let mut result = PredictionResult::new("taper", rows?);
    result.warnings = Vec::new();
    Ok(result)
}
