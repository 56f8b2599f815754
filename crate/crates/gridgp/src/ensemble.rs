//! Divide-based methods. Spatial partitioning fits one covariance per
//! subregion with a trend shared across all of them, alternating parallel
//! per-block covariance updates with a closed-form generalized-least-squares
//! trend step. Metakriging fits the exact model independently on random
//! subsets and combines the subset predictive distributions through the
//! geometric median in a kernel Hilbert space, computed by Weiszfeld
//! iteration on the simplex.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::gpcore::{
    cov_matrix, fit_ml, CovarianceSpec, FitOptions, Location, PredictionResult, PredictionRow,
    SpatialDataset, WhitenedGls,
};
use crate::numerics::{nelder_mead, DenseMatrix};
use crate::scoring::se_from_interval;

/// Axis-aligned equal-count partition: lon strips cut at sample quantiles,
/// each strip cut again by lat.
#[derive(Clone, Debug)]
pub struct Partition {
    /// Subregion id per input location.
    pub assignment: Vec<usize>,
    pub n_subregions: usize,
    lon_cuts: Vec<f64>,
    lat_cuts: Vec<Vec<f64>>,
}

impl Partition {
    /// Subregion containing an arbitrary location.
    pub fn locate(&self, s: &Location) -> usize {
        let strip = self.lon_cuts.partition_point(|&c| c < s.lon);
        let cell = self.lat_cuts[strip].partition_point(|&c| c < s.lat);
        strip * (self.lat_cuts[0].len() + 1) + cell
    }
}

/// Build a partition holding roughly `target` sites per subregion.
pub fn make_partition(locs: &[Location], target: usize) -> Partition {
    assert!(target >= 50, "partition targets below 50 sites are not useful");
    let n = locs.len();
    let t = ((n as f64 / target as f64).round() as usize).max(1);

    // Split counts per axis: exact tile count, aspect as tie-break.
    let (mut lon_lo, mut lon_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lat_lo, mut lat_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for l in locs {
        lon_lo = lon_lo.min(l.lon);
        lon_hi = lon_hi.max(l.lon);
        lat_lo = lat_lo.min(l.lat);
        lat_hi = lat_hi.max(l.lat);
    }
    let aspect = ((lon_hi - lon_lo) / (lat_hi - lat_lo).max(1e-12)).max(1e-12);
    let mut best = (1usize, t);
    let mut best_key = (usize::MAX, f64::INFINITY);
    for a in 1..=t {
        let b = (t as f64 / a as f64).round().max(1.0) as usize;
        let key = (
            (a * b).abs_diff(t),
            (a as f64 / b as f64 / aspect).ln().abs(),
        );
        if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best_key = key;
            best = (a, b);
        }
    }
    let (a, b) = best;

    // Quantile cuts along lon, then per strip along lat.
    let mut by_lon: Vec<usize> = (0..n).collect();
    by_lon.sort_by(|&x, &y| {
        locs[x]
            .lon
            .partial_cmp(&locs[y].lon)
            .unwrap()
            .then(x.cmp(&y))
    });
    let mut lon_cuts = Vec::with_capacity(a - 1);
    for s in 1..a {
        let at = s * n / a;
        lon_cuts.push((locs[by_lon[at - 1]].lon + locs[by_lon[at]].lon) / 2.0);
    }
    let mut lat_cuts = vec![Vec::with_capacity(b - 1); a];
    let mut assignment = vec![0usize; n];
    for strip in 0..a {
        let lo = strip * n / a;
        let hi = (strip + 1) * n / a;
        let mut members: Vec<usize> = by_lon[lo..hi].to_vec();
        members.sort_by(|&x, &y| {
            locs[x]
                .lat
                .partial_cmp(&locs[y].lat)
                .unwrap()
                .then(x.cmp(&y))
        });
        let m = members.len();
        for s in 1..b {
            let at = s * m / b;
            lat_cuts[strip].push((locs[members[at - 1]].lat + locs[members[at]].lat) / 2.0);
        }
        for (pos, &idx) in members.iter().enumerate() {
            let cell = ((pos * b) / m).min(b - 1);
            assignment[idx] = strip * b + cell;
        }
    }
    Partition { assignment, n_subregions: a * b, lon_cuts, lat_cuts }
}

/// Per-block state retained for prediction.
struct BlockState {
    locs: Vec<Location>,
    spec: CovarianceSpec,
    chol: DenseMatrix,
    /// Σ_d^{-1} (y_d - X_d β) under the shared trend.
    resid_solved: Vec<f64>,
    /// Σ_d^{-1} X_d.
    x_solved: DenseMatrix,
}

/// Fitted partition model: shared trend, one covariance per block.
pub struct PartitionFit {
    pub partition: Partition,
    pub beta: Vec<f64>,
    pub specs: Vec<CovarianceSpec>,
    pub loglik: f64,
    /// Total objective after each alternation sweep.
    pub sweep_trace: Vec<f64>,
    pub converged: bool,
    blocks: Vec<BlockState>,
    /// Cholesky of Σ_d X_d' Σ_d^{-1} X_d across blocks.
    xtsx_chol: DenseMatrix,
    trend: crate::gpcore::TrendKind,
}

/// Block Gaussian log-likelihood at fixed trend coefficients.
fn block_loglik(
    locs: &[Location],
    resid: &[f64],
    spec: &CovarianceSpec,
) -> Result<f64> {
    let sigma = cov_matrix(spec, locs);
    let chol = sigma.cholesky()?;
    let white = chol.triangular_solve(resid, false)?;
    let quad: f64 = white.iter().map(|v| v * v).sum();
    Ok(-0.5
        * (locs.len() as f64 * (2.0 * std::f64::consts::PI).ln()
            + chol.cholesky_logdet()
            + quad))
}

/// Alternate per-block covariance updates (parallel) with the closed-form
/// shared-trend GLS until the joint objective stabilizes.
pub fn partition_fit(
    dataset: &SpatialDataset,
    partition: Partition,
    init: &CovarianceSpec,
    opts: FitOptions,
    sweeps: usize,
) -> Result<PartitionFit> {
    init.validate()?;
    let locs = dataset.observed_locations();
    let y = dataset.observed_values();
    let trend = dataset.trend.kind;
    let p = trend.rank();
    let d_count = partition.n_subregions;
    let members: Vec<Vec<usize>> = {
        let mut m = vec![Vec::new(); d_count];
        for (i, &d) in partition.assignment.iter().enumerate() {
            m[d].push(i);
        }
        m
    };
    for (d, mem) in members.iter().enumerate() {
        if mem.len() < 30 {
            return Err(Error::InsufficientPoints { requested: 30, available: mem.len() })
                .map_err(|e| {
                    let _ = d;
                    e
                });
        }
    }

    // OLS start for the shared trend.
    let design_all = trend.design_matrix(&locs);
    let mut xtx = DenseMatrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let v = crate::numerics::dot(design_all.col(a), design_all.col(b));
            xtx.set(a, b, v);
            xtx.set(b, a, v);
        }
        xty[a] = crate::numerics::dot(design_all.col(a), &y);
    }
    let mut beta = xtx.cholesky()?.cholesky_solve(&xty)?;
    let mut specs = vec![*init; d_count];
    let mut sweep_trace = Vec::with_capacity(sweeps);
    let mut converged = true;

    let block_locs: Vec<Vec<Location>> = members
        .iter()
        .map(|mem| mem.iter().map(|&i| locs[i]).collect())
        .collect();
    let block_y: Vec<Vec<f64>> = members
        .iter()
        .map(|mem| mem.iter().map(|&i| y[i]).collect())
        .collect();

    for _ in 0..sweeps {
        // (a) Per-block covariance update at fixed beta.
        let resids: Vec<Vec<f64>> = members
            .iter()
            .map(|mem| {
                mem.iter()
                    .map(|&i| {
                        let fitted: f64 = trend
                            .design_row(&locs[i])
                            .iter()
                            .zip(&beta)
                            .map(|(a, b)| a * b)
                            .sum();
                        y[i] - fitted
                    })
                    .collect()
            })
            .collect();
        let updates: Vec<(CovarianceSpec, bool)> = (0..d_count)
            .into_par_iter()
            .map(|d| {
                let obj = |pv: &[f64]| -> f64 {
                    let spec =
                        CovarianceSpec::new(pv[0].exp(), pv[1].exp(), pv[2].exp());
                    match block_loglik(&block_locs[d], &resids[d], &spec) {
                        Ok(ll) => -ll,
                        Err(_) => f64::INFINITY,
                    }
                };
                let x0 = [
                    specs[d].partial_sill.max(1e-12).ln(),
                    specs[d].range.ln(),
                    specs[d].nugget.max(1e-12).ln(),
                ];
                let res = nelder_mead(obj, &x0, opts.init_step, opts.tol, opts.max_eval);
                (
                    CovarianceSpec::new(res.x[0].exp(), res.x[1].exp(), res.x[2].exp()),
                    res.converged,
                )
            })
            .collect();
        for (d, (spec, conv)) in updates.into_iter().enumerate() {
            specs[d] = spec;
            converged &= conv;
        }

        // (b) Shared-trend GLS across blocks.
        let pieces: Result<Vec<(DenseMatrix, Vec<f64>)>> = (0..d_count)
            .into_par_iter()
            .map(|d| {
                let sigma = cov_matrix(&specs[d], &block_locs[d]);
                let chol = sigma.cholesky()?;
                let design = trend.design_matrix(&block_locs[d]);
                let mut zx = DenseMatrix::zeros(block_locs[d].len(), p);
                for j in 0..p {
                    let col = chol.triangular_solve(design.col(j), false)?;
                    zx.col_mut(j).copy_from_slice(&col);
                }
                let zy = chol.triangular_solve(&block_y[d], false)?;
                let mut m = DenseMatrix::zeros(p, p);
                let mut v = vec![0.0; p];
                for a in 0..p {
                    for b in 0..=a {
                        let t = crate::numerics::dot(zx.col(a), zx.col(b));
                        m.set(a, b, t);
                        m.set(b, a, t);
                    }
                    v[a] = crate::numerics::dot(zx.col(a), &zy);
                }
                Ok((m, v))
            })
            .collect();
        let pieces = pieces?;
        let mut m_total = DenseMatrix::zeros(p, p);
        let mut v_total = vec![0.0; p];
        for (m, v) in &pieces {
            for a in 0..p {
                v_total[a] += v[a];
                for b in 0..p {
                    m_total.set(a, b, m_total.get(a, b) + m.get(a, b));
                }
            }
        }
        beta = m_total.cholesky()?.cholesky_solve(&v_total)?;

        // Joint objective after the sweep.
        let total: Result<f64> = (0..d_count)
            .into_par_iter()
            .map(|d| {
                let resid: Vec<f64> = members[d]
                    .iter()
                    .map(|&i| {
                        let fitted: f64 = trend
                            .design_row(&locs[i])
                            .iter()
                            .zip(&beta)
                            .map(|(a, b)| a * b)
                            .sum();
                        y[i] - fitted
                    })
                    .collect();
                block_loglik(&block_locs[d], &resid, &specs[d])
            })
            .sum();
        sweep_trace.push(total?);
    }

    // Final per-block prediction state and the pooled trend precision.
    let states: Result<Vec<BlockState>> = (0..d_count)
        .into_par_iter()
        .map(|d| {
            let sigma = cov_matrix(&specs[d], &block_locs[d]);
            let chol = sigma.cholesky()?;
            let design = trend.design_matrix(&block_locs[d]);
            let mut x_solved = DenseMatrix::zeros(block_locs[d].len(), p);
            for j in 0..p {
                let col = chol.cholesky_solve(design.col(j))?;
                x_solved.col_mut(j).copy_from_slice(&col);
            }
            let resid: Vec<f64> = members[d]
                .iter()
                .map(|&i| {
                    let fitted: f64 = trend
                        .design_row(&locs[i])
                        .iter()
                        .zip(&beta)
                        .map(|(a, b)| a * b)
                        .sum();
                    y[i] - fitted
                })
                .collect();
            let resid_solved = chol.cholesky_solve(&resid)?;
            Ok(BlockState {
                locs: block_locs[d].clone(),
                spec: specs[d],
                chol,
                resid_solved,
                x_solved,
            })
        })
        .collect();
    let blocks = states?;
    let mut m_total = DenseMatrix::zeros(p, p);
    for state in &blocks {
        let design = trend.design_matrix(&state.locs);
        for a in 0..p {
            for b in 0..=a {
                let v = m_total.get(a, b)
                    + crate::numerics::dot(design.col(a), state.x_solved.col(b));
                m_total.set(a, b, v);
                m_total.set(b, a, v);
            }
        }
    }
    let xtsx_chol = m_total.cholesky()?;
    let loglik = *sweep_trace.last().unwrap();
    Ok(PartitionFit {
        partition,
        beta,
        specs,
        loglik,
        sweep_trace,
        converged,
        blocks,
        xtsx_chol,
        trend,
    })
}

/// Krige each test point within its containing subregion, sharing the fitted
/// trend and its pooled uncertainty.
pub fn partition_predict(fit: &PartitionFit, test: &[Location]) -> Result<PredictionResult> {
    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s0| {
            let d = fit.partition.locate(s0);
            let block = &fit.blocks[d];
            let c: Vec<f64> = block
                .locs
                .iter()
                .map(|s| crate::gpcore::cov_value(&block.spec, s.distance(s0), false))
                .collect();
            let x0 = fit.trend.design_row(s0);
            let mut mean: f64 = x0.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
            mean += crate::numerics::dot(&c, &block.resid_solved);
            let ci = block.chol.cholesky_solve(&c)?;
            let mut u = x0.clone();
            for (j, uj) in u.iter_mut().enumerate() {
                *uj -= crate::numerics::dot(block.x_solved.col(j), &c);
            }
            let mu = fit.xtsx_chol.cholesky_solve(&u)?;
            let trend_term: f64 = u.iter().zip(&mu).map(|(a, b)| a * b).sum();
            let var = block.spec.sill() - crate::numerics::dot(&c, &ci) + trend_term;
            Ok(PredictionRow::gaussian(*s0, mean, var))
        })
        .collect();
    Ok(PredictionResult::new("partition", rows?))
}

/// One subset's plug-in predictive machinery.
pub struct SubsetPosterior {
    pub spec: CovarianceSpec,
    pub beta: Vec<f64>,
    pub df: f64,
    gls: WhitenedGls,
    locs: Vec<Location>,
    trend: crate::gpcore::TrendKind,
}

impl SubsetPosterior {
    /// Plug-in predictive location and scale at `s0`; intervals are t with
    /// `df` degrees of freedom.
    pub fn predictive(&self, s0: &Location) -> Result<(f64, f64)> {
        crate::gpcore::krige_point(&self.gls, &self.locs, s0, &self.spec, &self.trend)
    }
}

/// The K subset fits plus the shared sampling configuration.
pub struct SubsetPosteriors {
    pub subsets: Vec<SubsetPosterior>,
    pub samples_per_subset: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

/// Randomly split the observed sites into `k` subsets and fit the exact model
/// on each in parallel. Subsets whose fit fails or does not converge are
/// dropped with a warning.
pub fn subset_fit(
    dataset: &SpatialDataset,
    k: usize,
    samples_per_subset: usize,
    seed: u64,
    init: &CovarianceSpec,
    opts: FitOptions,
) -> Result<SubsetPosteriors> {
    let n = dataset.n_observed();
    if k < 1 || k * 50 > n {
        return Err(Error::InvalidConfig(format!(
            "subset count {k} needs at least {} observations, have {n}",
            k * 50
        )));
    }
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let obs_idx = dataset.observed_indices();
    let mut shuffled = obs_idx.clone();
    shuffled.shuffle(&mut rng);

    let cells = dataset.geometry.cell_count();
    let subset_masks: Vec<Vec<bool>> = (0..k)
        .map(|s| {
            let mut mask = vec![false; cells];
            for (pos, &cell) in shuffled.iter().enumerate() {
                if pos % k == s {
                    mask[cell] = true;
                }
            }
            mask
        })
        .collect();

    let fits: Vec<std::result::Result<SubsetPosterior, String>> = subset_masks
        .into_par_iter()
        .enumerate()
        .map(|(s, mask)| {
            let sub = SpatialDataset::new(
                dataset.geometry.clone(),
                dataset.raw_values().to_vec(),
                mask,
                dataset.trend.clone(),
            )
            .map_err(|e| format!("subset {s}: {e}"))?;
            let fit = fit_ml(&sub, init, opts).map_err(|e| format!("subset {s}: {e}"))?;
            if !fit.converged {
                return Err(format!("subset {s}: fit did not converge; subset dropped"));
            }
            let locs = sub.observed_locations();
            let y = sub.observed_values();
            let design = sub.trend.kind.design_matrix(&locs);
            let gls = WhitenedGls::new(cov_matrix(&fit.spec, &locs), &design, &y)
                .map_err(|e| format!("subset {s}: {e}"))?;
            let df = (locs.len() - sub.trend.kind.rank()) as f64;
            Ok(SubsetPosterior {
                spec: fit.spec,
                beta: fit.beta,
                df,
                gls,
                locs,
                trend: sub.trend.kind,
            })
        })
        .collect();

    let mut subsets = Vec::new();
    let mut warnings = Vec::new();
    for f in fits {
        match f {
            Ok(sp) => subsets.push(sp),
            Err(w) => warnings.push(w),
        }
    }
    if subsets.is_empty() {
        return Err(Error::NonConvergence { evaluations: opts.max_eval });
    }
    Ok(SubsetPosteriors { subsets, samples_per_subset, seed, warnings })
}

/// Geometric-median weights over the subsets.
#[derive(Clone, Debug)]
pub struct GMWeights {
    pub weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Draw per-subset predictive sample vectors over a probe location set:
/// independent t draws around the plug-in predictive at each probe.
pub fn probe_samples(
    subsets: &SubsetPosteriors,
    probes: &[Location],
) -> Result<Vec<DenseMatrix>> {
    use rand::SeedableRng;
    let m = subsets.samples_per_subset;
    subsets
        .subsets
        .par_iter()
        .enumerate()
        .map(|(k, sp)| {
            let mut rng =
                rand_chacha::ChaCha20Rng::seed_from_u64(subsets.seed ^ (0x9e37 + k as u64));
            let tdist = StudentsT::new(0.0, 1.0, sp.df).expect("valid df");
            let mut mat = DenseMatrix::zeros(m, probes.len());
            for (j, s0) in probes.iter().enumerate() {
                let (mean, scale) = sp.predictive(s0)?;
                for i in 0..m {
                    let u: f64 = rand::Rng::gen_range(&mut rng, 1e-12..1.0 - 1e-12);
                    let t = tdist.inverse_cdf(u);
                    mat.set(i, j, mean + scale * t);
                }
            }
            Ok(mat)
        })
        .collect()
}

/// RKHS Gram matrix of the subset predictive distributions from sample
/// matrices (rows = draws, cols = probe locations): kernel mean embeddings
/// with a Gaussian kernel, bandwidth by the median heuristic.
pub fn estimate_gram(samples: &[DenseMatrix]) -> DenseMatrix {
    let k = samples.len();
    let m = samples[0].rows();
    let dim = samples[0].cols();
    let sq_dist = |a: &DenseMatrix, i: usize, b: &DenseMatrix, j: usize| -> f64 {
        let mut acc = 0.0;
        for c in 0..dim {
            let d = a.get(i, c) - b.get(j, c);
            acc += d * d;
        }
        acc
    };
    // Median heuristic over a deterministic subsample of pairs.
    let mut dists = Vec::new();
    for a in 0..k {
        for i in (0..m).step_by(4) {
            let b = (a + 1) % k;
            let j = (i * 7 + 3) % m;
            dists.push(sq_dist(&samples[a], i, &samples[b], j));
        }
    }
    dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let h2 = dists[dists.len() / 2].max(1e-12);

    let mut gram = DenseMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..=a {
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m {
                    acc += (-sq_dist(&samples[a], i, &samples[b], j) / h2).exp();
                }
            }
            let v = acc / (m * m) as f64;
            gram.set(a, b, v);
            gram.set(b, a, v);
        }
    }
    gram
}

/// RKHS distance from subset `k` to the mixture with weights `w`.
fn gm_distance(gram: &DenseMatrix, w: &[f64], k: usize) -> f64 {
    let kk = w.len();
    let mut gw_k = 0.0;
    let mut wgw = 0.0;
    for j in 0..kk {
        gw_k += gram.get(k, j) * w[j];
        for i in 0..kk {
            wgw += w[i] * gram.get(i, j) * w[j];
        }
    }
    (gram.get(k, k) - 2.0 * gw_k + wgw).max(0.0).sqrt()
}

/// Weiszfeld fixed-point iteration for the geometric-median weights.
pub fn weiszfeld_weights(gram: &DenseMatrix, tol: f64, max_iter: usize) -> GMWeights {
    let k = gram.rows();
    let mut w = vec![1.0 / k as f64; k];
    for iter in 0..max_iter {
        let dists: Vec<f64> = (0..k).map(|j| gm_distance(gram, &w, j)).collect();
        // A vanishing distance means the median sits on that subset.
        if let Some(hit) = dists.iter().position(|&d| d < 1e-14) {
            if dists.iter().filter(|&&d| d < 1e-14).count() == 1 {
                let mut out = vec![0.0; k];
                out[hit] = 1.0;
                return GMWeights { weights: out, converged: true, iterations: iter };
            }
            // Coincident distributions: fall back to uniform over the hits.
            let hits: Vec<usize> = (0..k).filter(|&j| dists[j] < 1e-14).collect();
            let mut out = vec![0.0; k];
            for &h in &hits {
                out[h] = 1.0 / hits.len() as f64;
            }
            return GMWeights { weights: out, converged: true, iterations: iter };
        }
        let inv: Vec<f64> = dists.iter().map(|d| 1.0 / d).collect();
        let total: f64 = inv.iter().sum();
        let next: Vec<f64> = inv.iter().map(|v| v / total).collect();
        let delta = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        w = next;
        if delta < tol {
            return GMWeights { weights: w, converged: true, iterations: iter + 1 };
        }
    }
    GMWeights { weights: w, converged: false, iterations: max_iter }
}

/// Weiszfeld objective: weighted sum of RKHS distances to the mixture.
pub fn gm_objective(gram: &DenseMatrix, w: &[f64]) -> f64 {
    (0..w.len()).map(|j| gm_distance(gram, w, j)).sum()
}

/// Mixture CDF of the weighted subset t predictives.
fn mixture_cdf(components: &[(f64, f64, f64)], weights: &[f64], x: f64) -> f64 {
    components
        .iter()
        .zip(weights)
        .map(|(&(mean, scale, df), &w)| {
            if scale <= 0.0 {
                if x >= mean {
                    w
                } else {
                    0.0
                }
            } else {
                let t = StudentsT::new(0.0, 1.0, df).expect("valid df");
                w * t.cdf((x - mean) / scale)
            }
        })
        .sum()
}

fn mixture_quantile(components: &[(f64, f64, f64)], weights: &[f64], q: f64) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(mean, scale, _) in components {
        lo = lo.min(mean - 12.0 * scale.max(1e-12));
        hi = hi.max(mean + 12.0 * scale.max(1e-12));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mixture_cdf(components, weights, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Combine the subset predictive distributions with the geometric-median
/// weights: the point prediction is the weighted-mixture median, the interval
/// the 2.5/97.5 mixture percentiles, and the reported standard error follows
/// the interval-to-se rule.
pub fn metakrige_predict(
    subsets: &SubsetPosteriors,
    weights: &GMWeights,
    test: &[Location],
) -> Result<PredictionResult> {
    if weights.weights.len() != subsets.subsets.len() {
        return Err(Error::LengthMismatch {
            left: weights.weights.len(),
            right: subsets.subsets.len(),
        });
    }
    let rows: Result<Vec<PredictionRow>> = test
        .par_iter()
        .map(|s0| {
            let components: Result<Vec<(f64, f64, f64)>> = subsets
                .subsets
                .iter()
                .map(|sp| {
                    let (mean, scale) = sp.predictive(s0)?;
                    Ok((mean, scale, sp.df))
                })
                .collect();
            let components = components?;
            let median = mixture_quantile(&components, &weights.weights, 0.5);
            let lower = mixture_quantile(&components, &weights.weights, 0.025);
            let upper = mixture_quantile(&components, &weights.weights, 0.975);
            Ok(PredictionRow {
                location: *s0,
                mean: median,
                se: se_from_interval(lower, upper),
                lower,
                upper,
            })
        })
        .collect();
    let mut out = PredictionResult::new("metakriging", rows?);
    out.warnings = subsets.warnings.clone();
    Ok(out)
}
