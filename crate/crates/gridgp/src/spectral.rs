//! Periodic embedding: gridded data are placed in an expanded lattice, the
//! covariance is modeled as the inverse transform of a nonparametric
//! spectrum, and missing cells (including the expansion band) are imputed by
//! conditional simulation under that periodic covariance. Iterating the
//! impute/update pair converges to a spectrum whose periodogram bias from
//! edge effects and gaps is largely removed; prediction uncertainty comes
//! from an ensemble of conditional imputations at the converged spectrum.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gpcore::{PredictionResult, PredictionRow, SpatialDataset};
use crate::numerics::{dft2, ComplexGrid};
use crate::scoring::pairwise_sum;

/// Expanded-lattice dimensions: componentwise floor of `tau * n`.
pub fn embed(n: (usize, usize), tau: f64) -> (usize, usize) {
    assert!(tau >= 1.0, "expansion factor must be at least 1");
    // The epsilon keeps exact products like 300 * 1.2 from flooring down.
    (
        ((n.0 as f64) * tau + 1e-9).floor() as usize,
        ((n.1 as f64) * tau + 1e-9).floor() as usize,
    )
}

/// Spectrum on the expanded Fourier grid plus the geometry it belongs to.
#[derive(Clone, Debug)]
pub struct SpectralModel {
    pub original: (usize, usize),
    pub tau: f64,
    pub dims: (usize, usize),
    /// Nonnegative, conjugate-symmetric (f(w) = f(-w)), row-major.
    pub spectrum: Vec<f64>,
    /// Smoothing-kernel half width in Fourier bins per axis.
    pub bandwidth: usize,
}

/// Observed/missing split on the expanded lattice. Observed cells are never
/// overwritten by imputation.
#[derive(Clone, Debug)]
pub struct EmbeddedField {
    pub dims: (usize, usize),
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
}

/// Periodic covariance from the spectrum: `R(h) = (1/(m1 m2)) Σ f(w) e^{iw'h}`,
/// returned on the full lattice of offsets.
pub fn spectrum_to_cov(model: &SpectralModel) -> Vec<f64> {
    let (m1, m2) = model.dims;
    let mut grid = ComplexGrid::zeros(m1, m2);
    for (k, &f) in model.spectrum.iter().enumerate() {
        grid.data_mut()[k] = Complex64::new(f, 0.0);
    }
    let back = dft2(&grid, true);
    let scale = 1.0 / ((m1 * m2) as f64).sqrt();
    back.data().iter().map(|c| c.re * scale).collect()
}

/// Circulant multiply `y = C x` where `C` has spectrum `f`.
fn circulant_mul(dims: (usize, usize), f: &[f64], x: &[f64]) -> Vec<f64> {
    let (m1, m2) = dims;
    let grid = ComplexGrid::from_real(m1, m2, x);
    let mut hat = dft2(&grid, false);
    for (v, &fv) in hat.data_mut().iter_mut().zip(f) {
        *v *= fv;
    }
    dft2(&hat, true).real_part()
}

/// Unconditional periodic draw with covariance spectrum `f`.
fn unconditional_draw(dims: (usize, usize), f: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    let (m1, m2) = dims;
    let normal = StandardNormal;
    let white: Vec<f64> = (0..m1 * m2).map(|_| normal.sample(rng)).collect();
    let grid = ComplexGrid::from_real(m1, m2, &white);
    let mut hat = dft2(&grid, false);
    for (v, &fv) in hat.data_mut().iter_mut().zip(f) {
        *v *= fv.max(0.0).sqrt();
    }
    dft2(&hat, true).real_part()
}

/// Conditional simulation of the missing cells given the observed ones under
/// the model's periodic covariance: an unconditional draw corrected by a
/// kriging residual solved with preconditioned conjugate gradients (the
/// matrix-vector products and the circulant preconditioner are FFTs).
pub fn conditional_impute(
    model: &SpectralModel,
    field: &EmbeddedField,
    seed: u64,
    cg_tol: f64,
    cg_max: usize,
) -> Result<Vec<f64>> {
    let (m1, m2) = model.dims;
    let total = m1 * m2;
    assert_eq!(field.values.len(), total);
    let observed: Vec<usize> = (0..total).filter(|&i| field.observed[i]).collect();
    if observed.is_empty() {
        return Err(Error::EmptyTrain);
    }
    if observed.len() == total {
        return Ok(field.values.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let z = unconditional_draw(model.dims, &model.spectrum, &mut rng);

    // Right-hand side: observed residual against the unconditional draw.
    let rhs: Vec<f64> = observed.iter().map(|&i| field.values[i] - z[i]).collect();

    // PCG on the observed-block system Sigma_UU x = rhs.
    let floor = 1e-12 * (pairwise_sum(&model.spectrum) / total as f64).max(1e-300);
    let inv_f: Vec<f64> = model.spectrum.iter().map(|&f| 1.0 / f.max(floor)).collect();
    let matvec = |x: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; total];
        for (k, &i) in observed.iter().enumerate() {
            full[i] = x[k];
        }
        let out = circulant_mul(model.dims, &model.spectrum, &full);
        observed.iter().map(|&i| out[i]).collect()
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut full = vec![0.0; total];
        for (k, &i) in observed.iter().enumerate() {
            full[i] = r[k];
        }
        let out = circulant_mul(model.dims, &inv_f, &full);
        observed.iter().map(|&i| out[i]).collect()
    };

    let n_obs = observed.len();
    let mut x = vec![0.0; n_obs];
    let mut r = rhs.clone();
    let rhs_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut zv = precond(&r);
    let mut p = zv.clone();
    let mut rz: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
    let mut converged = false;
    for _ in 0..cg_max {
        let ap = matvec(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverFailure(
                "conditioning system lost positive definiteness".into(),
            ));
        }
        let alpha = rz / pap;
        for k in 0..n_obs {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm / rhs_norm < cg_tol {
            converged = true;
            break;
        }
        zv = precond(&r);
        let rz_new: f64 = r.iter().zip(&zv).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n_obs {
            p[k] = zv[k] + beta * p[k];
        }
    }
    if !converged {
        return Err(Error::SolverFailure(format!(
            "conjugate gradients stalled after {cg_max} iterations"
        )));
    }

    // Spread the correction over the full lattice and keep U fixed.
    let mut full = vec![0.0; total];
    for (k, &i) in observed.iter().enumerate() {
        full[i] = x[k];
    }
    let correction = circulant_mul(model.dims, &model.spectrum, &full);
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        if field.observed[i] {
            out.push(field.values[i]);
        } else {
            out.push(z[i] + correction[i]);
        }
    }
    Ok(out)
}

/// Smoothed periodogram of a completed field: |J|^2 convolved circularly with
/// a product Epanechnikov kernel of the given half width (zero keeps the raw
/// periodogram). The kernel sums to one, so the spectral mean is preserved.
pub fn update_spectrum(dims: (usize, usize), completed: &[f64], bandwidth: usize) -> Vec<f64> {
    let (m1, m2) = dims;
    let grid = ComplexGrid::from_real(m1, m2, completed);
    let hat = dft2(&grid, false);
    let pgram: Vec<f64> = hat.data().iter().map(|c| c.norm_sqr()).collect();
    let smoothed = if bandwidth == 0 {
        pgram
    } else {
        let b = bandwidth as isize;
        let half = (bandwidth + 1) as f64;
        let mut weights = Vec::new();
        let mut wsum = 0.0;
        for di in -b..=b {
            for dj in -b..=b {
                let w = (1.0 - (di as f64 / half).powi(2)) * (1.0 - (dj as f64 / half).powi(2));
                weights.push((di, dj, w));
                wsum += w;
            }
        }
        let mut out = vec![0.0; m1 * m2];
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let (i, j) = (k / m2, k % m2);
            let mut acc = 0.0;
            for &(di, dj, w) in &weights {
                let ii = (i as isize + di).rem_euclid(m1 as isize) as usize;
                let jj = (j as isize + dj).rem_euclid(m2 as isize) as usize;
                acc += w * pgram[ii * m2 + jj];
            }
            *o = acc / wsum;
        });
        out
    };
    // Exact conjugate symmetry: average f(w) with f(-w).
    let mut f = smoothed;
    for i in 0..m1 {
        for j in 0..m2 {
            let k = i * m2 + j;
            let k2 = ((m1 - i) % m1) * m2 + (m2 - j) % m2;
            if k < k2 {
                let avg = 0.5 * (f[k] + f[k2]);
                f[k] = avg;
                f[k2] = avg;
            }
        }
    }
    f
}

/// Settings for the iterative fit.
#[derive(Clone, Debug)]
pub struct PeParams {
    pub tau: f64,
    pub iterations: usize,
    pub ensemble: usize,
    pub bandwidth: usize,
    pub seed: u64,
    pub cg_tol: f64,
    pub cg_max: usize,
    /// Early stop when the max relative spectrum change drops below this.
    pub rel_change_stop: f64,
}

impl Default for PeParams {
    fn default() -> Self {
        Self {
            tau: 1.2,
            iterations: 20,
            ensemble: 100,
            bandwidth: 3,
            seed: 1,
            cg_tol: 1e-8,
            cg_max: 1000,
            rel_change_stop: 1e-4,
        }
    }
}

/// Outcome of the iterative spectrum estimation.
pub struct PeFit {
    pub model: SpectralModel,
    pub iterations_run: usize,
}

/// Embed the dataset's OLS residuals, iterate conditional imputation and
/// spectrum smoothing, then predict every requested cell from an ensemble of
/// conditional imputations: ensemble mean, standard deviation as the standard
/// error, and the 2.5/97.5 percentiles as the interval.
pub fn pe_fit_predict(
    dataset: &SpatialDataset,
    test: &[crate::gpcore::Location],
    params: &PeParams,
) -> Result<(PredictionResult, PeFit)> {
    if params.iterations == 0 {
        return Err(Error::InvalidConfig("need at least one iteration".into()));
    }
    let g = &dataset.geometry;
    let n = (g.n_rows, g.n_cols);
    let dims = embed(n, params.tau);
    let (m1, m2) = dims;

    // OLS trend on the observed cells.
    let locs = dataset.observed_locations();
    if locs.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let y = dataset.observed_values();
    let design = dataset.trend.kind.design_matrix(&locs);
    let p = design.cols();
    let mut xtx = crate::numerics::DenseMatrix::zeros(p, p);
    let mut xty = vec![0.0; p];
    for a in 0..p {
        for b in 0..=a {
            let v = crate::numerics::dot(design.col(a), design.col(b));
            xtx.set(a, b, v);
            xtx.set(b, a, v);
        }
        xty[a] = crate::numerics::dot(design.col(a), &y);
    }
    let beta = xtx.cholesky()?.cholesky_solve(&xty)?;

    // Residuals on the expanded lattice; everything else is missing.
    let mut values = vec![0.0; m1 * m2];
    let mut observed = vec![false; m1 * m2];
    let obs_idx = dataset.observed_indices();
    for (k, &cell) in obs_idx.iter().enumerate() {
        let (r, c) = g.row_col(cell);
        let fitted: f64 = dataset
            .trend
            .kind
            .design_row(&locs[k])
            .iter()
            .zip(&beta)
            .map(|(a, b)| a * b)
            .sum();
        values[r * m2 + c] = y[k] - fitted;
        observed[r * m2 + c] = true;
    }
    let field = EmbeddedField { dims, values, observed };

    // Initial spectrum from the zero-filled field; the iteration repairs the
    // resulting bias.
    let mut model = SpectralModel {
        original: n,
        tau: params.tau,
        dims,
        spectrum: update_spectrum(dims, &field.values, params.bandwidth),
        bandwidth: params.bandwidth,
    };
    let mut iterations_run = 0;
    for iter in 0..params.iterations {
        let completed =
            conditional_impute(&model, &field, params.seed.wrapping_add(iter as u64), params.cg_tol, params.cg_max)?;
        let next = update_spectrum(dims, &completed, params.bandwidth);
        let mean_f = pairwise_sum(&model.spectrum) / model.spectrum.len() as f64;
        let max_rel = next
            .iter()
            .zip(&model.spectrum)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / mean_f.max(1e-300);
        model.spectrum = next;
        iterations_run = iter + 1;
        if max_rel < params.rel_change_stop {
            break;
        }
    }

    // Ensemble of conditional imputations at the converged spectrum.
    let draws: Result<Vec<Vec<f64>>> = (0..params.ensemble)
        .into_par_iter()
        .map(|e| {
            conditional_impute(
                &model,
                &field,
                params.seed.wrapping_add(1_000_003 + e as u64),
                params.cg_tol,
                params.cg_max,
            )
        })
        .collect();
    let draws = draws?;

    let rows: Vec<PredictionRow> = test
        .iter()
        .map(|s0| {
            // Locate the grid cell for this test location.
            let (dlon, dlat) = g.spacing();
            let col = if dlon > 0.0 {
                ((s0.lon - g.lon_min) / dlon).round() as usize
            } else {
                0
            };
            let row = if dlat > 0.0 {
                ((g.lat_max - s0.lat) / dlat).round() as usize
            } else {
                0
            };
            let k = row.min(m1 - 1) * m2 + col.min(m2 - 1);
            let trend_mean: f64 = dataset
                .trend
                .kind
                .design_row(s0)
                .iter()
                .zip(&beta)
                .map(|(a, b)| a * b)
                .sum();
            let mut vals: Vec<f64> = draws.iter().map(|d| d[k] + trend_mean).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = pairwise_sum(&vals) / vals.len() as f64;
            let var = vals
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (vals.len() - 1).max(1) as f64;
            let q = |p: f64| -> f64 {
                let pos = p * (vals.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let w = pos - lo as f64;
                vals[lo] * (1.0 - w) + vals[hi] * w
            };
            PredictionRow {
                location: *s0,
                mean,
                se: var.sqrt(),
                lower: q(0.025),
                upper: q(0.975),
            }
        })
        .collect();
    Ok((
        PredictionResult::new("periodic-embedding", rows),
        PeFit { model, iterations_run },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpcore::{simulate_gp, CovarianceSpec, GridGeometry, Location, SpatialDataset, TrendSpec};
    use crate::numerics::DenseMatrix;
    use rand::Rng;

    #[test]
    fn embed_dimensions() {
        assert_eq!(embed((300, 500), 1.2), (360, 600));
        assert_eq!(embed((100, 60), 1.0), (100, 60));
        assert_eq!(embed((100, 60), 1.2), (120, 72));
    }

    #[test]
    fn constant_spectrum_is_white_noise() {
        let model = SpectralModel {
            original: (6, 8),
            tau: 1.0,
            dims: (6, 8),
            spectrum: vec![2.5; 48],
            bandwidth: 0,
        };
        let r = spectrum_to_cov(&model);
        assert!((r[0] - 2.5).abs() < 1e-12);
        for &v in &r[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn lag_zero_is_spectral_mean_and_spike_gives_cosine() {
        let (m1, m2) = (8, 10);
        let mut spectrum = vec![0.3; m1 * m2];
        // Symmetric spike pair at (2, 3) and (-2, -3).
        spectrum[2 * m2 + 3] += 4.0;
        spectrum[(m1 - 2) * m2 + (m2 - 3)] += 4.0;
        let model = SpectralModel {
            original: (m1, m2),
            tau: 1.0,
            dims: (m1, m2),
            spectrum: spectrum.clone(),
            bandwidth: 0,
        };
        let r = spectrum_to_cov(&model);
        let mean_f = spectrum.iter().sum::<f64>() / (m1 * m2) as f64;
        assert!((r[0] - mean_f).abs() < 1e-12, "lag zero must be the mean");

        // Direct summation oracle at a few offsets.
        for &(h1, h2) in &[(1usize, 0usize), (0, 1), (3, 4), (5, 7)] {
            let mut acc = 0.0;
            for w1 in 0..m1 {
                for w2 in 0..m2 {
                    let ang = 2.0 * std::f64::consts::PI
                        * (w1 as f64 * h1 as f64 / m1 as f64
                            + w2 as f64 * h2 as f64 / m2 as f64);
                    acc += spectrum[w1 * m2 + w2] * ang.cos();
                }
            }
            acc /= (m1 * m2) as f64;
            assert!(
                (r[h1 * m2 + h2] - acc).abs() < 1e-10,
                "offset ({h1},{h2}): {} vs {acc}",
                r[h1 * m2 + h2]
            );
        }
        // Periodicity through the lattice wrap.
        assert!((r[1 * m2 + 1] - r[(m1 - 1) * m2 + (m2 - 1)]).abs() < 1e-12);
    }

    #[test]
    fn impute_no_missing_is_identity() {
        let model = SpectralModel {
            original: (4, 4),
            tau: 1.0,
            dims: (4, 4),
            spectrum: vec![1.0; 16],
            bandwidth: 0,
        };
        let field = EmbeddedField {
            dims: (4, 4),
            values: (0..16).map(|i| i as f64).collect(),
            observed: vec![true; 16],
        };
        let out = conditional_impute(&model, &field, 1, 1e-8, 100).unwrap();
        assert_eq!(out, field.values);
    }

    #[test]
    fn white_noise_fill_has_model_variance() {
        let (m1, m2) = (24, 24);
        let var = 3.2;
        let model = SpectralModel {
            original: (m1, m2),
            tau: 1.0,
            dims: (m1, m2),
            spectrum: vec![var; m1 * m2],
            bandwidth: 0,
        };
        let mut observed = vec![false; m1 * m2];
        let mut values = vec![0.0; m1 * m2];
        // A thin observed frame.
        for j in 0..m2 {
            observed[j] = true;
            values[j] = 0.5;
        }
        let field = EmbeddedField { dims: (m1, m2), values, observed };
        // Pool fills across seeds: the white-noise conditional is the prior.
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut count = 0usize;
        for seed in 0..40 {
            let out = conditional_impute(&model, &field, seed, 1e-10, 200).unwrap();
            for i in m2..m1 * m2 {
                acc += out[i];
                acc2 += out[i] * out[i];
                count += 1;
            }
            // Observed cells never move.
            for j in 0..m2 {
                assert_eq!(out[j], 0.5);
            }
        }
        let mean = acc / count as f64;
        let sample_var = acc2 / count as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "fill mean {mean}");
        assert!((sample_var / var - 1.0).abs() < 0.05, "fill variance {sample_var}");
    }

    #[test]
    fn imputation_mean_matches_dense_conditional() {
        // 16x16 lattice, 30% missing: the Monte-Carlo mean of the imputations
        // must approach the conditional mean computed from the dense periodic
        // covariance.
        let (m1, m2) = (16, 16);
        let total = m1 * m2;
        // A smooth positive spectrum.
        let mut spectrum = vec![0.0; total];
        for i in 0..m1 {
            for j in 0..m2 {
                let wi = (i.min(m1 - i)) as f64 / m1 as f64;
                let wj = (j.min(m2 - j)) as f64 / m2 as f64;
                spectrum[i * m2 + j] = 2.0 / (0.3 + wi * wi + wj * wj);
            }
        }
        let model = SpectralModel {
            original: (m1, m2),
            tau: 1.0,
            dims: (m1, m2),
            spectrum: spectrum.clone(),
            bandwidth: 0,
        };
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        use rand::SeedableRng;
        let mut observed = vec![true; total];
        for i in 0..total {
            if rng.gen_range(0.0..1.0) < 0.3 {
                observed[i] = false;
            }
        }
        // Observed data drawn once from the model.
        let mut draw_rng = ChaCha20Rng::seed_from_u64(9);
        let z = unconditional_draw((m1, m2), &spectrum, &mut draw_rng);
        let mut values = vec![0.0; total];
        for i in 0..total {
            if observed[i] {
                values[i] = z[i];
            }
        }
        let field = EmbeddedField { dims: (m1, m2), values: values.clone(), observed: observed.clone() };

        // Dense conditional mean from the circulant covariance.
        let r = spectrum_to_cov(&model);
        let cov = |a: usize, b: usize| -> f64 {
            let (ai, aj) = (a / m2, a % m2);
            let (bi, bj) = (b / m2, b % m2);
            let di = (ai + m1 - bi) % m1;
            let dj = (aj + m2 - bj) % m2;
            r[di * m2 + dj]
        };
        let obs: Vec<usize> = (0..total).filter(|&i| observed[i]).collect();
        let mis: Vec<usize> = (0..total).filter(|&i| !observed[i]).collect();
        let mut sigma_oo = DenseMatrix::zeros(obs.len(), obs.len());
        for (a, &i) in obs.iter().enumerate() {
            for (b, &j) in obs.iter().enumerate() {
                sigma_oo.set(a, b, cov(i, j));
            }
        }
        let chol = sigma_oo.cholesky().unwrap();
        let yo: Vec<f64> = obs.iter().map(|&i| values[i]).collect();
        let si_y = chol.cholesky_solve(&yo).unwrap();
        let cond_mean: Vec<f64> = mis
            .iter()
            .map(|&i| {
                obs.iter()
                    .enumerate()
                    .map(|(b, &j)| cov(i, j) * si_y[b])
                    .sum()
            })
            .collect();

        // Monte-Carlo mean over 500 seeds.
        let n_seeds = 500;
        let mut mc = vec![0.0; mis.len()];
        let mut mc2 = vec![0.0; mis.len()];
        for seed in 0..n_seeds {
            let out = conditional_impute(&model, &field, 100 + seed, 1e-10, 400).unwrap();
            for (k, &i) in mis.iter().enumerate() {
                mc[k] += out[i];
                mc2[k] += out[i] * out[i];
            }
        }
        for k in 0..mis.len() {
            let mean = mc[k] / n_seeds as f64;
            let var = mc2[k] / n_seeds as f64 - mean * mean;
            let se = (var / n_seeds as f64).sqrt().max(1e-6);
            assert!(
                (mean - cond_mean[k]).abs() < 3.5 * se,
                "cell {k}: MC mean {mean} vs conditional {}, se {se}",
                cond_mean[k]
            );
        }
    }

    #[test]
    fn raw_periodogram_and_mean_preservation() {
        let (m1, m2) = (10, 12);
        let vals: Vec<f64> = (0..m1 * m2).map(|i| ((i * 13 % 31) as f64) * 0.1 - 1.0).collect();
        // Identity kernel: raw periodogram.
        let raw = update_spectrum((m1, m2), &vals, 0);
        let grid = ComplexGrid::from_real(m1, m2, &vals);
        let hat = dft2(&grid, false);
        for (a, c) in raw.iter().zip(hat.data()) {
            assert!((a - c.norm_sqr()).abs() < 1e-12);
        }
        // Smoothing preserves the mean.
        let smooth = update_spectrum((m1, m2), &vals, 3);
        let mean_raw = raw.iter().sum::<f64>() / raw.len() as f64;
        let mean_smooth = smooth.iter().sum::<f64>() / smooth.len() as f64;
        assert!((mean_raw - mean_smooth).abs() < 1e-10);
        // Nonnegative and conjugate-symmetric.
        for i in 0..m1 {
            for j in 0..m2 {
                let k = i * m2 + j;
                let k2 = ((m1 - i) % m1) * m2 + (m2 - j) % m2;
                assert!(smooth[k] >= 0.0);
                assert!((smooth[k] - smooth[k2]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flat_field_concentrates_at_zero_frequency() {
        let (m1, m2) = (8, 8);
        let vals = vec![3.0; 64];
        let f = update_spectrum((m1, m2), &vals, 0);
        assert!(f[0] > 1.0);
        for &v in &f[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn fully_observed_parseval_identity() {
        // tau = 1, fully observed: the integrated spectrum is the sample
        // variance of the (trend-removed) field.
        let g = GridGeometry::new(20, 24, (0.0, 1.15), (0.0, 0.95));
        let spec = CovarianceSpec::new(2.0, 0.3, 0.3);
        let ds = simulate_gp(&g, &spec, &TrendSpec::constant_mean(5.0), 4, 20_000).unwrap();
        let params = PeParams { tau: 1.0, iterations: 20, ensemble: 4, ..Default::default() };
        let (_, fit) = pe_fit_predict(&ds, &[Location::new(0.5, 0.5)], &params).unwrap();
        let mean_f =
            fit.model.spectrum.iter().sum::<f64>() / fit.model.spectrum.len() as f64;
        let y = ds.observed_values();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64;
        assert!((mean_f - var).abs() < 1e-6 * var.max(1.0), "{mean_f} vs {var}");
    }

    #[test]
    fn deterministic_given_seed() {
        let g = GridGeometry::new(12, 12, (0.0, 1.1), (0.0, 1.1));
        let spec = CovarianceSpec::new(2.0, 0.3, 0.2);
        let full = simulate_gp(&g, &spec, &TrendSpec::constant_mean(5.0), 6, 20_000).unwrap();
        let mut observed = vec![true; 144];
        let mut tests = Vec::new();
        for i in (0..144).step_by(7) {
            observed[i] = false;
            tests.push(g.location(i));
        }
        let ds = SpatialDataset::new(
            g.clone(),
            full.raw_values().to_vec(),
            observed,
            TrendSpec::constant(),
        )
        .unwrap();
        let params = PeParams { tau: 1.2, iterations: 6, ensemble: 8, ..Default::default() };
        let (a, _) = pe_fit_predict(&ds, &tests, &params).unwrap();
        let (b, _) = pe_fit_predict(&ds, &tests, &params).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.mean.to_bits(), y.mean.to_bits());
            assert_eq!(x.se.to_bits(), y.se.to_bits());
        }
    }

    #[test]
    fn ensemble_intervals_cover_on_stationary_field() {
        // Correctly specified stationary simulation with >= 1000 held-out
        // cells: interval coverage in [0.90, 0.98].
        let g = GridGeometry::new(40, 40, (0.0, 1.95), (0.0, 1.95));
        let spec = CovarianceSpec::new(3.0, 0.25, 0.3);
        let full = simulate_gp(&g, &spec, &TrendSpec::constant_mean(10.0), 7, 20_000).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        use rand::SeedableRng;
        let mut observed = vec![true; g.cell_count()];
        let mut tests = Vec::new();
        let mut truth = Vec::new();
        for i in 0..g.cell_count() {
            if rng.gen_range(0.0..1.0) < 0.65 {
                observed[i] = false;
                tests.push(g.location(i));
                truth.push(full.value(i).unwrap());
            }
        }
        assert!(tests.len() >= 1000);
        let ds = SpatialDataset::new(
            g.clone(),
            full.raw_values().to_vec(),
            observed,
            TrendSpec::constant(),
        )
        .unwrap();
        let params = PeParams {
            tau: 1.2,
            iterations: 12,
            ensemble: 80,
            bandwidth: 2,
            ..Default::default()
        };
        let (pred, _) = pe_fit_predict(&ds, &tests, &params).unwrap();
        let cvg = crate::scoring::coverage(&pred.lowers(), &pred.uppers(), &truth).unwrap();
        assert!((0.90..=0.98).contains(&cvg), "coverage {cvg}");
    }
}
