//! Exact universal kriging: conditional-Gaussian prediction with the trend
//! profiled by GLS and its estimation uncertainty carried into the variance.

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::fit::WhitenedGls;
use super::{cov_matrix, cov_vec, CovarianceSpec, Location, PredictionResult, PredictionRow, SpatialDataset};

/// Default limit on the observation count for the dense route.
pub const DEFAULT_EXACT_CEILING: usize = 20_000;

/// Krige every test location from the observed cells of `train`.
///
/// Mean and variance are the universal-kriging expressions: the conditional
/// Gaussian at the GLS trend plus the trend-uncertainty correction, so the
/// variance never pretends the trend was known.
pub fn krige(
    train: &SpatialDataset,
    test: &[Location],
    spec: &CovarianceSpec,
    max_exact_n: usize,
) -> Result<PredictionResult> {
    spec.validate()?;
    let n = train.n_observed();
    if n == 0 {
        return Err(Error::EmptyTrain);
    }
    if n > max_exact_n {
        return Err(Error::TooLarge { n, ceiling: max_exact_n });
    }
    let locs = train.observed_locations();
    let y = train.observed_values();
    let design = train.trend.kind.design_matrix(&locs);
    let gls = WhitenedGls::new(cov_matrix(spec, &locs), &design, &y)?;
    let rows = krige_with_gls(&gls, &locs, test, spec, &train.trend.kind)?;
    Ok(PredictionResult::new("exact-gp", rows))
}

/// Shared prediction loop given a prepared whitened-GLS state.
pub(crate) fn krige_with_gls(
    gls: &WhitenedGls,
    train_locs: &[Location],
    test: &[Location],
    spec: &CovarianceSpec,
    trend: &super::TrendKind,
) -> Result<Vec<PredictionRow>> {
    let p = gls.beta.len();
    let sill = spec.sill();
    test.par_iter()
        .map(|s0| {
            let c = cov_vec(spec, train_locs, s0);
            let w = gls.chol.triangular_solve(&c, false)?;
            let x0 = trend.design_row(s0);
            let mean_trend: f64 = x0.iter().zip(&gls.beta).map(|(a, b)| a * b).sum();
            let mean = mean_trend + crate::numerics::dot(&w, &gls.resid_white);

            // Trend-uncertainty correction through the P×P GLS precision.
            let mut u = x0.clone();
            for j in 0..p {
                u[j] -= crate::numerics::dot(gls.z_design.col(j), &w);
            }
            let mu = gls.m_chol.cholesky_solve(&u)?;
            let trend_term: f64 = u.iter().zip(&mu).map(|(a, b)| a * b).sum();
            let var = sill - crate::numerics::dot(&w, &w) + trend_term;
            Ok(PredictionRow::gaussian(*s0, mean, var))
        })
        .collect()
}

/// Universal-kriging mean and standard deviation at a single location from a
/// prepared GLS state; the building block for subset and ensemble methods.
pub fn krige_point(
    gls: &WhitenedGls,
    train_locs: &[Location],
    s0: &Location,
    spec: &CovarianceSpec,
    trend: &super::TrendKind,
) -> Result<(f64, f64)> {
    let rows = krige_with_gls(gls, train_locs, std::slice::from_ref(s0), spec, trend)?;
    Ok((rows[0].mean, rows[0].se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpcore::{loglik, simulate_gp, GridGeometry, TrendSpec};
    use crate::numerics::DenseMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn line_dataset(values: Vec<f64>) -> SpatialDataset {
        let n = values.len();
        let g = GridGeometry::new(1, n, (0.0, (n - 1) as f64 * 0.25), (0.0, 0.0));
        let obs = vec![true; n];
        SpatialDataset::new(g, values, obs, TrendSpec::constant()).unwrap()
    }

    #[test]
    fn interpolates_exactly_without_nugget() {
        let ds = line_dataset(vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        let spec = CovarianceSpec::new(2.0, 0.5, 0.0);
        let test: Vec<Location> = ds.observed_locations();
        let pred = krige(&ds, &test, &spec, 100).unwrap();
        for (row, y) in pred.rows.iter().zip(ds.observed_values()) {
            assert!((row.mean - y).abs() < 1e-8, "{} vs {}", row.mean, y);
            assert!(row.se < 1e-6);
        }
    }

    #[test]
    fn far_field_reverts_to_trend() {
        let ds = line_dataset(vec![1.0, 3.0, 2.0, 5.0, 4.0]);
        let spec = CovarianceSpec::new(2.0, 0.05, 0.3);
        let far = Location::new(500.0, 0.0);
        let pred = krige(&ds, &[far], &spec, 100).unwrap();
        let row = &pred.rows[0];
        // GLS constant-trend estimate.
        let locs = ds.observed_locations();
        let y = ds.observed_values();
        let design = ds.trend.kind.design_matrix(&locs);
        let gls = WhitenedGls::new(cov_matrix(&spec, &locs), &design, &y).unwrap();
        assert!((row.mean - gls.beta[0]).abs() < 1e-10);
        // Variance: full sill plus the trend-estimation term.
        assert!(row.se * row.se >= spec.sill() - 1e-10);
    }

    #[test]
    fn matches_direct_conditional_gaussian() {
        // 5 observed, 1 test; oracle assembles the joint covariance and the
        // universal-kriging formulas from explicit inverses.
        let mut rng = StdRng::seed_from_u64(12);
        let locs: Vec<Location> = (0..5)
            .map(|_| Location::new(rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0)))
            .collect();
        let vals: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..4.0)).collect();
        let spec = CovarianceSpec::new(1.5, 0.7, 0.2);
        let design = crate::gpcore::TrendKind::Constant.design_matrix(&locs);
        let gls = WhitenedGls::new(cov_matrix(&spec, &locs), &design, &vals).unwrap();
        let s0 = Location::new(0.8, 1.1);
        let rows = krige_with_gls(&gls, &locs, &[s0], &spec, &crate::gpcore::TrendKind::Constant)
            .unwrap();
        let row = rows[0];

        // Oracle.
        let sigma = cov_matrix(&spec, &locs);
        let inv = invert(&sigma);
        let c = cov_vec(&spec, &locs, &s0);
        let ones = vec![1.0; 5];
        let si_c = inv.matvec(&c);
        let si_y = inv.matvec(&vals);
        let si_1 = inv.matvec(&ones);
        let denom: f64 = si_1.iter().sum();
        let beta: f64 = si_1.iter().zip(&vals).map(|(a, b)| a * b).sum::<f64>() / denom;
        let mean = beta + c.iter().zip(&si_y).map(|(a, b)| a * b).sum::<f64>()
            - beta * c.iter().zip(&si_1).map(|(a, b)| a * b).sum::<f64>();
        let u = 1.0 - ones.iter().zip(&si_c).map(|(a, b)| a * b).sum::<f64>();
        let var = spec.sill() - c.iter().zip(&si_c).map(|(a, b)| a * b).sum::<f64>()
            + u * u / denom;
        assert!((row.mean - mean).abs() < 1e-10, "{} vs {mean}", row.mean);
        assert!((row.se * row.se - var).abs() < 1e-10);

        fn invert(a: &DenseMatrix) -> DenseMatrix {
            let n = a.rows();
            let l = a.cholesky().unwrap();
            let mut inv = DenseMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                inv.col_mut(j).copy_from_slice(&l.cholesky_solve(&e).unwrap());
            }
            inv
        }
    }

    #[test]
    fn variance_bounds_and_monotonicity() {
        let g = GridGeometry::new(10, 10, (0.0, 1.8), (0.0, 1.8));
        let spec = CovarianceSpec::new(3.0, 0.5, 0.2);
        let ds = simulate_gp(&g, &spec, &TrendSpec::constant_mean(0.0), 99, 20_000).unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let tests: Vec<Location> = (0..20)
            .map(|_| Location::new(rng.gen_range(0.0..1.8), rng.gen_range(0.0..1.8)))
            .collect();
        let full = krige(&ds, &tests, &spec, 20_000).unwrap();

        // Drop one observation; variance must not decrease anywhere.
        let mut observed = ds.observed_mask().to_vec();
        observed[37] = false;
        let smaller = SpatialDataset::new(
            g.clone(),
            ds.raw_values().to_vec(),
            observed,
            ds.trend.clone(),
        )
        .unwrap();
        let reduced = krige(&smaller, &tests, &spec, 20_000).unwrap();
        for (a, b) in full.rows.iter().zip(&reduced.rows) {
            assert!(a.se <= b.se + 1e-10, "adding data must not raise variance");
            // And the basic envelope, with the trend term allowed on top.
            assert!(a.se * a.se <= spec.sill() + 1.0);
            assert!(a.se >= 0.0);
        }
        let _ = loglik(&ds, &spec).unwrap();
    }

    #[test]
    fn too_large_is_rejected() {
        let ds = line_dataset(vec![1.0, 2.0, 3.0]);
        let spec = CovarianceSpec::new(1.0, 1.0, 0.1);
        assert!(matches!(
            krige(&ds, &[Location::new(0.0, 0.0)], &spec, 2),
            Err(Error::TooLarge { .. })
        ));
    }
}
