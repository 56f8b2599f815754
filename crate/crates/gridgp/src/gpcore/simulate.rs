//! Exact simulation of the model on a full grid via the dense Cholesky root.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

use super::{cov_matrix, CovarianceSpec, GridGeometry, SpatialDataset, TrendSpec};

/// Draw one field on every cell of `geometry`: trend + correlated component
/// + nugget noise. Reproducible from `seed`; cell counts above `ceiling` are
/// refused because the dense root is cubic.
pub fn simulate_gp(
    geometry: &GridGeometry,
    spec: &CovarianceSpec,
    trend: &TrendSpec,
    seed: u64,
    ceiling: usize,
) -> Result<SpatialDataset> {
    spec.validate()?;
    let n = geometry.cell_count();
    if n > ceiling {
        return Err(Error::TooLarge { n, ceiling });
    }
    let locs = geometry.all_locations();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let mut values: Vec<f64> = locs.iter().map(|s| trend.mean_at(s)).collect();

    // Correlated component. A vanishing partial sill short-circuits to the
    // i.i.d. path so huge nugget-only fields stay cheap.
    if spec.partial_sill > 1e-12 {
        let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let field_spec = CovarianceSpec::new(spec.partial_sill, spec.range, 0.0);
        let mut sigma = cov_matrix(&field_spec, &locs);
        // Tiny jitter guards the factorization of near-singular smooth fields.
        for i in 0..n {
            sigma.set(i, i, sigma.get(i, i) + 1e-10 * spec.partial_sill);
        }
        let l = sigma.cholesky()?;
        for c in 0..n {
            let zc = z[c];
            if zc != 0.0 {
                let col = l.col(c);
                for (v, &lv) in values[c..].iter_mut().zip(&col[c..]) {
                    *v += lv * zc;
                }
            }
        }
    }

    if spec.nugget > 0.0 {
        let sd = spec.nugget.sqrt();
        for v in values.iter_mut() {
            let e: f64 = normal.sample(&mut rng);
            *v += sd * e;
        }
    }

    SpatialDataset::new(geometry.clone(), values, vec![true; n], trend.clone())
}
