//! Train/test splits: either a missingness mask supplied as a grid file or a
//! synthetic cloud-cover generator (random disks plus scattered dropouts).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpcore::{Location, SpatialDataset};

/// Synthetic cloud-mask settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CloudConfig {
    pub seed: u64,
    /// Number of opaque disks.
    #[serde(default = "default_disks")]
    pub disks: usize,
    /// Disk radius range in grid cells.
    #[serde(default = "default_radius")]
    pub radius_cells: (f64, f64),
    /// Fraction of remaining cells dropped independently.
    #[serde(default = "default_fraction")]
    pub random_fraction: f64,
}

fn default_disks() -> usize {
    6
}
fn default_radius() -> (f64, f64) {
    (3.0, 12.0)
}
fn default_fraction() -> f64 {
    0.01
}

/// The held-out side of a split: locations and sequestered truth.
pub struct Split {
    pub train: SpatialDataset,
    pub test_locations: Vec<Location>,
    pub truth: Vec<f64>,
}

/// Split with an explicit mask grid: a cell is held out when the mask file
/// marks it (missing in the mask counts as marked, mirroring how a cloudy
/// day's missingness pattern is reused; otherwise any nonzero value marks).
pub fn split_with_mask(dataset: &SpatialDataset, mask: &SpatialDataset) -> Result<Split> {
    if mask.geometry != dataset.geometry {
        return Err(Error::GeometryMismatch(
            "mask grid does not match the dataset grid".into(),
        ));
    }
    let mask_has_missing = mask.n_missing() > 0;
    let masked: Vec<bool> = (0..dataset.geometry.cell_count())
        .map(|i| {
            if mask_has_missing {
                mask.value(i).is_none()
            } else {
                mask.value(i).map(|v| v != 0.0).unwrap_or(false)
            }
        })
        .collect();
    build_split(dataset, &masked)
}

/// Split with synthetic cloud cover: the union of random disks plus an
/// independent random scatter.
pub fn split_with_clouds(dataset: &SpatialDataset, config: &CloudConfig) -> Result<Split> {
    let g = &dataset.geometry;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut masked = vec![false; g.cell_count()];
    for _ in 0..config.disks {
        let cr: f64 = rng.gen_range(0.0..g.n_rows as f64);
        let cc: f64 = rng.gen_range(0.0..g.n_cols as f64);
        let radius: f64 = rng.gen_range(config.radius_cells.0..config.radius_cells.1);
        let r2 = radius * radius;
        let r_lo = ((cr - radius).floor().max(0.0)) as usize;
        let r_hi = ((cr + radius).ceil() as usize).min(g.n_rows - 1);
        let c_lo = ((cc - radius).floor().max(0.0)) as usize;
        let c_hi = ((cc + radius).ceil() as usize).min(g.n_cols - 1);
        for r in r_lo..=r_hi {
            for c in c_lo..=c_hi {
                let dr = r as f64 - cr;
                let dc = c as f64 - cc;
                if dr * dr + dc * dc <= r2 {
                    masked[g.index_of(r, c)] = true;
                }
            }
        }
    }
    for m in masked.iter_mut() {
        if !*m && rng.gen_range(0.0..1.0) < config.random_fraction {
            *m = true;
        }
    }
    build_split(dataset, &masked)
}

fn build_split(dataset: &SpatialDataset, masked: &[bool]) -> Result<Split> {
    let g = &dataset.geometry;
    let mut observed = vec![false; g.cell_count()];
    let mut test_locations = Vec::new();
    let mut truth = Vec::new();
    for i in 0..g.cell_count() {
        match dataset.value(i) {
            Some(v) if masked[i] => {
                test_locations.push(g.location(i));
                truth.push(v);
            }
            Some(_) => observed[i] = true,
            None => {}
        }
    }
    if test_locations.is_empty() {
        return Err(Error::EmptyTest);
    }
    if observed.iter().all(|&o| !o) {
        return Err(Error::EmptyTrain);
    }
    // The training dataset carries no held-out values by construction: the
    // constructor blanks every unobserved cell.
    let train = SpatialDataset::new(
        g.clone(),
        dataset.raw_values().to_vec(),
        observed,
        dataset.trend.clone(),
    )?;
    Ok(Split { train, test_locations, truth })
}
