//! The exact Gaussian-process model: covariance construction, profile
//! maximum likelihood, kriging with trend uncertainty, and simulation.
//!
//! At a few thousand observations this is a competitive method in its own
//! right; everywhere else in the crate it is the brute-force oracle that the
//! scalable approximations are tested against.

mod fit;
mod krige;
mod simulate;

pub use fit::{fit_ml, loglik, FitOptions, GpFit, WhitenedGls};
pub use krige::{krige, krige_point, DEFAULT_EXACT_CEILING};
pub use simulate::simulate_gp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scoring::Z_975;

/// A point in decimal degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub lon: f64,
    pub lat: f64,
}

impl Location {
    pub fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// Euclidean distance in degrees. The study region is small enough that
    /// great-circle corrections are not worth the loss of comparability.
    #[inline]
    pub fn distance(&self, other: &Location) -> f64 {
        let dx = self.lon - other.lon;
        let dy = self.lat - other.lat;
        (dx * dx + dy * dy).sqrt()
    }

    #[inline]
    pub fn coords(&self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

/// Regular lon/lat grid, row-major with row 0 at the northern edge and row
/// index increasing southward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub n_rows: usize,
    pub n_cols: usize,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl GridGeometry {
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        lon_range: (f64, f64),
        lat_range: (f64, f64),
    ) -> Self {
        Self {
            n_rows,
            n_cols,
            lon_min: lon_range.0,
            lon_max: lon_range.1,
            lat_min: lat_range.0,
            lat_max: lat_range.1,
        }
    }

    pub fn cell_count(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn spacing(&self) -> (f64, f64) {
        let dlon = if self.n_cols > 1 {
            (self.lon_max - self.lon_min) / (self.n_cols - 1) as f64
        } else {
            0.0
        };
        let dlat = if self.n_rows > 1 {
            (self.lat_max - self.lat_min) / (self.n_rows - 1) as f64
        } else {
            0.0
        };
        (dlon, dlat)
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        row * self.n_cols + col
    }

    #[inline]
    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.n_cols, index % self.n_cols)
    }

    pub fn location_rc(&self, row: usize, col: usize) -> Location {
        let (dlon, dlat) = self.spacing();
        Location::new(
            self.lon_min + col as f64 * dlon,
            self.lat_max - row as f64 * dlat,
        )
    }

    pub fn location(&self, index: usize) -> Location {
        let (r, c) = self.row_col(index);
        self.location_rc(r, c)
    }

    pub fn all_locations(&self) -> Vec<Location> {
        (0..self.cell_count()).map(|i| self.location(i)).collect()
    }

    /// Diagonal extent of the domain in degrees.
    pub fn diameter(&self) -> f64 {
        let dx = self.lon_max - self.lon_min;
        let dy = self.lat_max - self.lat_min;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Mean-function family: a constant or a linear surface in lon and lat.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrendKind {
    Constant,
    LinearLonLat,
}

impl TrendKind {
    pub fn rank(&self) -> usize {
        match self {
            TrendKind::Constant => 1,
            TrendKind::LinearLonLat => 3,
        }
    }

    pub fn design_row(&self, loc: &Location) -> Vec<f64> {
        match self {
            TrendKind::Constant => vec![1.0],
            TrendKind::LinearLonLat => vec![1.0, loc.lon, loc.lat],
        }
    }

    /// N×P design matrix for a set of locations.
    pub fn design_matrix(&self, locs: &[Location]) -> DenseMatrix {
        let p = self.rank();
        DenseMatrix::from_fn(locs.len(), p, |r, c| match (self, c) {
            (TrendKind::Constant, _) => 1.0,
            (TrendKind::LinearLonLat, 0) => 1.0,
            (TrendKind::LinearLonLat, 1) => locs[r].lon,
            (TrendKind::LinearLonLat, _) => locs[r].lat,
        })
    }
}

/// Trend specification; `coefficients` is present once fitted (or when the
/// trend is prescribed, as in simulation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSpec {
    pub kind: TrendKind,
    pub coefficients: Option<Vec<f64>>,
}

impl TrendSpec {
    pub fn constant() -> Self {
        Self { kind: TrendKind::Constant, coefficients: None }
    }

    pub fn constant_mean(mu: f64) -> Self {
        Self { kind: TrendKind::Constant, coefficients: Some(vec![mu]) }
    }

    pub fn linear(coefficients: Option<Vec<f64>>) -> Self {
        Self { kind: TrendKind::LinearLonLat, coefficients }
    }

    pub fn mean_at(&self, loc: &Location) -> f64 {
        let beta = self
            .coefficients
            .as_ref()
            .expect("trend coefficients not set");
        self.kind
            .design_row(loc)
            .iter()
            .zip(beta)
            .map(|(x, b)| x * b)
            .sum()
    }
}

/// Exponential-family covariance parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    /// Variance of the spatially correlated component.
    pub partial_sill: f64,
    /// Distance scale of the exponential correlation, degrees.
    pub range: f64,
    /// Variance of the spatially uncorrelated noise.
    pub nugget: f64,
}

impl CovarianceSpec {
    pub fn new(partial_sill: f64, range: f64, nugget: f64) -> Self {
        Self { partial_sill, range, nugget }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.partial_sill > 0.0) || !(self.range > 0.0) || !(self.nugget >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "covariance parameters out of range: sill={}, range={}, nugget={}",
                self.partial_sill, self.range, self.nugget
            )));
        }
        Ok(())
    }

    /// Marginal variance of an observation.
    #[inline]
    pub fn sill(&self) -> f64 {
        self.partial_sill + self.nugget
    }
}

/// Exponential covariance at distance `d`, with the nugget added only when
/// the two arguments are the same measurement.
#[inline]
pub fn cov_value(spec: &CovarianceSpec, d: f64, same_point: bool) -> f64 {
    debug_assert!(d >= 0.0);
    let c = spec.partial_sill * (-d / spec.range).exp();
    if same_point {
        c + spec.nugget
    } else {
        c
    }
}

/// Covariance matrix over a location set (nugget on the diagonal).
pub fn cov_matrix(spec: &CovarianceSpec, locs: &[Location]) -> DenseMatrix {
    use rayon::prelude::*;
    let n = locs.len();
    let mut data = vec![0.0; n * n];
    data.par_chunks_mut(n).enumerate().for_each(|(c, col)| {
        let sc = locs[c];
        for (r, v) in col.iter_mut().enumerate() {
            *v = if r == c {
                spec.sill()
            } else {
                cov_value(spec, locs[r].distance(&sc), false)
            };
        }
    });
    DenseMatrix::from_vec(n, n, data)
}

/// Cross-covariances from a target to a location set; the nugget is excluded
/// because a prediction is a new measurement even at zero distance.
pub fn cov_vec(spec: &CovarianceSpec, locs: &[Location], target: &Location) -> Vec<f64> {
    locs.iter()
        .map(|s| cov_value(spec, s.distance(target), false))
        .collect()
}

/// Gridded observations with a missingness mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpatialDataset {
    pub geometry: GridGeometry,
    values: Vec<f64>,
    observed: Vec<bool>,
    pub trend: TrendSpec,
}

impl SpatialDataset {
    /// `values[i]` is ignored (and stored as NaN) wherever `observed[i]` is false.
    pub fn new(
        geometry: GridGeometry,
        mut values: Vec<f64>,
        observed: Vec<bool>,
        trend: TrendSpec,
    ) -> Result<Self> {
        let n = geometry.cell_count();
        if values.len() != n || observed.len() != n {
            return Err(Error::GeometryMismatch(format!(
                "expected {n} cells, got {} values / {} mask entries",
                values.len(),
                observed.len()
            )));
        }
        for (v, &obs) in values.iter_mut().zip(&observed) {
            if obs {
                if !v.is_finite() {
                    return Err(Error::GeometryMismatch(
                        "observed cell carries a non-finite value".into(),
                    ));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { geometry, values, observed, trend })
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&b| b).count()
    }

    pub fn n_missing(&self) -> usize {
        self.geometry.cell_count() - self.n_observed()
    }

    pub fn is_observed(&self, index: usize) -> bool {
        self.observed[index]
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn value(&self, index: usize) -> Option<f64> {
        if self.observed[index] {
            Some(self.values[index])
        } else {
            None
        }
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.observed[i]).collect()
    }

    pub fn observed_values(&self) -> Vec<f64> {
        self.observed_indices().iter().map(|&i| self.values[i]).collect()
    }

    pub fn observed_locations(&self) -> Vec<Location> {
        self.observed_indices()
            .iter()
            .map(|&i| self.geometry.location(i))
            .collect()
    }

    /// Keep at most `max_n` observed cells, chosen uniformly from a seeded
    /// Fisher-Yates pass so subsampled fits are reproducible.
    pub fn subsample(&self, max_n: usize, seed: u64) -> SpatialDataset {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let idx = self.observed_indices();
        if idx.len() <= max_n {
            return self.clone();
        }
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut shuffled = idx;
        shuffled.shuffle(&mut rng);
        shuffled.truncate(max_n);
        let keep: std::collections::HashSet<usize> = shuffled.into_iter().collect();
        let observed: Vec<bool> = (0..self.values.len()).map(|i| keep.contains(&i)).collect();
        let values = self.values.clone();
        SpatialDataset::new(self.geometry.clone(), values, observed, self.trend.clone())
            .expect("subsample preserves geometry")
    }
}

/// One predicted location: mean, standard error, central 95% interval.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PredictionRow {
    pub location: Location,
    pub mean: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PredictionRow {
    /// Gaussian row: interval is mean ± z_{0.975}·se.
    pub fn gaussian(location: Location, mean: f64, variance: f64) -> Self {
        let se = variance.max(0.0).sqrt();
        Self {
            location,
            mean,
            se,
            lower: mean - Z_975 * se,
            upper: mean + Z_975 * se,
        }
    }
}

/// Predictions for a test set along with execution metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionResult {
    pub method: String,
    pub rows: Vec<PredictionRow>,
    /// Wall-clock seconds spent inside the method entry point.
    pub seconds: f64,
    pub cores_used: usize,
    /// Non-fatal issues raised along the way (dropped subsets, fallbacks).
    pub warnings: Vec<String>,
}

impl PredictionResult {
    pub fn new(method: impl Into<String>, rows: Vec<PredictionRow>) -> Self {
        Self {
            method: method.into(),
            rows,
            seconds: 0.0,
            cores_used: 1,
            warnings: Vec::new(),
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean).collect()
    }

    pub fn ses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.se).collect()
    }

    pub fn lowers(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lower).collect()
    }

    pub fn uppers(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.upper).collect()
    }
}
