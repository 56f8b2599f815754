//! Multiresolution radial basis systems: regular center grids per resolution
//! with spacing and support radius halving at each refinement.

use crate::gpcore::Location;

use super::kernels::{eval_bisquare, eval_wendland};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisFamily {
    Bisquare,
    Wendland,
}

/// One resolution: a regular grid of centers with a common support radius.
#[derive(Clone, Debug)]
pub struct Resolution {
    pub centers: Vec<Location>,
    /// Center-grid dimensions (rows, cols); rows run south to north here,
    /// the ordering only needs to be consistent for the lattice priors.
    pub grid: (usize, usize),
    /// Center spacing in degrees.
    pub spacing: f64,
    /// Support radius in degrees.
    pub scale: f64,
    /// Offset of this resolution's first basis index in the stacked system.
    pub offset: usize,
}

impl Resolution {
    fn lon_min(&self) -> f64 {
        self.centers[0].lon
    }
    fn lat_min(&self) -> f64 {
        self.centers[0].lat
    }
}

/// Stacked multiresolution basis.
#[derive(Clone, Debug)]
pub struct BasisSystem {
    pub resolutions: Vec<Resolution>,
    pub family: BasisFamily,
    pub total: usize,
}

/// Build `r_count` resolutions over the rectangle `lon_range` × `lat_range`.
/// The coarsest resolution uses `coarsest_spacing`; each refinement halves
/// the spacing and the support radius (`overlap` × spacing). Center grids
/// extend `margin_factor` support radii beyond the domain; a full radius
/// keeps the lattice normalization flat out to the boundary, zero keeps the
/// basis count minimal.
pub fn build_basis(
    lon_range: (f64, f64),
    lat_range: (f64, f64),
    r_count: usize,
    family: BasisFamily,
    coarsest_spacing: f64,
    overlap: f64,
    margin_factor: f64,
) -> BasisSystem {
    assert!(r_count >= 1);
    let mut resolutions = Vec::with_capacity(r_count);
    let mut offset = 0;
    for r in 0..r_count {
        let spacing = coarsest_spacing / (1 << r) as f64;
        let scale = overlap * spacing;
        let margin = margin_factor * scale;
        let (lon_lo, lon_hi) = (lon_range.0 - margin, lon_range.1 + margin);
        let (lat_lo, lat_hi) = (lat_range.0 - margin, lat_range.1 + margin);
        let n_cols = ((lon_hi - lon_lo) / spacing).floor() as usize + 1;
        let n_rows = ((lat_hi - lat_lo) / spacing).floor() as usize + 1;
        let mut centers = Vec::with_capacity(n_rows * n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                centers.push(Location::new(
                    lon_lo + j as f64 * spacing,
                    lat_lo + i as f64 * spacing,
                ));
            }
        }
        resolutions.push(Resolution {
            centers,
            grid: (n_rows, n_cols),
            spacing,
            scale,
            offset,
        });
        offset += n_rows * n_cols;
    }
    BasisSystem { resolutions, family, total: offset }
}

impl BasisSystem {
    /// Raw (un-normalized) basis values at `s` for one resolution, as
    /// (local index, value) pairs; only centers within the support appear.
    pub fn eval_resolution(&self, r: usize, s: &Location) -> Vec<(usize, f64)> {
        let res = &self.resolutions[r];
        let (n_rows, n_cols) = res.grid;
        let reach = (res.scale / res.spacing).ceil() as isize + 1;
        let jc = ((s.lon - res.lon_min()) / res.spacing).round() as isize;
        let ic = ((s.lat - res.lat_min()) / res.spacing).round() as isize;
        let mut out = Vec::new();
        for di in -reach..=reach {
            let i = ic + di;
            if i < 0 || i >= n_rows as isize {
                continue;
            }
            for dj in -reach..=reach {
                let j = jc + dj;
                if j < 0 || j >= n_cols as isize {
                    continue;
                }
                let idx = i as usize * n_cols + j as usize;
                let d = res.centers[idx].distance(s);
                let w = match self.family {
                    BasisFamily::Bisquare => eval_bisquare(d, res.scale),
                    BasisFamily::Wendland => eval_wendland(d / res.scale),
                };
                if w > 0.0 {
                    out.push((idx, w));
                }
            }
        }
        out
    }

    /// Stacked basis row at `s` with global indices.
    pub fn eval_row(&self, s: &Location) -> Vec<(usize, f64)> {
        let mut row = Vec::new();
        for r in 0..self.resolutions.len() {
            let off = self.resolutions[r].offset;
            for (j, w) in self.eval_resolution(r, s) {
                row.push((off + j, w));
            }
        }
        row
    }
}
