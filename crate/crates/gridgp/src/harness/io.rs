//! Dataset files and run artifacts.
//!
//! Datasets are CSV with header `lon,lat,value`, literal `NA` for missing
//! cells, rows in row-major order from the north-west corner southward. An
//! optional comment line `# geometry <nrows> <ncols> <lonmin> <lonmax>
//! <latmin> <latmax>` is validated against the parsed grid when present.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gpcore::{GridGeometry, SpatialDataset, TrendSpec};

/// Parse a grid CSV into a dataset with the given trend family.
pub fn load_dataset(path: &Path, trend: TrendSpec) -> Result<SpatialDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, trend)
}

pub fn parse_dataset(text: &str, trend: TrendSpec) -> Result<SpatialDataset> {
    let mut declared: Option<(usize, usize, f64, f64, f64, f64)> = None;
    let mut rows: Vec<(f64, f64, Option<f64>)> = Vec::new();
    let mut header_seen = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(geo) = rest.strip_prefix("geometry") {
                let parts: Vec<&str> = geo.split_whitespace().collect();
                if parts.len() != 6 {
                    return Err(Error::ParseError {
                        line: lineno,
                        message: "geometry header needs 6 fields".into(),
                    });
                }
                let nums: std::result::Result<Vec<f64>, _> =
                    parts.iter().map(|p| p.parse::<f64>()).collect();
                let nums = nums.map_err(|e| Error::ParseError {
                    line: lineno,
                    message: format!("bad geometry header: {e}"),
                })?;
                declared = Some((
                    nums[0] as usize,
                    nums[1] as usize,
                    nums[2],
                    nums[3],
                    nums[4],
                    nums[5],
                ));
            }
            continue;
        }
        if !header_seen {
            if line.eq_ignore_ascii_case("lon,lat,value") {
                header_seen = true;
                continue;
            }
            return Err(Error::ParseError {
                line: lineno,
                message: format!("expected header 'lon,lat,value', found '{line}'"),
            });
        }
        let mut parts = line.split(',');
        let lon: f64 = parts
            .next()
            .ok_or_else(|| Error::ParseError { line: lineno, message: "missing lon".into() })?
            .trim()
            .parse()
            .map_err(|e| Error::ParseError { line: lineno, message: format!("bad lon: {e}") })?;
        let lat: f64 = parts
            .next()
            .ok_or_else(|| Error::ParseError { line: lineno, message: "missing lat".into() })?
            .trim()
            .parse()
            .map_err(|e| Error::ParseError { line: lineno, message: format!("bad lat: {e}") })?;
        let value_str = parts
            .next()
            .ok_or_else(|| Error::ParseError { line: lineno, message: "missing value".into() })?
            .trim();
        if parts.next().is_some() {
            return Err(Error::ParseError {
                line: lineno,
                message: "too many fields".into(),
            });
        }
        let value = if value_str.eq_ignore_ascii_case("na") {
            None
        } else {
            Some(value_str.parse::<f64>().map_err(|e| Error::ParseError {
                line: lineno,
                message: format!("bad value: {e}"),
            })?)
        };
        rows.push((lon, lat, value));
    }
    if rows.is_empty() {
        return Err(Error::ParseError { line: 0, message: "no data rows".into() });
    }

    // Infer the grid from the coordinate sets.
    let mut lons: Vec<f64> = rows.iter().map(|r| r.0).collect();
    lons.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lons.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut lats: Vec<f64> = rows.iter().map(|r| r.1).collect();
    lats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lats.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let (n_cols, n_rows) = (lons.len(), lats.len());
    if n_rows * n_cols != rows.len() {
        return Err(Error::GeometryMismatch(format!(
            "{} rows cannot tile a {}x{} grid",
            rows.len(),
            n_rows,
            n_cols
        )));
    }
    let geometry = GridGeometry::new(
        n_rows,
        n_cols,
        (lons[0], lons[n_cols - 1]),
        (lats[0], lats[n_rows - 1]),
    );
    if let Some((dr, dc, lon0, lon1, lat0, lat1)) = declared {
        if dr != n_rows
            || dc != n_cols
            || (lon0 - geometry.lon_min).abs() > 1e-6
            || (lon1 - geometry.lon_max).abs() > 1e-6
            || (lat0 - geometry.lat_min).abs() > 1e-6
            || (lat1 - geometry.lat_max).abs() > 1e-6
        {
            return Err(Error::GeometryMismatch(format!(
                "declared geometry {dr}x{dc} lon {lon0}:{lon1} lat {lat0}:{lat1} does not match parsed {n_rows}x{n_cols}"
            )));
        }
    }

    let (dlon, dlat) = geometry.spacing();
    let mut values = vec![f64::NAN; n_rows * n_cols];
    let mut observed = vec![false; n_rows * n_cols];
    let mut filled = vec![false; n_rows * n_cols];
    for (i, &(lon, lat, value)) in rows.iter().enumerate() {
        let c = if n_cols > 1 { ((lon - geometry.lon_min) / dlon).round() as usize } else { 0 };
        let r = if n_rows > 1 { ((geometry.lat_max - lat) / dlat).round() as usize } else { 0 };
        if r >= n_rows || c >= n_cols {
            return Err(Error::GeometryMismatch(format!(
                "row {i} maps outside the grid"
            )));
        }
        let idx = geometry.index_of(r, c);
        if filled[idx] {
            return Err(Error::GeometryMismatch(format!(
                "duplicate cell at lon {lon}, lat {lat}"
            )));
        }
        filled[idx] = true;
        if let Some(v) = value {
            values[idx] = v;
            observed[idx] = true;
        }
    }
    SpatialDataset::new(geometry, values, observed, trend)
}

/// Write a dataset in the same format, row-major north to south, with a
/// geometry header.
pub fn save_dataset(dataset: &SpatialDataset, path: &Path) -> Result<()> {
    let g = &dataset.geometry;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# geometry {} {} {} {} {} {}",
        g.n_rows, g.n_cols, g.lon_min, g.lon_max, g.lat_min, g.lat_max
    );
    out.push_str("lon,lat,value\n");
    for idx in 0..g.cell_count() {
        let loc = g.location(idx);
        match dataset.value(idx) {
            Some(v) => {
                let _ = writeln!(out, "{},{},{}", loc.lon, loc.lat, v);
            }
            None => {
                let _ = writeln!(out, "{},{},NA", loc.lon, loc.lat);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// 8-bit binary PGM heatmap of a full grid of optional values. The mapping is
/// linear from `vmin..vmax` onto gray 1..255; cells without a value are 0.
pub fn write_pgm(
    values: &[Option<f64>],
    geometry: &GridGeometry,
    vmin: f64,
    vmax: f64,
    path: &Path,
) -> Result<()> {
    let (h, w) = (geometry.n_rows, geometry.n_cols);
    assert_eq!(values.len(), h * w);
    let mut bytes = Vec::with_capacity(64 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    let span = (vmax - vmin).max(1e-300);
    for v in values {
        let b = match v {
            Some(x) => {
                let t = ((x - vmin) / span).clamp(0.0, 1.0);
                1 + (t * 254.0).round() as u8
            }
            None => 0u8,
        };
        bytes.push(b);
    }
    fs::write(path, bytes)?;
    Ok(())
}
