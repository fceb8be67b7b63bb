//! Similarity maps of one query embedding over a regular lat/lon grid.

use std::path::Path;

use crate::error::{GeoError, Result};
use crate::geodesy::GpsCoord;
use crate::linalg::{matmul_nt, norm, Matrix};
use crate::locenc::LocationEncoder;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major from the north-west corner, one entry per grid cell.
    pub coords: Vec<GpsCoord>,
    pub scores: Vec<f64>,
}

/// Cell centers of a `step_deg` grid, north to south, west to east.
pub fn grid_coords(step_deg: f64) -> Result<(usize, usize, Vec<GpsCoord>)> {
    if !(step_deg > 0.0 && step_deg <= 180.0) {
        return Err(GeoError::InvalidConfig(format!("grid step {step_deg} must be in (0, 180]")));
    }
    let rows = (180.0 / step_deg).floor() as usize;
    let cols = (360.0 / step_deg).floor() as usize;
    let lat_step = 180.0 / rows as f64;
    let lon_step = 360.0 / cols as f64;
    let mut coords = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let lat = 90.0 - lat_step * (i as f64 + 0.5);
        for j in 0..cols {
            coords.push(GpsCoord::new(lat, -180.0 + lon_step * (j as f64 + 0.5))?);
        }
    }
    Ok((rows, cols, coords))
}

/// Dot product of a unit-norm query with the location embedding of every grid point.
pub fn heatmap(query: &[f64], grid: &[GpsCoord], encoder: &LocationEncoder) -> Result<Vec<f64>> {
    let n = norm(query);
    if (n - 1.0).abs() > 1e-6 {
        return Err(GeoError::InvalidInput(format!("heatmap query has norm {n}")));
    }
    if query.len() != encoder.embed_dim() {
        return Err(GeoError::InvalidInput(format!(
            "query dimension {} does not match encoder dimension {}",
            query.len(),
            encoder.embed_dim()
        )));
    }
    let locs = encoder.encode_gps_batch(grid)?;
    let q = Matrix::from_rows(&[query])?;
    Ok(matmul_nt(&locs, &q, crate::linalg::Precision::F64)?.into_vec())
}

pub fn format_heatmap_csv(map: &Heatmap) -> String {
    let mut out = String::from("lat,lon,score\n");
    for (c, s) in map.coords.iter().zip(&map.scores) {
        out.push_str(&format!("{},{},{}\n", c.lat_deg, c.lon_deg, s));
    }
    out
}

pub fn write_heatmap_csv(map: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, format_heatmap_csv(map).as_bytes())
}

/// Binary 8-bit PGM, linearly stretched from the minimum to the maximum score.
/// A constant map renders mid-grey.
pub fn encode_heatmap_pgm(map: &Heatmap) -> Result<Vec<u8>> {
    if map.scores.len() != map.rows * map.cols {
        return Err(GeoError::InvalidInput(format!(
            "{} scores for a {}x{} grid",
            map.scores.len(),
            map.rows,
            map.cols
        )));
    }
    let lo = map.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", map.cols, map.rows).into_bytes();
    out.extend(map.scores.iter().map(|&s| {
        if hi > lo {
            ((s - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    Ok(out)
}

pub fn write_heatmap_pgm(map: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_heatmap_pgm(map)?)
}
