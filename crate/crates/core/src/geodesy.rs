//! Coordinate handling on the sphere: the Equal Earth projection used as the
//! encoder's input transform, haversine distances, metric noise on GPS
//! coordinates, Fibonacci lattices and land masks for gallery construction.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

/// Mean Earth radius used for every distance in this crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Meters per degree of latitude in the local tangent-plane approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

const MIN_COS_LAT: f64 = 0.01;

/// Polynomial coefficients of the Equal Earth projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EepConstants {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
}

pub const EEP: EepConstants = EepConstants {
    p1: 1.340264,
    p2: -0.081106,
    p3: 0.000893,
    p4: 0.003796,
};

/// Latitude/longitude pair in degrees.
///
/// Latitude lies in `[-90, 90]`. Longitudes outside `[-180, 180]` are wrapped
/// into `[-180, 180)`; the antimeridian value `180` itself is kept as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsCoord {
    pub lat_deg: f64,
    pub lon_deg: f64,
}

impl GpsCoord {
    pub fn new(lat_deg: f64, lon_deg: f64) -> Result<Self> {
        if !lat_deg.is_finite() || !lon_deg.is_finite() {
            return Err(GeoError::InvalidInput(format!(
                "non-finite coordinate ({lat_deg}, {lon_deg})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat_deg) {
            return Err(GeoError::InvalidInput(format!(
                "latitude {lat_deg} outside [-90, 90]"
            )));
        }
        Ok(Self {
            lat_deg,
            lon_deg: normalize_lon(lon_deg),
        })
    }

    /// Clamps latitude and wraps longitude instead of rejecting.
    pub fn clamped(lat_deg: f64, lon_deg: f64) -> Self {
        Self {
            lat_deg: lat_deg.clamp(-90.0, 90.0),
            lon_deg: normalize_lon(lon_deg),
        }
    }
}

fn normalize_lon(lon: f64) -> f64 {
    if (-180.0..=180.0).contains(&lon) {
        lon
    } else {
        (lon + 180.0).rem_euclid(360.0) - 180.0
    }
}

/// Equal Earth coordinates divided by the equatorial extent, so `x` spans
/// `[-1, 1]` and `y` shares the same scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCoord {
    pub x: f64,
    pub y: f64,
}

fn eep_raw(lat_rad: f64, lon_rad: f64) -> (f64, f64) {
    let EepConstants { p1, p2, p3, p4 } = EEP;
    let theta = ((3.0f64).sqrt() / 2.0 * lat_rad.sin()).asin();
    let t2 = theta * theta;
    let t6 = t2 * t2 * t2;
    let t8 = t6 * t2;
    let x = 2.0 * (3.0f64).sqrt() * lon_rad * theta.cos()
        / (3.0 * (9.0 * p4 * t8 + 7.0 * p3 * t6 + 3.0 * p2 * t2 + p1));
    let y = theta * (p4 * t8 + p3 * t6 + p2 * t2 + p1);
    (x, y)
}

/// `x_raw` at the equator on the antimeridian: the largest `|x|` of the
/// projection.
pub fn eep_x_max() -> f64 {
    eep_raw(0.0, PI).0
}

pub fn eep_project(coord: GpsCoord) -> ProjectedCoord {
    let (x, y) = eep_raw(coord.lat_deg.to_radians(), coord.lon_deg.to_radians());
    let scale = eep_x_max();
    ProjectedCoord {
        x: x / scale,
        y: y / scale,
    }
}

/// Haversine great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn geodesic_distance_km(a: GpsCoord, b: GpsCoord) -> f64 {
    let lat1 = a.lat_deg.to_radians();
    let lat2 = b.lat_deg.to_radians();
    let half_dlat = (lat2 - lat1) * 0.5;
    let half_dlon = (b.lon_deg - a.lon_deg).to_radians() * 0.5;
    let h = half_dlat.sin().powi(2) + lat1.cos() * lat2.cos() * half_dlon.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Adds independent north/east Gaussian displacements of `sigma_meters`.
///
/// Two standard normals are drawn per call, even when `sigma_meters` is zero,
/// so the RNG stream does not depend on the noise level.
pub fn perturb_coord<R: Rng + ?Sized>(coord: GpsCoord, sigma_meters: f64, rng: &mut R) -> GpsCoord {
    let north: f64 = rng.sample(StandardNormal);
    let east: f64 = rng.sample(StandardNormal);
    let cos_lat = coord.lat_deg.to_radians().cos().max(MIN_COS_LAT);
    let dlat = north * sigma_meters / METERS_PER_DEGREE;
    let dlon = east * sigma_meters / (METERS_PER_DEGREE * cos_lat);
    GpsCoord::clamped(coord.lat_deg + dlat, coord.lon_deg + dlon)
}

/// Golden-angle spiral with `n` points, equal-area bands in `z`.
pub fn fibonacci_lattice(n: usize) -> Result<Vec<GpsCoord>> {
    if n == 0 {
        return Err(GeoError::InvalidConfig("lattice needs at least one point".into()));
    }
    let golden_angle = PI * (3.0 - 5.0f64.sqrt());
    let coords = (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let lon = (k as f64 * golden_angle).rem_euclid(2.0 * PI);
            GpsCoord::clamped(z.asin().to_degrees(), lon.to_degrees())
        })
        .collect();
    Ok(coords)
}

/// Regular lat/lon boolean raster; row 0 is the northernmost band.
#[derive(Debug, Clone, PartialEq)]
pub struct LandMask {
    rows: usize,
    cols: usize,
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
    cells: Vec<bool>,
}

impl LandMask {
    pub fn new(
        rows: usize,
        cols: usize,
        lat_range: (f64, f64),
        lon_range: (f64, f64),
        cells: Vec<bool>,
    ) -> Result<Self> {
        let (lat_min, lat_max) = lat_range;
        let (lon_min, lon_max) = lon_range;
        if rows == 0 || cols == 0 {
            return Err(GeoError::Format("land mask must have at least one cell".into()));
        }
        if !(lat_min < lat_max && lon_min < lon_max) {
            return Err(GeoError::Format(format!(
                "land mask bounds are empty: lat [{lat_min}, {lat_max}], lon [{lon_min}, {lon_max}]"
            )));
        }
        if cells.len() != rows * cols {
            return Err(GeoError::Format(format!(
                "land mask has {} cells, header says {rows}x{cols}",
                cells.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            lat_min,
            lat_max,
            lon_min,
            lon_max,
            cells,
        })
    }

    /// Parses `LANDMASK <rows> <cols> <lat_min> <lat_max> <lon_min> <lon_max>`
    /// followed by `rows` lines of `cols` characters, each `0` or `1`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GeoError::Format("empty land mask".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "LANDMASK" {
            return Err(GeoError::Format(format!("bad land mask header: {header:?}")));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| GeoError::Format(format!("bad land mask dimension {s:?}")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| GeoError::Format(format!("bad land mask bound {s:?}")))
        };
        let rows = int(fields[1])?;
        let cols = int(fields[2])?;
        let lat = (num(fields[3])?, num(fields[4])?);
        let lon = (num(fields[5])?, num(fields[6])?);

        let mut cells = Vec::with_capacity(rows * cols);
        for (r, line) in lines.enumerate() {
            let line = line.trim();
            if line.len() != cols {
                return Err(GeoError::Format(format!(
                    "land mask row {r} has {} cells, expected {cols}",
                    line.len()
                )));
            }
            for ch in line.chars() {
                match ch {
                    '0' => cells.push(false),
                    '1' => cells.push(true),
                    other => {
                        return Err(GeoError::Format(format!(
                            "land mask row {r} contains {other:?}"
                        )))
                    }
                }
            }
        }
        Self::new(rows, cols, lat, lon, cells)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&crate::io::read_text(path.as_ref())?)
    }

    /// Whether the cell containing `coord` is land. Points on the southern or
    /// eastern edge belong to the last row or column.
    pub fn is_land(&self, coord: GpsCoord) -> Result<bool> {
        let GpsCoord { lat_deg, lon_deg } = coord;
        if !(self.lat_min..=self.lat_max).contains(&lat_deg)
            || !(self.lon_min..=self.lon_max).contains(&lon_deg)
        {
            return Err(GeoError::RejectedInput(format!(
                "({lat_deg}, {lon_deg}) outside land mask coverage"
            )));
        }
        let row_h = (self.lat_max - self.lat_min) / self.rows as f64;
        let col_w = (self.lon_max - self.lon_min) / self.cols as f64;
        let row = (((self.lat_max - lat_deg) / row_h) as usize).min(self.rows - 1);
        let col = (((lon_deg - self.lon_min) / col_w) as usize).min(self.cols - 1);
        Ok(self.cells[row * self.cols + col])
    }
}

pub fn land_filter(coords: &[GpsCoord], mask: &LandMask) -> Result<Vec<GpsCoord>> {
    let mut kept = Vec::new();
    for (i, &c) in coords.iter().enumerate() {
        if mask.is_land(c).map_err(|e| e.at(i))? {
            kept.push(c);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(lat: f64, lon: f64) -> GpsCoord {
        GpsCoord::new(lat, lon).unwrap()
    }

    #[test]
    fn rejects_bad_latitude() {
        assert!(GpsCoord::new(90.5, 0.0).is_err());
        assert!(GpsCoord::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn wraps_longitude() {
        assert_eq!(c(0.0, 190.0).lon_deg, -170.0);
        assert_eq!(c(0.0, -540.0).lon_deg, -180.0);
        assert_eq!(c(0.0, 180.0).lon_deg, 180.0);
    }

    #[test]
    fn eep_origin_and_antimeridian() {
        let p = eep_project(c(0.0, 0.0));
        assert_eq!((p.x, p.y), (0.0, 0.0));
        let p = eep_project(c(0.0, 180.0));
        assert_eq!((p.x, p.y), (1.0, 0.0));
    }

    #[test]
    fn eep_matches_high_precision_reference() {
        // mpmath, 40 digits
        let p = eep_project(c(40.0, -74.0));
        let (x, y) = (-0.364_370_473_641_117_7, 0.286_193_975_750_292_9);
        assert!(((p.x - x) / x).abs() < 1e-9, "{}", p.x);
        assert!(((p.y - y) / y).abs() < 1e-9, "{}", p.y);
        let pole = eep_project(c(90.0, 0.0));
        assert!((pole.y - 0.486_716_975_387_404_5).abs() < 1e-12);
    }

    #[test]
    fn haversine_reference_distances() {
        assert_eq!(geodesic_distance_km(c(12.0, 34.0), c(12.0, 34.0)), 0.0);
        let d = geodesic_distance_km(c(0.0, 0.0), c(0.0, 1.0));
        assert!((d - 111.194_926_644_559).abs() < 1e-3);
        let d = geodesic_distance_km(c(0.0, 0.0), c(0.0, 180.0));
        assert!((d - 20_015.086_796_020_6).abs() < 1e-2);
    }

    #[test]
    fn zero_noise_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in [c(10.0, 20.0), c(-90.0, 180.0), c(89.9, -180.0)] {
            assert_eq!(perturb_coord(g, 0.0, &mut rng), g);
        }
    }

    fn noise_std(lat: f64, sigma: f64, n: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = c(lat, 0.0);
        let (mut s_lat, mut s_lon) = (0.0, 0.0);
        for _ in 0..n {
            let p = perturb_coord(g, sigma, &mut rng);
            s_lat += (p.lat_deg - lat).powi(2);
            s_lon += p.lon_deg.powi(2);
        }
        ((s_lat / n as f64).sqrt(), (s_lon / n as f64).sqrt())
    }

    #[test]
    fn noise_scale_in_degrees() {
        let (lat_std, _) = noise_std(0.0, 150.0, 100_000);
        let expected = 150.0 / METERS_PER_DEGREE;
        assert!((lat_std / expected - 1.0).abs() < 0.03, "{lat_std} vs {expected}");
    }

    #[test]
    fn noise_longitude_stretch_at_sixty_degrees() {
        let (lat_std, lon_std) = noise_std(60.0, 1000.0, 100_000);
        assert!((lon_std / lat_std - 2.0).abs() < 0.05, "{}", lon_std / lat_std);
    }

    #[test]
    fn perturb_is_reproducible() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..100)
                .map(|i| perturb_coord(c(i as f64 * 0.5, i as f64), 500.0, &mut rng))
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.lat_deg.to_bits(), q.lat_deg.to_bits());
            assert_eq!(p.lon_deg.to_bits(), q.lon_deg.to_bits());
        }
    }

    #[test]
    fn lattice_single_point() {
        let pts = fibonacci_lattice(1).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(GpsCoord::new(pts[0].lat_deg, pts[0].lon_deg).is_ok());
        assert!(fibonacci_lattice(0).is_err());
    }

    #[test]
    fn lattice_spacing_brute_force() {
        let n = 1000;
        let pts = fibonacci_lattice(n).unwrap();
        let mut min_d = f64::INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                min_d = min_d.min(geodesic_distance_km(pts[i], pts[j]));
            }
        }
        let side = (4.0 * PI * EARTH_RADIUS_KM * EARTH_RADIUS_KM / n as f64).sqrt();
        assert!((min_d / side - 1.0).abs() < 0.3, "min {min_d} side {side}");
    }

    #[test]
    fn lattice_is_balanced_about_equator() {
        let pts = fibonacci_lattice(100).unwrap();
        let mean = pts.iter().map(|p| p.lat_deg).sum::<f64>() / 100.0;
        assert!(mean.abs() < 2.0, "{mean}");
    }

    #[test]
    fn land_filter_trivial_masks() {
        let coords = fibonacci_lattice(50).unwrap();
        let all = LandMask::new(1, 1, (-90.0, 90.0), (-180.0, 180.0), vec![true]).unwrap();
        assert_eq!(land_filter(&coords, &all).unwrap(), coords);
        let none = LandMask::new(1, 1, (-90.0, 90.0), (-180.0, 180.0), vec![false]).unwrap();
        assert!(land_filter(&coords, &none).unwrap().is_empty());
    }

    #[test]
    fn land_filter_checkerboard() {
        let mask = LandMask::parse("LANDMASK 2 2 -90 90 -180 180\n10\n01\n").unwrap();
        let centers = [c(45.0, -90.0), c(45.0, 90.0), c(-45.0, -90.0), c(-45.0, 90.0)];
        assert_eq!(
            land_filter(&centers, &mask).unwrap(),
            vec![c(45.0, -90.0), c(-45.0, 90.0)]
        );
    }

    #[test]
    fn land_filter_rejects_uncovered_points() {
        let mask = LandMask::parse("LANDMASK 1 1 0 10 0 10\n1\n").unwrap();
        let err = land_filter(&[c(5.0, 5.0), c(20.0, 5.0)], &mask).unwrap_err();
        assert_eq!(err.kind(), "rejected-input");
        assert!(err.to_string().starts_with("item 1"));
    }

    #[test]
    fn land_mask_parse_errors() {
        assert!(LandMask::parse("").is_err());
        assert!(LandMask::parse("LANDMASK 1 2 0 1 0 1\n1\n").is_err());
        assert!(LandMask::parse("LANDMASK 1 1 0 1 0 1\n2\n").is_err());
        assert!(LandMask::parse("MASK 1 1 0 1 0 1\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn eep_odd_symmetry(lat in -90.0f64..=90.0, lon in -180.0f64..=180.0) {
            let p = eep_project(c(lat, lon));
            prop_assert_eq!(eep_project(c(-lat, lon)).y, -p.y);
            prop_assert_eq!(eep_project(c(lat, -lon)).x, -p.x);
        }

        #[test]
        fn haversine_symmetric_and_triangle(
            a in (-90.0f64..=90.0, -180.0f64..180.0),
            b in (-90.0f64..=90.0, -180.0f64..180.0),
            m in (-90.0f64..=90.0, -180.0f64..180.0),
        ) {
            let (a, b, m) = (c(a.0, a.1), c(b.0, b.1), c(m.0, m.1));
            let ab = geodesic_distance_km(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - geodesic_distance_km(b, a)).abs() < 1e-9);
            prop_assert!(ab <= geodesic_distance_km(a, m) + geodesic_distance_km(m, b) + 1e-9);
        }
    }
}
