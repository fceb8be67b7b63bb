//! GPS galleries, exact top-k retrieval, radius-restricted search and
//! distance-threshold accuracy.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::{geodesic_distance_km, GpsCoord};
use crate::linalg::{matmul_nt, norm, Matrix, Precision};
use crate::locenc::LocationEncoder;
use crate::net::l2_normalize;

/// Accuracy thresholds reported by default, kilometers.
pub const DEFAULT_THRESHOLDS_KM: [f64; 5] = [1.0, 25.0, 200.0, 750.0, 2500.0];

/// Allowed deviation from unit norm for gallery rows and queries.
pub const GALLERY_NORM_TOL: f64 = 1e-6;

/// Gallery rows scored per block in batched retrieval.
const GALLERY_TILE: usize = 4096;
/// Queries scored per block in batched retrieval.
const QUERY_TILE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    TrainSample,
    Lattice,
    TestSet,
    Restricted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    coords: Vec<GpsCoord>,
    embeddings: Matrix,
    provenance: Provenance,
}

/// One retrieved gallery entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub index: usize,
    pub coord: GpsCoord,
    pub score: f64,
}

impl GalleryIndex {
    pub fn new(coords: Vec<GpsCoord>, embeddings: Matrix, provenance: Provenance) -> Result<Self> {
        if coords.is_empty() {
            return Err(GeoError::InvalidInput("gallery must not be empty".into()));
        }
        if coords.len() != embeddings.rows() {
            return Err(GeoError::InvalidInput(format!(
                "{} coordinates but {} embeddings",
                coords.len(),
                embeddings.rows()
            )));
        }
        for (i, row) in embeddings.row_iter().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > GALLERY_NORM_TOL {
                return Err(GeoError::InvalidInput(format!("gallery row {i} has norm {n}")));
            }
        }
        Ok(Self {
            coords,
            embeddings,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[GpsCoord] {
        &self.coords
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

pub fn build_gallery(
    coords: &[GpsCoord],
    encoder: &LocationEncoder,
    provenance: Provenance,
) -> Result<GalleryIndex> {
    let embeddings = encoder.encode_gps_batch(coords)?;
    GalleryIndex::new(coords.to_vec(), embeddings, provenance)
}

/// Indices of a uniform sample of `k` distinct entries out of `n`, in
/// sampled order.
pub fn sample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(GeoError::InvalidConfig(format!("cannot sample {k} of {n} coordinates")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n, k).into_vec())
}

/// Uniform sample of `k` distinct entries, in sampled order.
pub fn sample_training_coords(all: &[GpsCoord], k: usize, seed: u64) -> Result<Vec<GpsCoord>> {
    Ok(sample_indices(all.len(), k, seed)?.into_iter().map(|i| all[i]).collect())
}

/// Keeps the best `k` (score, index) pairs: higher score first, lower index on ties.
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn beats(a: (f64, usize), b: (f64, usize)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
    }

    fn offer(&mut self, score: f64, index: usize) {
        if self.items.len() == self.k {
            let worst = self.items[self.k - 1];
            if !Self::beats((score, index), worst) {
                return;
            }
            self.items.pop();
        }
        let pos = self
            .items
            .iter()
            .position(|&it| Self::beats((score, index), it))
            .unwrap_or(self.items.len());
        self.items.insert(pos, (score, index));
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(GeoError::InvalidConfig(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// Top-`k` gallery entries for each query row, scored by dot product.
///
/// Queries and gallery are traversed in fixed-size tiles; the result does not
/// depend on the tiling.
pub fn retrieve_topk_batch(queries: &Matrix, gallery: &GalleryIndex, k: usize) -> Result<Vec<Vec<Hit>>> {
    check_k(k, gallery.len())?;
    if queries.cols() != gallery.dim() {
        return Err(GeoError::InvalidInput(format!(
            "query dimension {} does not match gallery dimension {}",
            queries.cols(),
            gallery.dim()
        )));
    }
    let mut results = Vec::with_capacity(queries.rows());
    for q0 in (0..queries.rows()).step_by(QUERY_TILE) {
        let q_idx: Vec<usize> = (q0..(q0 + QUERY_TILE).min(queries.rows())).collect();
        let q_tile = queries.select_rows(&q_idx);
        let mut tops: Vec<TopK> = q_idx.iter().map(|_| TopK::new(k)).collect();
        for g0 in (0..gallery.len()).step_by(GALLERY_TILE) {
            let g_idx: Vec<usize> = (g0..(g0 + GALLERY_TILE).min(gallery.len())).collect();
            let g_tile = gallery.embeddings.select_rows(&g_idx);
            let scores = matmul_nt(&q_tile, &g_tile, Precision::F64)?;
            for (top, row) in tops.iter_mut().zip(scores.row_iter()) {
                for (off, &s) in row.iter().enumerate() {
                    top.offer(s, g0 + off);
                }
            }
        }
        results.extend(tops.into_iter().map(|t| {
            t.items
                .into_iter()
                .map(|(score, index)| Hit {
                    index,
                    coord: gallery.coords[index],
                    score,
                })
                .collect()
        }));
    }
    Ok(results)
}

pub fn retrieve_topk(query: &[f64], gallery: &GalleryIndex, k: usize) -> Result<Vec<Hit>> {
    let n = norm(query);
    if (n - 1.0).abs() > GALLERY_NORM_TOL {
        return Err(GeoError::InvalidInput(format!("query has norm {n}")));
    }
    let q = Matrix::from_rows(&[query])?;
    Ok(retrieve_topk_batch(&q, gallery, k)?.pop().unwrap_or_default())
}

/// Best gallery coordinate for every query row.
pub fn predict_top1(queries: &Matrix, gallery: &GalleryIndex) -> Result<Vec<GpsCoord>> {
    Ok(retrieve_topk_batch(queries, gallery, 1)?
        .into_iter()
        .map(|hits| hits[0].coord)
        .collect())
}

/// Mean of unit-norm view embeddings, renormalized.
pub fn average_views<R: AsRef<[f64]>>(views: &[R]) -> Result<Vec<f64>> {
    let first = views
        .first()
        .ok_or_else(|| GeoError::InvalidInput("no views to average".into()))?
        .as_ref();
    let mut mean = vec![0.0; first.len()];
    for (i, v) in views.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != mean.len() {
            return Err(GeoError::InvalidInput(format!("view {i} has dimension {}", v.len())));
        }
        let n = norm(v);
        if (n - 1.0).abs() > GALLERY_NORM_TOL {
            return Err(GeoError::InvalidInput(format!("view {i} has norm {n}")));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let scale = 1.0 / views.len() as f64;
    mean.iter_mut().for_each(|m| *m *= scale);
    l2_normalize(&mean)
}

/// Entries within `radius_km` of `center`.
pub fn restrict_gallery(gallery: &GalleryIndex, center: GpsCoord, radius_km: f64) -> Result<GalleryIndex> {
    if !(radius_km > 0.0) {
        return Err(GeoError::InvalidConfig(format!("radius {radius_km} km must be positive")));
    }
    let keep: Vec<usize> = gallery
        .coords
        .iter()
        .enumerate()
        .filter(|(_, &c)| geodesic_distance_km(c, center) <= radius_km)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(GeoError::EmptyRestriction {
            lat: center.lat_deg,
            lon: center.lon_deg,
            radius_km,
        });
    }
    Ok(GalleryIndex {
        coords: keep.iter().map(|&i| gallery.coords[i]).collect(),
        embeddings: gallery.embeddings.select_rows(&keep),
        provenance: Provenance::Restricted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub thresholds_km: Vec<f64>,
    /// Percentages in `[0, 100]`, aligned with `thresholds_km`.
    pub accuracy_pct: Vec<f64>,
    pub queries: usize,
}

impl ThresholdReport {
    /// Accuracy at the threshold equal to `km`, if reported.
    pub fn at(&self, km: f64) -> Option<f64> {
        self.thresholds_km
            .iter()
            .position(|&t| t == km)
            .map(|i| self.accuracy_pct[i])
    }
}

impl fmt::Display for ThresholdReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>12} {:>10}", "threshold", "accuracy")?;
        for (t, a) in self.thresholds_km.iter().zip(&self.accuracy_pct) {
            writeln!(f, "{:>9} km {:>9.2}%", t, a)?;
        }
        write!(f, "{} queries", self.queries)
    }
}

/// Share of predictions within each threshold of the truth. Thresholds are
/// reported in ascending order.
pub fn threshold_accuracy(pred: &[GpsCoord], truth: &[GpsCoord], thresholds_km: &[f64]) -> Result<ThresholdReport> {
    if pred.len() != truth.len() {
        return Err(GeoError::InvalidInput(format!(
            "{} predictions for {} ground-truth coordinates",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(GeoError::InvalidInput("no predictions to score".into()));
    }
    let mut thresholds = thresholds_km.to_vec();
    if thresholds.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(GeoError::InvalidConfig("thresholds must be finite and non-negative".into()));
    }
    thresholds.sort_by(f64::total_cmp);
    let distances: Vec<f64> = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| geodesic_distance_km(p, t))
        .collect();
    let accuracy_pct = thresholds
        .iter()
        .map(|&t| 100.0 * distances.iter().filter(|&&d| d <= t).count() as f64 / pred.len() as f64)
        .collect();
    Ok(ThresholdReport {
        thresholds_km: thresholds,
        accuracy_pct,
        queries: pred.len(),
    })
}
