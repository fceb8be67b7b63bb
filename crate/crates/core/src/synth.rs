//! Synthetic geolocation worlds for end-to-end checks.
//!
//! Photo locations are generated hierarchically (regions, cities, landmarks,
//! photos) so that every accuracy threshold from 1 km to 2500 km separates
//! good from bad models. Image features come from a frozen, randomly
//! initialized "teacher" location encoder evaluated at the photo location,
//! plus independent Gaussian noise per view.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::{geodesic_distance_km, perturb_coord, GpsCoord};
use crate::linalg::Matrix;
use crate::locenc::{EncoderConfig, LocationEncoder};
use crate::net::ImageHead;
use crate::trainer::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub regions: usize,
    pub cities_per_region: usize,
    pub landmarks_per_city: usize,
    pub train: usize,
    pub held_out: usize,
    pub views: usize,
    /// Standard deviations of each level around its parent.
    pub region_spread_km: f64,
    pub landmark_spread_km: f64,
    pub photo_spread_m: f64,
    /// Minimum distance between any two cities.
    pub min_city_separation_km: f64,
    /// Per-dimension noise added to the teacher output.
    pub feature_noise: f64,
    pub teacher: EncoderConfig,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            regions: 20,
            cities_per_region: 10,
            landmarks_per_city: 5,
            train: 5000,
            held_out: 500,
            views: 1,
            region_spread_km: 400.0,
            landmark_spread_km: 10.0,
            photo_spread_m: 200.0,
            min_city_separation_km: 50.0,
            feature_noise: 0.005,
            teacher: EncoderConfig {
                branches: 3,
                sigma_min: 1.0,
                sigma_max: 256.0,
                rff_dim: 256,
                hidden_dim: 256,
                hidden_layers: 2,
                embed_dim: ImageHead::FEATURE_DIM,
                seed: 0x7eac_4e12,
            },
            seed: 0,
        }
    }
}

impl WorldConfig {
    /// The small world bundled as the command-line fixture: 200 training and
    /// 50 held-out photos.
    pub fn fixture() -> Self {
        Self {
            regions: 5,
            cities_per_region: 4,
            landmarks_per_city: 2,
            train: 200,
            held_out: 50,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub train: Dataset,
    /// `held_out * views` feature rows, sample-major.
    pub held_out_features: Matrix,
    pub held_out_coords: Vec<GpsCoord>,
    pub landmarks: Vec<GpsCoord>,
    pub teacher: LocationEncoder,
}

fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R) -> GpsCoord {
    loop {
        let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-9 {
            let lat = (v[2] / n).clamp(-1.0, 1.0).asin().to_degrees();
            let lon = v[1].atan2(v[0]).to_degrees();
            return GpsCoord::clamped(lat, lon);
        }
    }
}

fn place_cities<R: Rng + ?Sized>(cfg: &WorldConfig, rng: &mut R) -> Result<Vec<GpsCoord>> {
    const MAX_TRIES: usize = 10_000;
    let mut cities: Vec<GpsCoord> = Vec::with_capacity(cfg.regions * cfg.cities_per_region);
    for _ in 0..cfg.regions {
        let center = uniform_on_sphere(rng);
        for _ in 0..cfg.cities_per_region {
            let mut placed = false;
            for _ in 0..MAX_TRIES {
                let c = perturb_coord(center, cfg.region_spread_km * 1000.0, rng);
                if cities
                    .iter()
                    .all(|&o| geodesic_distance_km(o, c) >= cfg.min_city_separation_km)
                {
                    cities.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(GeoError::InvalidConfig(format!(
                    "cannot keep cities {} km apart; widen the regions",
                    cfg.min_city_separation_km
                )));
            }
        }
    }
    Ok(cities)
}

fn teacher_features<R: Rng + ?Sized>(
    teacher: &LocationEncoder,
    coords: &[GpsCoord],
    views: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Matrix> {
    let clean = teacher.encode_gps_batch(coords)?;
    let dist = Normal::new(0.0, noise).map_err(|e| GeoError::InvalidConfig(format!("feature noise: {e}")))?;
    let mut out = Matrix::zeros(coords.len() * views, clean.cols());
    for i in 0..coords.len() {
        for j in 0..views {
            let row = out.row_mut(i * views + j);
            for (o, &c) in row.iter_mut().zip(clean.row(i)) {
                *o = c + dist.sample(rng);
            }
        }
    }
    Ok(out)
}

pub fn generate_world(cfg: &WorldConfig) -> Result<SyntheticWorld> {
    let levels = [cfg.regions, cfg.cities_per_region, cfg.landmarks_per_city, cfg.train, cfg.views];
    if levels.contains(&0) {
        return Err(GeoError::InvalidConfig("every level of the world needs at least one entry".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cities = place_cities(cfg, &mut rng)?;
    let landmarks: Vec<GpsCoord> = cities
        .iter()
        .flat_map(|&c| {
            (0..cfg.landmarks_per_city)
                .map(|_| perturb_coord(c, cfg.landmark_spread_km * 1000.0, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();

    // Photos cycle through the landmarks in a shuffled order so every
    // landmark is covered as evenly as the counts allow.
    let photo = |rng: &mut ChaCha8Rng, k: usize| {
        let l = landmarks[k % landmarks.len()];
        perturb_coord(l, cfg.photo_spread_m, rng)
    };
    let mut slots: Vec<usize> = (0..cfg.train + cfg.held_out).collect();
    rand::seq::SliceRandom::shuffle(slots.as_mut_slice(), &mut rng);
    let all: Vec<GpsCoord> = slots.iter().map(|&k| photo(&mut rng, k)).collect();
    let (train_coords, held_coords) = all.split_at(cfg.train);

    let teacher = LocationEncoder::new(&cfg.teacher)?;
    let train_feats = teacher_features(&teacher, train_coords, cfg.views, cfg.feature_noise, &mut rng)?;
    let held_feats = if held_coords.is_empty() {
        Matrix::zeros(0, teacher.embed_dim())
    } else {
        teacher_features(&teacher, held_coords, cfg.views, cfg.feature_noise, &mut rng)?
    };

    Ok(SyntheticWorld {
        train: Dataset::new(train_feats, cfg.views, train_coords.to_vec())?,
        held_out_features: held_feats,
        held_out_coords: held_coords.to_vec(),
        landmarks,
        teacher,
    })
}
