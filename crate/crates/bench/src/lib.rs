//! Seeded inputs shared by the benchmarks.

use geoclip_core::net::normalize_rows;
use geoclip_core::{GpsCoord, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_coords(n: usize, seed: u64) -> Vec<GpsCoord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GpsCoord::clamped(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0)))
        .collect()
}

/// `rows × dim` matrix of unit-norm rows.
pub fn unit_rows(rows: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = Matrix::from_vec(rows, dim, data).expect("sized above");
    normalize_rows(&m).expect("nonzero rows").0
}
