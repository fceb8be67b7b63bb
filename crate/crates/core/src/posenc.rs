//! Random Fourier feature encoding of projected coordinates and the
//! exponentially spaced frequency scales of the encoder branches.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::ProjectedCoord;
use crate::linalg::Matrix;

/// Geometric progression of `M` Gaussian scales from `sigma_min` to `sigma_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSchedule {
    sigma_min: f64,
    sigma_max: f64,
    values: Vec<f64>,
}

impl SigmaSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, branches: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min.is_finite() && sigma_max.is_finite()) {
            return Err(GeoError::InvalidConfig(format!(
                "sigma range [{sigma_min}, {sigma_max}] must be positive and finite"
            )));
        }
        if sigma_max < sigma_min {
            return Err(GeoError::InvalidConfig(format!(
                "sigma_max {sigma_max} is below sigma_min {sigma_min}"
            )));
        }
        let values = match branches {
            0 => return Err(GeoError::InvalidConfig("at least one branch is required".into())),
            1 if sigma_min != sigma_max => {
                return Err(GeoError::InvalidConfig(format!(
                    "a single branch needs sigma_min == sigma_max, got {sigma_min} and {sigma_max}"
                )))
            }
            1 => vec![sigma_min],
            m => {
                let lo = sigma_min.log2();
                let span = sigma_max.log2() - lo;
                (0..m)
                    .map(|i| (lo + i as f64 * span / (m - 1) as f64).exp2())
                    .collect()
            }
        };
        Ok(Self {
            sigma_min,
            sigma_max,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }
}

/// Frozen Gaussian frequency matrix `R` of shape `(dim_out / 2) x 2`.
///
/// The encoding is `[cos(2πRp), sin(2πRp)]`, cosine block first, without any
/// output scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffLayer {
    freqs: Matrix,
    sigma: f64,
    seed: u64,
}

impl RffLayer {
    pub fn new(dim_out: usize, sigma: f64, seed: u64) -> Result<Self> {
        if dim_out < 2 || dim_out % 2 != 0 {
            return Err(GeoError::InvalidConfig(format!(
                "RFF output dimension must be even and at least 2, got {dim_out}"
            )));
        }
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| GeoError::InvalidConfig(format!("bad sigma {sigma}: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim_out).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self {
            freqs: Matrix::from_vec(dim_out / 2, 2, data)?,
            sigma,
            seed,
        })
    }

    /// Layer with an explicit frequency matrix (one `[rx, ry]` row per pair).
    pub fn from_frequencies(freqs: Matrix) -> Result<Self> {
        if freqs.cols() != 2 || freqs.rows() == 0 {
            return Err(GeoError::InvalidConfig(format!(
                "frequency matrix must be n x 2, got {}x{}",
                freqs.rows(),
                freqs.cols()
            )));
        }
        Ok(Self {
            freqs,
            sigma: 0.0,
            seed: 0,
        })
    }

    pub fn dim_out(&self) -> usize {
        2 * self.freqs.rows()
    }

    /// Scale the frequencies were drawn with; `0.0` for explicit matrices.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.freqs
    }

    fn encode_into(&self, p: ProjectedCoord, out: &mut [f64]) {
        let half = self.freqs.rows();
        let (cos_part, sin_part) = out.split_at_mut(half);
        for (k, r) in self.freqs.row_iter().enumerate() {
            let (s, c) = (2.0 * PI * (r[0] * p.x + r[1] * p.y)).sin_cos();
            cos_part[k] = c;
            sin_part[k] = s;
        }
    }

    pub fn encode(&self, p: ProjectedCoord) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_out()];
        self.encode_into(p, &mut out);
        out
    }

    pub fn encode_batch(&self, points: &[ProjectedCoord]) -> Matrix {
        let mut out = Matrix::zeros(points.len(), self.dim_out());
        for (i, &p) in points.iter().enumerate() {
            self.encode_into(p, out.row_mut(i));
        }
        out
    }
}
