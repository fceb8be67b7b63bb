//! Hierarchical location encoder: Equal Earth projection, one RFF + MLP branch
//! per frequency scale, branch outputs summed and L2-normalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::{eep_project, GpsCoord, ProjectedCoord};
use crate::linalg::{Matrix, Precision};
use crate::net::{normalize_rows, normalize_rows_backward, AdamConfig, Mlp, MlpGrads, MlpTape};
use crate::posenc::{RffLayer, SigmaSchedule};

/// Rows per forward chunk in [`LocationEncoder::encode_gps_batch`].
const ENCODE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub branches: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rff_dim: usize,
    pub hidden_dim: usize,
    /// Number of ReLU hidden layers per branch MLP.
    pub hidden_layers: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            branches: 3,
            sigma_min: 1.0,
            sigma_max: 256.0,
            rff_dim: 512,
            hidden_dim: 1024,
            hidden_layers: 4,
            embed_dim: 512,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.rff_dim];
        dims.extend(std::iter::repeat(self.hidden_dim).take(self.hidden_layers));
        dims.push(self.embed_dim);
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub rff: RffLayer,
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEncoder {
    schedule: SigmaSchedule,
    branches: Vec<Branch>,
    #[serde(default)]
    precision: Precision,
}

/// Forward state needed to backpropagate into the branch MLPs.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    branch_tapes: Vec<MlpTape>,
    normalized: Matrix,
    norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub branches: Vec<MlpGrads>,
}

impl EncoderGrads {
    pub fn add_assign(&mut self, other: &EncoderGrads) {
        for (a, b) in self.branches.iter_mut().zip(&other.branches) {
            a.add_assign(b);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.branches.iter().flat_map(MlpGrads::flatten).collect()
    }
}

impl LocationEncoder {
    /// Branch `i` draws its RFF matrix from seed `seed + i` and initializes its
    /// MLP from a separate ChaCha stream of the same seed.
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        let schedule = SigmaSchedule::new(config.sigma_min, config.sigma_max, config.branches)?;
        let dims = config.mlp_dims();
        let branches = schedule
            .values()
            .iter()
            .enumerate()
            .map(|(i, &sigma)| {
                let seed = config.seed.wrapping_add(i as u64);
                let rff = RffLayer::new(config.rff_dim, sigma, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                let mlp = Mlp::kaiming(&dims, &mut rng)?;
                Ok(Branch { rff, mlp })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            schedule,
            branches,
            precision: Precision::F64,
        })
    }

    pub fn from_branches(schedule: SigmaSchedule, branches: Vec<Branch>) -> Result<Self> {
        if branches.len() != schedule.len() {
            return Err(GeoError::InvalidConfig(format!(
                "{} branches for a {}-level schedule",
                branches.len(),
                schedule.len()
            )));
        }
        let embed = branches[0].mlp.out_dim();
        for (i, b) in branches.iter().enumerate() {
            if b.mlp.in_dim() != b.rff.dim_out() || b.mlp.out_dim() != embed {
                return Err(GeoError::InvalidConfig(format!(
                    "branch {i}: RFF {} -> MLP {}->{} does not fit embedding dim {embed}",
                    b.rff.dim_out(),
                    b.mlp.in_dim(),
                    b.mlp.out_dim()
                )));
            }
        }
        Ok(Self {
            schedule,
            branches,
            precision: Precision::F64,
        })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.set_precision(precision);
        self
    }

    pub fn set_precision(&mut self, precision: Precision) {
        self.precision = precision;
        if precision == Precision::F32 {
            self.branches.iter_mut().for_each(|b| b.mlp.refresh_f32());
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn schedule(&self) -> &SigmaSchedule {
        &self.schedule
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub fn embed_dim(&self) -> usize {
        self.branches[0].mlp.out_dim()
    }

    fn project_all(coords: &[GpsCoord]) -> Vec<ProjectedCoord> {
        coords.iter().map(|&g| eep_project(g)).collect()
    }

    /// Sum of branch outputs before normalization, one row per coordinate.
    pub fn encode_raw_batch(&self, coords: &[GpsCoord]) -> Result<Matrix> {
        let points = Self::project_all(coords);
        let mut sum = Matrix::zeros(coords.len(), self.embed_dim());
        for b in &self.branches {
            let out = b.mlp.infer_batch(&b.rff.encode_batch(&points), self.precision)?;
            for (s, v) in sum.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *s += v;
            }
        }
        Ok(sum)
    }

    pub fn encode_raw(&self, coord: GpsCoord) -> Result<Vec<f64>> {
        Ok(self.encode_raw_batch(&[coord])?.into_vec())
    }

    pub fn encode_gps(&self, coord: GpsCoord) -> Result<Vec<f64>> {
        let raw = self.encode_raw_batch(&[coord])?;
        Ok(normalize_rows(&raw)?.0.into_vec())
    }

    /// Unit-norm embeddings, one row per coordinate. Errors carry the index of
    /// the offending coordinate.
    pub fn encode_gps_batch(&self, coords: &[GpsCoord]) -> Result<Matrix> {
        if coords.is_empty() {
            return Err(GeoError::InvalidInput("no coordinates to encode".into()));
        }
        let mut out = Matrix::zeros(coords.len(), self.embed_dim());
        for (c, chunk) in coords.chunks(ENCODE_CHUNK).enumerate() {
            let offset = c * ENCODE_CHUNK;
            let raw = self.encode_raw_batch(chunk)?;
            let (normed, _) = normalize_rows(&raw).map_err(|e| match e {
                GeoError::AtIndex { index, source } => source.at(offset + index),
                other => other,
            })?;
            for r in 0..chunk.len() {
                out.row_mut(offset + r).copy_from_slice(normed.row(r));
            }
        }
        Ok(out)
    }

    /// Forward pass that records what [`LocationEncoder::backward`] needs.
    pub fn forward_train(&self, coords: &[GpsCoord]) -> Result<(Matrix, EncoderTape)> {
        let points = Self::project_all(coords);
        let mut sum = Matrix::zeros(coords.len(), self.embed_dim());
        let mut branch_tapes = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (out, tape) = b.mlp.forward_batch(&b.rff.encode_batch(&points), self.precision)?;
            for (s, v) in sum.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *s += v;
            }
            branch_tapes.push(tape);
        }
        let (normalized, norms) = normalize_rows(&sum)?;
        let tape = EncoderTape {
            branch_tapes,
            normalized: normalized.clone(),
            norms,
        };
        Ok((normalized, tape))
    }

    /// Gradients of the branch MLP parameters given `d loss / d embedding`.
    pub fn backward(&self, tape: &EncoderTape, d_embed: &Matrix) -> Result<EncoderGrads> {
        let mut grads = self.zero_grads();
        self.backward_into(tape, d_embed, &mut grads)?;
        Ok(grads)
    }

    /// [`LocationEncoder::backward`] writing into an existing buffer.
    pub fn backward_into(&self, tape: &EncoderTape, d_embed: &Matrix, grads: &mut EncoderGrads) -> Result<()> {
        if tape.branch_tapes.len() != self.branches.len() || grads.branches.len() != self.branches.len() {
            return Err(GeoError::InvalidState("tape has the wrong number of branches".into()));
        }
        if d_embed.rows() != tape.normalized.rows() || d_embed.cols() != tape.normalized.cols() {
            return Err(GeoError::InvalidState("embedding gradient does not match tape".into()));
        }
        let d_raw = normalize_rows_backward(&tape.normalized, &tape.norms, d_embed);
        for ((b, t), g) in self.branches.iter().zip(&tape.branch_tapes).zip(&mut grads.branches) {
            b.mlp.backward_params_into(t, &d_raw, self.precision, g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            branches: self.branches.iter().map(|b| MlpGrads::zeros(&b.mlp)).collect(),
        }
    }

    pub fn adam_step(&mut self, grads: &EncoderGrads, cfg: &AdamConfig) -> Result<()> {
        if grads.branches.len() != self.branches.len() {
            return Err(GeoError::InvalidInput("gradient branch count mismatch".into()));
        }
        for (b, g) in self.branches.iter_mut().zip(&grads.branches) {
            b.mlp.adam_step(g, cfg)?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.mlp.param_count()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, b) in self.branches.iter().enumerate() {
            if i < b.mlp.param_count() {
                return (k, i);
            }
            i -= b.mlp.param_count();
        }
        panic!("parameter index out of range");
    }

    /// Trainable parameter `i`, branches in order.
    pub fn param(&self, i: usize) -> f64 {
        let (b, j) = self.locate(i);
        self.branches[b].mlp.param(j)
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        let (b, j) = self.locate(i);
        self.branches[b].mlp.set_param(j, value);
    }
}
