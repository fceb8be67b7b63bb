//! Dense layers, ReLU MLPs with hand-written reverse mode, row-wise L2
//! normalization, and Adam with decoupled weight decay.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::linalg::{matmul_nn_with, matmul_nt_with, matmul_tn_into, norm, sgemm_nt, Matrix, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(self, lr: f64) -> Self {
        Self { lr, ..self }
    }
}

/// `lr0 * gamma^epoch`.
pub fn step_decay(lr0: f64, gamma: f64, epoch: u32) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GeoError::TrainingDivergence {
            batch: 0,
            reason: format!("non-finite {what}"),
        })
    }
}

/// First/second moment buffers for one parameter tensor.
#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn ensure(&mut self, len: usize) {
        if self.m.len() != len {
            self.m = vec![0.0; len];
            self.v = vec![0.0; len];
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). When `shadow` is
/// given it receives the updated parameters rounded to `f32`. Returns whether
/// every updated parameter is finite.
fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    t: u64,
    cfg: &AdamConfig,
    shadow: Option<&mut [f32]>,
) -> bool {
    moments.ensure(params.len());
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let (lr, eps, wd) = (cfg.lr, cfg.eps, cfg.weight_decay);
    let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
    };
    let mut finite = true;
    let state = params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()));
    match shadow {
        Some(shadow) => {
            for (((p, &g), (m, v)), s) in state.zip(shadow) {
                step(p, g, m, v);
                *s = *p as f32;
                finite &= p.is_finite();
            }
        }
        None => {
            for ((p, &g), (m, v)) in state {
                step(p, g, m, v);
                finite &= p.is_finite();
            }
        }
    }
    finite
}

/// Optimizer bookkeeping that is not part of a checkpoint.
#[derive(Debug, Clone, Default)]
struct LayerState {
    weights: Moments,
    bias: Moments,
    step: u64,
    /// Bumped on every parameter mutation; tapes remember it.
    generation: u64,
    /// Weights rounded to `f32` for single-precision products, valid while
    /// `shadow_generation` equals `generation`. Empty until enabled.
    shadow: Vec<f32>,
    shadow_generation: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    #[serde(skip)]
    state: LayerState,
}

impl PartialEq for DenseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.bias == other.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    fn zeros(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }
}

impl DenseLayer {
    /// Uniform fan-in (Kaiming) initialization with zero bias.
    pub fn kaiming<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self::from_parts(
            Matrix::from_vec(out_dim, in_dim, data).expect("sized above"),
            vec![0.0; out_dim],
        )
        .expect("shapes agree")
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(GeoError::InvalidInput(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self {
            weights,
            bias,
            state: LayerState::default(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Mutable access to the parameters. Outstanding tapes become stale.
    pub fn params_mut(&mut self) -> (&mut Matrix, &mut Vec<f64>) {
        self.state.generation += 1;
        (&mut self.weights, &mut self.bias)
    }

    fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// Current `f32` copy of the weights, if one is maintained and fresh.
    fn weights_f32(&self) -> Option<&[f32]> {
        (self.state.shadow_generation == Some(self.state.generation)).then_some(self.state.shadow.as_slice())
    }

    /// Starts (or refreshes) the `f32` weight copy. Adam keeps it current
    /// from then on, so single-precision products skip the conversion.
    fn refresh_f32(&mut self) {
        let st = &mut self.state;
        if st.shadow_generation != Some(st.generation) {
            st.shadow.clear();
            st.shadow.extend(self.weights.as_slice().iter().map(|&w| w as f32));
            st.shadow_generation = Some(st.generation);
        }
    }

    /// `x * Wᵀ + b` for a batch of row vectors.
    pub fn forward_batch(&self, x: &Matrix, precision: Precision) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(GeoError::InvalidInput(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut y = matmul_nt_with(x, &self.weights, self.weights_f32(), precision)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// Adam step with decoupled weight decay. Rejects non-finite gradients
    /// without touching any state.
    pub fn adam_step(&mut self, grads: &DenseGrads, cfg: &AdamConfig) -> Result<()> {
        if grads.weights.rows() != self.out_dim()
            || grads.weights.cols() != self.in_dim()
            || grads.bias.len() != self.out_dim()
        {
            return Err(GeoError::InvalidInput("gradient shape does not match layer".into()));
        }
        check_finite(grads.weights.as_slice(), "weight gradient")?;
        check_finite(&grads.bias, "bias gradient")?;
        self.apply_adam(grads, cfg)
    }

    /// Adam update for gradients already known to be finite.
    fn apply_adam(&mut self, grads: &DenseGrads, cfg: &AdamConfig) -> Result<()> {
        let st = &mut self.state;
        st.step += 1;
        st.generation += 1;
        let shadow = (!st.shadow.is_empty()).then_some(st.shadow.as_mut_slice());
        let w_ok = adam_update(self.weights.as_mut_slice(), grads.weights.as_slice(), &mut st.weights, st.step, cfg, shadow);
        if !st.shadow.is_empty() {
            st.shadow_generation = Some(st.generation);
        }
        let b_ok = adam_update(&mut self.bias, &grads.bias, &mut st.bias, st.step, cfg, None);
        if w_ok && b_ok {
            Ok(())
        } else {
            Err(GeoError::TrainingDivergence {
                batch: 0,
                reason: "non-finite parameters after update".into(),
            })
        }
    }
}

/// Activations recorded by [`Mlp::forward_batch`]: the input of every layer,
/// from which the ReLU masks are recovered.
#[derive(Debug, Clone)]
pub struct MlpTape {
    inputs: Vec<Matrix>,
    generations: Vec<u64>,
}

impl MlpTape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl MlpGrads {
    pub fn zeros(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(DenseGrads::zeros).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Flattened in [`Mlp::param`] order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Affine layers with ReLU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`.
    pub fn kaiming<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(GeoError::InvalidConfig(format!("bad MLP dimensions {dims:?}")));
        }
        let layers = dims.windows(2).map(|w| DenseLayer::kaiming(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(GeoError::InvalidConfig("MLP needs at least one layer".into()));
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(GeoError::InvalidConfig(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_dim(),
                    i + 1,
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if i < layer.param_count() {
                return (l, i);
            }
            i -= layer.param_count();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `i` in layer order, weights (row-major) before bias.
    pub fn param(&self, i: usize) -> f64 {
        let (l, j) = self.locate(i);
        let layer = &self.layers[l];
        let nw = layer.weights.as_slice().len();
        if j < nw {
            layer.weights.as_slice()[j]
        } else {
            layer.bias[j - nw]
        }
    }

    pub fn set_param(&mut self, i: usize, value: f64) {
        let (l, j) = self.locate(i);
        let (w, b) = self.layers[l].params_mut();
        let nw = w.as_slice().len();
        if j < nw {
            w.as_mut_slice()[j] = value;
        } else {
            b[j - nw] = value;
        }
    }

    pub fn forward_batch(&self, x: &Matrix, precision: Precision) -> Result<(Matrix, MlpTape)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward_batch(&h, precision)?;
            if l < last {
                relu_in_place(&mut out);
            }
            inputs.push(std::mem::replace(&mut h, out));
        }
        let tape = MlpTape {
            inputs,
            generations: self.layers.iter().map(|l| l.state.generation).collect(),
        };
        Ok((h, tape))
    }

    /// Forward pass without recording activations. With `F32` the
    /// activations stay in single precision between layers.
    pub fn infer_batch(&self, x: &Matrix, precision: Precision) -> Result<Matrix> {
        if precision == Precision::F32 {
            return self.infer_f32(x);
        }
        let mut h = self.layers[0].forward_batch(x, precision)?;
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = layer.forward_batch(&h, precision)?;
        }
        Ok(h)
    }

    fn infer_f32(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(GeoError::InvalidInput(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let rows = x.rows();
        let mut h: Vec<f32> = x.as_slice().iter().map(|&v| v as f32).collect();
        let mut converted = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = match layer.weights_f32() {
                Some(w) => w,
                None => {
                    converted.clear();
                    converted.extend(layer.weights.as_slice().iter().map(|&v| v as f32));
                    converted.as_slice()
                }
            };
            let out_dim = layer.out_dim();
            let mut out = vec![0.0f32; rows * out_dim];
            sgemm_nt(rows, layer.in_dim(), out_dim, &h, w, &mut out);
            let bias: Vec<f32> = layer.bias.iter().map(|&b| b as f32).collect();
            for row in out.chunks_exact_mut(out_dim) {
                for (v, b) in row.iter_mut().zip(&bias) {
                    *v += b;
                    if l < last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
        }
        Matrix::from_vec(rows, self.out_dim(), h.into_iter().map(f64::from).collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        let (y, tape) = self.forward_batch(&Matrix::from_rows(&[x])?, Precision::F64)?;
        Ok((y.into_vec(), tape))
    }

    /// Reverse pass; returns the input gradient and parameter gradients.
    pub fn backward_batch(
        &self,
        tape: &MlpTape,
        dy: &Matrix,
        precision: Precision,
    ) -> Result<(Matrix, MlpGrads)> {
        let mut grads = MlpGrads::zeros(self);
        let dx = self.backward_impl(tape, dy, precision, &mut grads, true)?;
        Ok((dx.expect("input gradient requested"), grads))
    }

    /// Reverse pass that overwrites `grads` and skips the input gradient.
    /// Reusing one buffer across steps avoids reallocating every gradient.
    pub fn backward_params_into(
        &self,
        tape: &MlpTape,
        dy: &Matrix,
        precision: Precision,
        grads: &mut MlpGrads,
    ) -> Result<()> {
        self.backward_impl(tape, dy, precision, grads, false).map(drop)
    }

    fn backward_impl(
        &self,
        tape: &MlpTape,
        dy: &Matrix,
        precision: Precision,
        grads: &mut MlpGrads,
        want_dx: bool,
    ) -> Result<Option<Matrix>> {
        let current: Vec<u64> = self.layers.iter().map(|l| l.state.generation).collect();
        if tape.generations != current || tape.inputs.len() != self.layers.len() {
            return Err(GeoError::InvalidState(
                "tape was recorded against different parameters".into(),
            ));
        }
        if dy.rows() != tape.batch_size() || dy.cols() != self.out_dim() {
            return Err(GeoError::InvalidState(format!(
                "upstream gradient is {}x{}, tape expects {}x{}",
                dy.rows(),
                dy.cols(),
                tape.batch_size(),
                self.out_dim()
            )));
        }
        let shapes_ok = grads.layers.len() == self.layers.len()
            && grads.layers.iter().zip(&self.layers).all(|(g, l)| {
                g.weights.rows() == l.out_dim() && g.weights.cols() == l.in_dim() && g.bias.len() == l.out_dim()
            });
        if !shapes_ok {
            return Err(GeoError::InvalidInput("gradient buffer does not match network".into()));
        }
        let mut delta = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l + 1 < self.layers.len() {
                // ReLU'(pre) = 1 exactly where the next layer's input is positive.
                let post = &tape.inputs[l + 1];
                for (d, &a) in delta.as_mut_slice().iter_mut().zip(post.as_slice()) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grads.layers[l];
            matmul_tn_into(&mut g.weights, &delta, &tape.inputs[l], 0.0, precision)?;
            g.bias.fill(0.0);
            for row in delta.row_iter() {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if l > 0 || want_dx {
                let layer = &self.layers[l];
                delta = matmul_nn_with(&delta, &layer.weights, layer.weights_f32(), precision)?;
            }
        }
        Ok(want_dx.then_some(delta))
    }

    pub fn backward(&self, tape: &MlpTape, dy: &[f64]) -> Result<(Vec<f64>, MlpGrads)> {
        let (dx, grads) = self.backward_batch(tape, &Matrix::from_rows(&[dy])?, Precision::F64)?;
        Ok((dx.into_vec(), grads))
    }

    /// Keeps `f32` weight copies for single-precision products.
    pub fn refresh_f32(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::refresh_f32);
    }

    pub fn adam_step(&mut self, grads: &MlpGrads, cfg: &AdamConfig) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(GeoError::InvalidInput("gradient layer count mismatch".into()));
        }
        // Validate everything first so a bad gradient leaves no layer half-updated.
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.weights.rows() != layer.out_dim() || g.weights.cols() != layer.in_dim() || g.bias.len() != layer.out_dim() {
                return Err(GeoError::InvalidInput("gradient shape does not match layer".into()));
            }
            check_finite(g.weights.as_slice(), "weight gradient")?;
            check_finite(&g.bias, "bias gradient")?;
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.apply_adam(g, cfg)?;
        }
        Ok(())
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn l2_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n == 0.0 || !n.is_finite() {
        return Err(GeoError::DegenerateInput(format!("cannot normalize vector of norm {n}")));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

/// Gradient of `x / |x|` given the normalized output `y`, the norm of `x`
/// and the upstream gradient.
pub fn l2_normalize_backward(y: &[f64], x_norm: f64, dy: &[f64]) -> Vec<f64> {
    let proj: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, gi)| (gi - yi * proj) / x_norm).collect()
}

/// Normalizes every row; returns the normalized matrix and the original norms.
pub fn normalize_rows(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let n = norm(x.row(r));
        if n == 0.0 || !n.is_finite() {
            return Err(GeoError::DegenerateInput(format!("cannot normalize vector of norm {n}")).at(r));
        }
        out.row_mut(r).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}

pub fn normalize_rows_backward(y: &Matrix, norms: &[f64], dy: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let g = l2_normalize_backward(y.row(r), norms[r], dy.row(r));
        dx.row_mut(r).copy_from_slice(&g);
    }
    dx
}

/// Contrastive temperature stored as `log(1/tau)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureParam {
    log_inv_tau: f64,
    #[serde(skip)]
    moments: Moments,
    #[serde(skip)]
    step: u64,
}

impl PartialEq for TemperatureParam {
    fn eq(&self, other: &Self) -> bool {
        self.log_inv_tau.to_bits() == other.log_inv_tau.to_bits()
    }
}

impl TemperatureParam {
    pub const MIN_TAU: f64 = 0.01;

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= Self::MIN_TAU) {
            return Err(GeoError::InvalidConfig(format!(
                "temperature {tau} must be finite and at least {}",
                Self::MIN_TAU
            )));
        }
        Ok(Self {
            log_inv_tau: (1.0 / tau).ln(),
            moments: Moments::default(),
            step: 0,
        })
    }

    pub fn tau(&self) -> f64 {
        (-self.log_inv_tau).exp()
    }

    pub fn log_inv_tau(&self) -> f64 {
        self.log_inv_tau
    }

    /// Adam step given `d loss / d tau`. No weight decay is applied to the
    /// temperature.
    pub fn adam_step(&mut self, d_tau: f64, cfg: &AdamConfig) -> Result<()> {
        check_finite(&[d_tau], "temperature gradient")?;
        // tau = exp(-s)  =>  d/ds = -tau * d/dtau
        let grad = -self.tau() * d_tau;
        self.step += 1;
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..*cfg
        };
        let mut p = [self.log_inv_tau];
        adam_update(&mut p, &[grad], &mut self.moments, self.step, &cfg, None);
        self.log_inv_tau = p[0].min((1.0 / Self::MIN_TAU).ln());
        Ok(())
    }
}

/// Image tower head: `h1` (ReLU) followed by linear `h2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageHead {
    mlp: Mlp,
}

impl ImageHead {
    pub const FEATURE_DIM: usize = 768;

    pub fn new<R: Rng + ?Sized>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::kaiming(&[in_dim, hidden, out_dim], rng)?,
        })
    }

    pub fn from_layers(h1: DenseLayer, h2: DenseLayer) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::from_layers(vec![h1, h2])?,
        })
    }

    pub fn h1(&self) -> &DenseLayer {
        &self.mlp.layers()[0]
    }

    pub fn h2(&self) -> &DenseLayer {
        &self.mlp.layers()[1]
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// Unit-norm embeddings for a batch of backbone features.
    pub fn embed(&self, features: &Matrix, precision: Precision) -> Result<Matrix> {
        let raw = self.mlp.infer_batch(features, precision)?;
        Ok(normalize_rows(&raw)?.0)
    }
}
