//! Contrastive training of the location encoder and image head.
//!
//! Each batch pairs `P` image views per sample with `P` independently
//! perturbed copies of the sample's GPS coordinate. Extra negatives come from
//! a FIFO queue of recent coordinates that is re-encoded (with its own, larger
//! perturbation) at every step.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesy::{perturb_coord, GpsCoord};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn_acc, norm, Matrix, Precision};
use crate::locenc::{EncoderConfig, LocationEncoder};
use crate::net::{
    normalize_rows, normalize_rows_backward, step_decay, AdamConfig, ImageHead, MlpGrads, TemperatureParam,
};

/// Allowed deviation from unit norm for rows entering the loss.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// One image with its views' backbone features and its location.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub image_embeddings: Vec<Vec<f64>>,
    pub gps: GpsCoord,
}

/// Samples stored as one feature matrix, `views` consecutive rows per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    views: usize,
    coords: Vec<GpsCoord>,
}

impl Dataset {
    pub fn new(features: Matrix, views: usize, coords: Vec<GpsCoord>) -> Result<Self> {
        if views == 0 {
            return Err(GeoError::InvalidInput("every sample needs at least one view".into()));
        }
        if features.rows() != coords.len() * views {
            return Err(GeoError::InvalidInput(format!(
                "{} feature rows for {} samples with {views} views",
                features.rows(),
                coords.len()
            )));
        }
        Ok(Self {
            features,
            views,
            coords,
        })
    }

    pub fn from_samples(samples: &[TrainSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| GeoError::InvalidInput("empty dataset".into()))?;
        let views = first.image_embeddings.len();
        let mut rows = Vec::with_capacity(samples.len() * views);
        for (i, s) in samples.iter().enumerate() {
            if s.image_embeddings.len() != views {
                return Err(GeoError::InvalidInput(format!(
                    "sample {i} has {} views, expected {views}",
                    s.image_embeddings.len()
                )));
            }
            rows.extend(s.image_embeddings.iter().map(Vec::as_slice));
        }
        let coords = samples.iter().map(|s| s.gps).collect();
        Self::new(Matrix::from_rows(&rows)?, views, coords)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn views(&self) -> usize {
        self.views
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn coords(&self) -> &[GpsCoord] {
        &self.coords
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Feature rows of the given samples, sample-major.
    fn gather_views(&self, samples: &[usize]) -> Matrix {
        let idx: Vec<usize> = samples
            .iter()
            .flat_map(|&i| (0..self.views).map(move |j| i * self.views + j))
            .collect();
        self.features.select_rows(&idx)
    }
}

/// Fixed-capacity FIFO of GPS coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GpsQueue {
    buf: Vec<GpsCoord>,
    /// Index of the oldest entry.
    head: usize,
}

impl GpsQueue {
    /// A full queue, oldest entry first.
    pub fn from_coords(coords: Vec<GpsCoord>) -> Self {
        Self { buf: coords, head: 0 }
    }

    /// Full queue drawn uniformly over latitude `[-90, 90]` and longitude
    /// `[-180, 180)`.
    pub fn uniform<R: Rng + ?Sized>(capacity: usize, rng: &mut R) -> Self {
        let coords = (0..capacity)
            .map(|_| GpsCoord::clamped(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0)))
            .collect();
        Self::from_coords(coords)
    }

    pub fn capacity(&self) -> usize {
        self.buf.len()
    }

    /// Overwrites the `batch.len()` oldest entries, in arrival order.
    pub fn push_batch(&mut self, batch: &[GpsCoord]) -> Result<()> {
        if batch.len() > self.capacity() {
            return Err(GeoError::InvalidConfig(format!(
                "batch of {} does not fit a queue of {}",
                batch.len(),
                self.capacity()
            )));
        }
        for &g in batch {
            self.buf[self.head] = g;
            self.head = (self.head + 1) % self.capacity();
        }
        Ok(())
    }

    /// Contents from oldest to newest.
    pub fn to_vec(&self) -> Vec<GpsCoord> {
        let (newer, older) = self.buf.split_at(self.head);
        older.iter().chain(newer).copied().collect()
    }
}

/// Free-function form of [`GpsQueue::push_batch`].
pub fn queue_update(queue: &mut GpsQueue, batch_gps: &[GpsCoord]) -> Result<()> {
    queue.push_batch(batch_gps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub views: usize,
    /// `0` disables the GPS queue.
    pub queue_size: usize,
    /// Noise on the positives, meters.
    pub sigma_eta: f64,
    /// Noise on the queue negatives, meters.
    pub sigma_eta_prime: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub epochs: u32,
    /// Seeds parameter initialization (encoder included), queue warm-up,
    /// shuffling and GPS noise.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub tau_init: f64,
    /// Treat queue embeddings as constants in the backward pass.
    pub stop_grad_queue: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            views: 1,
            queue_size: 4096,
            sigma_eta: 150.0,
            sigma_eta_prime: 1000.0,
            lr: 3e-5,
            weight_decay: 1e-6,
            gamma: 0.87,
            epochs: 10,
            seed: 0,
            encoder: EncoderConfig::default(),
            head_hidden: 768,
            tau_init: 0.07,
            stop_grad_queue: false,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(GeoError::InvalidConfig(msg));
        if self.batch_size == 0 || self.views == 0 {
            return bad("batch size and views must be positive".into());
        }
        if self.queue_size > 0 && self.batch_size > self.queue_size {
            return bad(format!(
                "batch size {} exceeds queue size {}",
                self.batch_size, self.queue_size
            ));
        }
        if !(self.sigma_eta >= 0.0 && self.sigma_eta_prime >= self.sigma_eta) {
            return bad(format!(
                "need 0 <= sigma_eta ({}) <= sigma_eta_prime ({})",
                self.sigma_eta, self.sigma_eta_prime
            ));
        }
        if !(self.lr >= 0.0 && self.weight_decay >= 0.0 && self.gamma > 0.0) {
            return bad("lr and weight decay must be non-negative, gamma positive".into());
        }
        Ok(())
    }

    fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            seed: self.seed,
            ..self.encoder.clone()
        }
    }
}

/// Everything trained: location encoder, image head and temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoClipModel {
    pub encoder: LocationEncoder,
    pub head: ImageHead,
    pub temperature: TemperatureParam,
}

impl GeoClipModel {
    pub fn new(config: &TrainConfig, feature_dim: usize) -> Result<Self> {
        let encoder = LocationEncoder::new(&config.encoder_config())?.with_precision(config.precision);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        let head = ImageHead::new(feature_dim, config.head_hidden, encoder.embed_dim(), &mut rng)?;
        let temperature = TemperatureParam::new(config.tau_init)?;
        Ok(Self {
            encoder,
            head,
            temperature,
        })
    }

    /// Unit-norm image embeddings for backbone features (one row each).
    pub fn embed_images(&self, features: &Matrix) -> Result<Matrix> {
        self.head.embed(features, self.encoder.precision())
    }
}

/// Loss value and gradients for every input of [`contrastive_loss`].
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub d_images: Matrix,
    pub d_locations: Matrix,
    pub d_queue: Matrix,
    pub d_tau: f64,
}

fn check_unit_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let n = norm(row);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(GeoError::InvalidInput(format!("{what} row {i} has norm {n}")));
        }
    }
    Ok(())
}

/// InfoNCE over in-batch locations plus queue negatives.
///
/// `images` and `locations` hold `|B| * views` rows, sample-major: row
/// `i * views + j` is view `j` of sample `i`. For view `j` the candidates of
/// an anchor are view `j` of every batch sample plus every queue row. The
/// result is the per-sample loss (summed over views) averaged over samples.
pub fn contrastive_loss(
    images: &Matrix,
    locations: &Matrix,
    queue: &Matrix,
    tau: f64,
    views: usize,
) -> Result<LossOutput> {
    if views == 0 || images.rows() % views != 0 || images.rows() == 0 {
        return Err(GeoError::InvalidInput(format!(
            "{} image rows do not split into {views} views",
            images.rows()
        )));
    }
    if locations.rows() != images.rows()
        || locations.cols() != images.cols()
        || (queue.rows() > 0 && queue.cols() != images.cols())
    {
        return Err(GeoError::InvalidInput("image, location and queue shapes disagree".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(GeoError::InvalidInput(format!("temperature {tau} must be positive")));
    }
    check_unit_rows(images, "image")?;
    check_unit_rows(locations, "location")?;
    check_unit_rows(queue, "queue")?;

    let batch = images.rows() / views;
    let dim = images.cols();
    let queue = if queue.rows() == 0 { Matrix::zeros(0, dim) } else { queue.clone() };
    let n_queue = queue.rows();
    let mut d_images = Matrix::zeros(images.rows(), dim);
    let mut d_locations = Matrix::zeros(images.rows(), dim);
    let mut d_queue = Matrix::zeros(n_queue, dim);
    let mut loss = 0.0;
    let mut d_tau = 0.0;
    let scale = 1.0 / batch as f64;

    for j in 0..views {
        let rows: Vec<usize> = (0..batch).map(|i| i * views + j).collect();
        let v = images.select_rows(&rows);
        let l = locations.select_rows(&rows);
        let sim_batch = matmul_nt(&v, &l, Precision::F64)?;
        let sim_queue = matmul_nt(&v, &queue, Precision::F64)?;

        // d loss / d similarity, filled row by row
        let mut g_batch = Matrix::zeros(batch, batch);
        let mut g_queue = Matrix::zeros(batch, n_queue);
        let mut logits = Vec::with_capacity(batch + n_queue);
        for a in 0..batch {
            logits.clear();
            logits.extend(sim_batch.row(a).iter().chain(sim_queue.row(a)).map(|s| s / tau));
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += scale * (lse - logits[a]);
            for (c, &z) in logits.iter().enumerate() {
                let target = if c == a { 1.0 } else { 0.0 };
                let dz = scale * ((z - lse).exp() - target);
                // z = s / tau
                d_tau -= dz * z / tau;
                if c < batch {
                    g_batch.set(a, c, dz / tau);
                } else {
                    g_queue.set(a, c - batch, dz / tau);
                }
            }
        }

        let mut dv = matmul_nn(&g_batch, &l, Precision::F64)?;
        if n_queue > 0 {
            let dq = matmul_nn(&g_queue, &queue, Precision::F64)?;
            for (x, y) in dv.as_mut_slice().iter_mut().zip(dq.as_slice()) {
                *x += y;
            }
            matmul_tn_acc(&mut d_queue, &g_queue, &v, Precision::F64)?;
        }
        let mut dl = Matrix::zeros(batch, dim);
        matmul_tn_acc(&mut dl, &g_batch, &v, Precision::F64)?;
        for (k, &r) in rows.iter().enumerate() {
            d_images.row_mut(r).copy_from_slice(dv.row(k));
            d_locations.row_mut(r).copy_from_slice(dl.row(k));
        }
    }

    Ok(LossOutput {
        loss,
        d_images,
        d_locations,
        d_queue,
        d_tau,
    })
}

/// Perturbs every queued coordinate by `sigma_meters` and encodes the result.
/// Returns the perturbed coordinates alongside their embeddings.
pub fn make_queue_negatives<R: Rng + ?Sized>(
    queue: &GpsQueue,
    encoder: &LocationEncoder,
    sigma_meters: f64,
    rng: &mut R,
) -> Result<(Vec<GpsCoord>, Matrix)> {
    let coords: Vec<GpsCoord> = queue
        .to_vec()
        .into_iter()
        .map(|g| perturb_coord(g, sigma_meters, rng))
        .collect();
    if coords.is_empty() {
        return Ok((coords, Matrix::zeros(0, encoder.embed_dim())));
    }
    let emb = encoder.encode_gps_batch(&coords)?;
    Ok((coords, emb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// Zero-based; the learning rate of epoch `e` is `lr * gamma^e`.
    pub epoch: u32,
    pub mean_loss: f64,
    pub lr: f64,
    pub tau: f64,
    pub wall_ms: u64,
}

impl EpochReport {
    /// Equality of everything except the wall-clock time.
    pub fn same_outcome(&self, other: &EpochReport) -> bool {
        self.epoch == other.epoch
            && self.mean_loss.to_bits() == other.mean_loss.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && self.tau.to_bits() == other.tau.to_bits()
    }
}

fn diverged(batch: usize) -> impl Fn(GeoError) -> GeoError {
    move |e| match e {
        GeoError::TrainingDivergence { reason, .. } => GeoError::TrainingDivergence { batch, reason },
        other => other,
    }
}

/// One pass over `dataset` in a seeded random order.
pub fn train_epoch<R: Rng + ?Sized>(
    dataset: &Dataset,
    model: &mut GeoClipModel,
    queue: &mut GpsQueue,
    config: &TrainConfig,
    epoch: u32,
    rng: &mut R,
) -> Result<EpochReport> {
    if dataset.is_empty() {
        return Err(GeoError::InvalidInput("empty dataset".into()));
    }
    if dataset.views() != config.views {
        return Err(GeoError::InvalidConfig(format!(
            "dataset has {} views per sample, config expects {}",
            dataset.views(),
            config.views
        )));
    }
    if queue.capacity() != config.queue_size {
        return Err(GeoError::InvalidConfig(format!(
            "queue holds {} coordinates, config expects {}",
            queue.capacity(),
            config.queue_size
        )));
    }
    let start = Instant::now();
    let lr = step_decay(config.lr, config.gamma, epoch);
    let adam = AdamConfig {
        lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let precision = config.precision;
    model.encoder.set_precision(precision);
    if precision == Precision::F32 {
        model.head.mlp_mut().refresh_f32();
    }

    let mut enc_grads = model.encoder.zero_grads();
    let mut head_grads = MlpGrads::zeros(model.head.mlp());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let mut weighted_loss = 0.0;

    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let feats = dataset.gather_views(chunk);
        let (raw_v, head_tape) = model.head.mlp().forward_batch(&feats, precision)?;
        let (v, v_norms) = normalize_rows(&raw_v)?;

        let mut coords: Vec<GpsCoord> = Vec::with_capacity(chunk.len() * config.views + queue.capacity());
        for &i in chunk {
            let g = dataset.coords()[i];
            coords.extend((0..config.views).map(|_| perturb_coord(g, config.sigma_eta, rng)));
        }
        let n_pos = coords.len();

        let (l, lq, enc_tape) = if config.stop_grad_queue || queue.capacity() == 0 {
            let (_, lq) = make_queue_negatives(queue, &model.encoder, config.sigma_eta_prime, rng)?;
            let (l, tape) = model.encoder.forward_train(&coords)?;
            (l, lq, tape)
        } else {
            coords.extend(
                queue
                    .to_vec()
                    .into_iter()
                    .map(|g| perturb_coord(g, config.sigma_eta_prime, rng)),
            );
            let (all, tape) = model.encoder.forward_train(&coords)?;
            let (l, lq) = all.split_rows(n_pos);
            (l, lq, tape)
        };

        let tau = model.temperature.tau();
        let out = contrastive_loss(&v, &l, &lq, tau, config.views)?;
        if !out.loss.is_finite() {
            return Err(GeoError::TrainingDivergence {
                batch: b,
                reason: format!("loss is {}", out.loss),
            });
        }

        let d_raw_v = normalize_rows_backward(&v, &v_norms, &out.d_images);
        model
            .head
            .mlp()
            .backward_params_into(&head_tape, &d_raw_v, precision, &mut head_grads)?;
        let d_embed = if config.stop_grad_queue || queue.capacity() == 0 {
            out.d_locations
        } else {
            out.d_locations.vstack(&out.d_queue)?
        };
        model.encoder.backward_into(&enc_tape, &d_embed, &mut enc_grads)?;

        model.encoder.adam_step(&enc_grads, &adam).map_err(diverged(b))?;
        model.head.mlp_mut().adam_step(&head_grads, &adam).map_err(diverged(b))?;
        model.temperature.adam_step(out.d_tau, &adam).map_err(diverged(b))?;

        if queue.capacity() > 0 {
            let raw: Vec<GpsCoord> = chunk.iter().map(|&i| dataset.coords()[i]).collect();
            queue.push_batch(&raw)?;
        }
        weighted_loss += out.loss * chunk.len() as f64;
    }

    Ok(EpochReport {
        epoch,
        mean_loss: weighted_loss / dataset.len() as f64,
        lr,
        tau: model.temperature.tau(),
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Owns the model, queue and RNG across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    model: GeoClipModel,
    queue: GpsQueue,
    rng: ChaCha8Rng,
    epoch: u32,
}

impl Trainer {
    pub fn new(config: TrainConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let model = GeoClipModel::new(&config, feature_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let queue = GpsQueue::uniform(config.queue_size, &mut rng);
        Ok(Self {
            config,
            model,
            queue,
            rng,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &GeoClipModel {
        &self.model
    }

    pub fn into_model(self) -> GeoClipModel {
        self.model
    }

    pub fn queue(&self) -> &GpsQueue {
        &self.queue
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn epochs_done(&self) -> u32 {
        self.epoch
    }

    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochReport> {
        let report = train_epoch(
            dataset,
            &mut self.model,
            &mut self.queue,
            &self.config,
            self.epoch,
            &mut self.rng,
        )?;
        self.epoch += 1;
        Ok(report)
    }

    /// Runs the remaining configured epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<Vec<EpochReport>> {
        let mut reports = Vec::new();
        while self.epoch < self.config.epochs {
            let r = self.run_epoch(dataset)?;
            on_epoch(&r);
            reports.push(r);
        }
        Ok(reports)
    }
}
