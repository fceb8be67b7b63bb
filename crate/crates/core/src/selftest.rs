//! Analytic invariant suite: projection symmetry, Fourier feature identities,
//! loss closed forms and finite-difference gradient checks on toy networks.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geodesy::{eep_project, GpsCoord, ProjectedCoord};
use crate::linalg::{dot, Matrix, Precision};
use crate::locenc::{EncoderConfig, LocationEncoder};
use crate::net::{normalize_rows, normalize_rows_backward, Mlp};
use crate::posenc::{RffLayer, SigmaSchedule};
use crate::trainer::contrastive_loss;

/// Largest accepted relative error between analytic and numerical gradients.
pub const GRADIENT_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Kaiming init leaves biases at zero, so a unit fed only by dead units sits
/// exactly on the ReLU kink. Jittering every parameter moves the toy networks
/// off such non-differentiable points.
fn jitter<R: Rng>(count: usize, rng: &mut R, mut set: impl FnMut(usize, f64)) {
    for i in 0..count {
        set(i, rng.random_range(-0.1..0.1));
    }
}

fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, x0: f64) -> Result<f64> {
    Ok((f(x0 + FD_STEP)? - f(x0 - FD_STEP)?) / (2.0 * FD_STEP))
}

fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

fn random_coord<R: Rng>(rng: &mut R) -> GpsCoord {
    GpsCoord::clamped(rng.random_range(-89.0..89.0), rng.random_range(-180.0..180.0))
}

fn check_schedule() -> CheckOutcome {
    let ok = SigmaSchedule::new(1.0, 256.0, 3).is_ok_and(|s| s.values() == [1.0, 16.0, 256.0]);
    outcome("sigma-schedule", ok, "(1, 256, 3) -> [1, 16, 256]".into())
}

fn check_eep<R: Rng>(rng: &mut R) -> CheckOutcome {
    let origin = eep_project(GpsCoord::clamped(0.0, 0.0));
    let mut ok = origin == ProjectedCoord { x: 0.0, y: 0.0 };
    for _ in 0..1000 {
        let g = random_coord(rng);
        let p = eep_project(g);
        let q = eep_project(GpsCoord::clamped(-g.lat_deg, -g.lon_deg));
        let r = eep_project(GpsCoord::clamped(g.lat_deg, -g.lon_deg));
        ok &= q.x == -p.x && q.y == -p.y && r.x == -p.x && r.y == p.y;
    }
    let mut max_x = 0.0f64;
    for lat in -90..=90 {
        for lon in -180..=180 {
            max_x = max_x.max(eep_project(GpsCoord::clamped(lat as f64, lon as f64)).x.abs());
        }
    }
    ok &= max_x <= 1.0;
    outcome("eep-symmetry", ok, format!("odd in both axes on 1000 points, max |x| = {max_x}"))
}

fn check_rff<R: Rng>(rng: &mut R) -> CheckOutcome {
    let mut worst_pair = 0.0f64;
    let mut worst_norm = 0.0f64;
    for _ in 0..1000 {
        let layer = match RffLayer::new(64, rng.random_range(0.5..300.0), rng.random()) {
            Ok(l) => l,
            Err(e) => return outcome("rff-identities", false, e.to_string()),
        };
        let p = ProjectedCoord {
            x: rng.random_range(-1.0..1.0),
            y: rng.random_range(-0.5..0.5),
        };
        let out = layer.encode(p);
        for k in 0..32 {
            worst_pair = worst_pair.max((out[k] * out[k] + out[k + 32] * out[k + 32] - 1.0).abs());
        }
        worst_norm = worst_norm.max((dot(&out, &out).sqrt() - 32f64.sqrt()).abs());
    }
    outcome(
        "rff-identities",
        worst_pair <= 1e-12 && worst_norm <= 1e-9,
        format!("max |cos²+sin²-1| = {worst_pair:.1e}, max norm error = {worst_norm:.1e}"),
    )
}

fn check_loss_closed_forms() -> Result<CheckOutcome> {
    let same = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]])?;
    let uniform = contrastive_loss(&same, &same, &same, 0.07, 1)?.loss;
    let tau = 0.07;
    let v = Matrix::from_rows(&[[1.0, 0.0]])?;
    let q = Matrix::from_rows(&[[0.0, 1.0]])?;
    let two = contrastive_loss(&v, &v, &q, tau, 1)?.loss;
    let softplus = (-1.0 / tau).exp().ln_1p();
    let e1 = (uniform - 2.0 * LN_2).abs();
    let e2 = (two - softplus).abs();
    Ok(outcome(
        "loss-closed-forms",
        e1 <= 1e-9 && e2 <= 1e-9,
        format!("ln 4 error {e1:.1e}, softplus error {e2:.1e}"),
    ))
}

/// Objective `<f(x), w>` for a fixed random direction `w`.
fn mlp_gradient_error<R: Rng>(rng: &mut R) -> Result<f64> {
    let dims = [rng.random_range(2..6), rng.random_range(2..7), rng.random_range(2..7), rng.random_range(1..4)];
    let mut mlp = Mlp::kaiming(&dims, rng)?;
    let base: Vec<f64> = (0..mlp.param_count()).map(|i| mlp.param(i)).collect();
    jitter(base.len(), rng, |i, d| mlp.set_param(i, base[i] + d));
    let x = random_matrix(3, dims[0], rng);
    let w = random_matrix(3, dims[3], rng);
    let objective = |m: &Mlp| -> Result<f64> {
        let y = m.infer_batch(&x, Precision::F64)?;
        Ok(dot(y.as_slice(), w.as_slice()))
    };
    let (_, tape) = mlp.forward_batch(&x, Precision::F64)?;
    let (_, grads) = mlp.backward_batch(&tape, &w, Precision::F64)?;
    let analytic = grads.flatten();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..mlp.param_count() {
        let x0 = mlp.param(i);
        numeric.push(central_difference(
            |v| {
                mlp.set_param(i, v);
                objective(&mlp)
            },
            x0,
        )?);
        mlp.set_param(i, x0);
    }
    Ok(relative_error(&analytic, &numeric))
}

fn encoder_gradient_error<R: Rng>(rng: &mut R) -> Result<f64> {
    let config = EncoderConfig {
        branches: rng.random_range(1..4),
        sigma_min: 1.0,
        sigma_max: 8.0,
        rff_dim: 6,
        hidden_dim: 5,
        hidden_layers: 2,
        embed_dim: 3,
        seed: rng.random(),
    };
    let config = if config.branches == 1 {
        EncoderConfig { sigma_max: 1.0, ..config }
    } else {
        config
    };
    let mut enc = LocationEncoder::new(&config)?;
    let base: Vec<f64> = (0..enc.param_count()).map(|i| enc.param(i)).collect();
    jitter(base.len(), rng, |i, d| enc.set_param(i, base[i] + d));
    let coords: Vec<GpsCoord> = (0..3).map(|_| random_coord(rng)).collect();
    let w = random_matrix(3, 3, rng);
    let (_, tape) = enc.forward_train(&coords)?;
    let analytic = enc.backward(&tape, &w)?.flatten();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..enc.param_count() {
        let x0 = enc.param(i);
        numeric.push(central_difference(
            |v| {
                enc.set_param(i, v);
                Ok(dot(enc.encode_gps_batch(&coords)?.as_slice(), w.as_slice()))
            },
            x0,
        )?);
        enc.set_param(i, x0);
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Below this loss the gradient is smaller than what central differences
/// can resolve, so such instances are redrawn.
const MIN_CHECKED_LOSS: f64 = 1e-4;

/// Loss over free (unnormalized) inputs: every row is normalized first, so
/// perturbed inputs stay valid, and the chain rule runs through the
/// normalization backward pass.
fn loss_gradient_error<R: Rng>(rng: &mut R) -> Result<f64> {
    loop {
        if let Some(err) = loss_gradient_instance(rng)? {
            return Ok(err);
        }
    }
}

fn loss_gradient_instance<R: Rng>(rng: &mut R) -> Result<Option<f64>> {
    let views = rng.random_range(1..3);
    let batch = rng.random_range(1..4);
    let queue = rng.random_range(0..4);
    let dim = rng.random_range(2..5);
    let raw = [
        random_matrix(batch * views, dim, rng),
        random_matrix(batch * views, dim, rng),
        random_matrix(queue, dim, rng),
    ];
    let tau = rng.random_range(0.05..1.0);
    let eval = |m: &[Matrix; 3], tau: f64| -> Result<f64> {
        let v = normalize_rows(&m[0])?.0;
        let l = normalize_rows(&m[1])?.0;
        let q = normalize_rows(&m[2])?.0;
        Ok(contrastive_loss(&v, &l, &q, tau, views)?.loss)
    };
    let (v, vn) = normalize_rows(&raw[0])?;
    let (l, ln) = normalize_rows(&raw[1])?;
    let (q, qn) = normalize_rows(&raw[2])?;
    let out = contrastive_loss(&v, &l, &q, tau, views)?;
    if out.loss < MIN_CHECKED_LOSS {
        return Ok(None);
    }
    let mut analytic: Vec<f64> = Vec::new();
    analytic.extend(normalize_rows_backward(&v, &vn, &out.d_images).as_slice());
    analytic.extend(normalize_rows_backward(&l, &ln, &out.d_locations).as_slice());
    analytic.extend(normalize_rows_backward(&q, &qn, &out.d_queue).as_slice());
    analytic.push(out.d_tau);

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut m = raw.clone();
    for t in 0..3 {
        for i in 0..m[t].as_slice().len() {
            let x0 = m[t].as_slice()[i];
            numeric.push(central_difference(
                |x| {
                    m[t].as_mut_slice()[i] = x;
                    eval(&m, tau)
                },
                x0,
            )?);
            m[t].as_mut_slice()[i] = x0;
        }
    }
    numeric.push(central_difference(|t| eval(&raw, t), tau)?);
    Ok(Some(relative_error(&analytic, &numeric)))
}

fn gradient_check<R: Rng>(
    name: &'static str,
    instances: usize,
    rng: &mut R,
    mut one: impl FnMut(&mut R) -> Result<f64>,
) -> CheckOutcome {
    let mut worst = 0.0f64;
    for _ in 0..instances {
        match one(rng) {
            Ok(err) => worst = worst.max(err),
            Err(e) => return outcome(name, false, e.to_string()),
        }
    }
    outcome(
        name,
        worst < GRADIENT_TOL,
        format!("{instances} instances, worst relative error {worst:.2e}"),
    )
}

/// Runs every check with randomness drawn from `seed`.
pub fn run_selftest(seed: u64, gradient_instances: usize) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = vec![check_schedule(), check_eep(&mut rng), check_rff(&mut rng)];
    results.push(check_loss_closed_forms().unwrap_or_else(|e| outcome("loss-closed-forms", false, e.to_string())));
    results.push(gradient_check("gradient-mlp", gradient_instances, &mut rng, mlp_gradient_error));
    results.push(gradient_check("gradient-encoder", gradient_instances, &mut rng, encoder_gradient_error));
    results.push(gradient_check("gradient-loss", gradient_instances, &mut rng, loss_gradient_error));
    results
}
