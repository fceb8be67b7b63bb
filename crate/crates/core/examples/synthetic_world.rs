//! Trains on a synthetic world and reports held-out retrieval accuracy.
//!
//! Settings come from `key=value` arguments using the training config keys,
//! e.g. `cargo run --release --example synthetic_world -- epochs=5 lr=1e-4`.

use geoclip_core::gallery::{build_gallery, predict_top1, threshold_accuracy, Provenance, DEFAULT_THRESHOLDS_KM};
use geoclip_core::io::{apply_config, parse_config};
use geoclip_core::synth::{generate_world, WorldConfig};
use geoclip_core::{Precision, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = TrainConfig {
        batch_size: 64,
        queue_size: 512,
        lr: 1e-4,
        epochs: 12,
        stop_grad_queue: true,
        precision: Precision::F32,
        ..TrainConfig::default()
    };
    let mut world_cfg = WorldConfig::default();
    let mut args = String::new();
    for a in std::env::args().skip(1) {
        match a.split_once('=') {
            Some(("world_seed", v)) => world_cfg.seed = v.parse()?,
            Some(("feature_noise", v)) => world_cfg.feature_noise = v.parse()?,
            Some(("regions", v)) => world_cfg.regions = v.parse()?,
            Some(("cities_per_region", v)) => world_cfg.cities_per_region = v.parse()?,
            Some(("landmarks_per_city", v)) => world_cfg.landmarks_per_city = v.parse()?,
            Some(("train", v)) => world_cfg.train = v.parse()?,
            Some(("held_out", v)) => world_cfg.held_out = v.parse()?,
            _ => args.push_str(&format!("{a}\n")),
        }
    }
    apply_config(&parse_config(&args)?, &mut config)?;

    let world = generate_world(&world_cfg)?;
    let mut trainer = Trainer::new(config, world.train.feature_dim())?;
    trainer.fit(&world.train, |r| {
        println!(
            "epoch {:>2}  loss {:.4}  lr {:.2e}  tau {:.4}  {:.1}s",
            r.epoch,
            r.mean_loss,
            r.lr,
            r.tau,
            r.wall_ms as f64 / 1000.0
        )
    })?;
    let model = trainer.model();
    let gallery = build_gallery(world.train.coords(), &model.encoder, Provenance::TrainSample)?;
    let queries = model.embed_images(&world.held_out_features)?;
    let pred = predict_top1(&queries, &gallery)?;
    let report = threshold_accuracy(&pred, &world.held_out_coords, &DEFAULT_THRESHOLDS_KM)?;
    println!("{report}");
    Ok(())
}
