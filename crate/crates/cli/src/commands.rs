use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use geoclip_core::gallery::{
    average_views, predict_top1, restrict_gallery, sample_indices, threshold_accuracy,
};
use geoclip_core::geodesy::{fibonacci_lattice, land_filter, LandMask};
use geoclip_core::io::{
    apply_config, format_coords, grid_coords, heatmap, load_checkpoint, load_config, read_coords, read_embeddings,
    save_checkpoint, write_atomic, write_coords, write_embeddings, write_heatmap_csv, write_heatmap_pgm, Checkpoint,
    ConfigMap, EmbeddingFile, Heatmap,
};
use geoclip_core::net::{normalize_rows, ImageHead};
use geoclip_core::selftest::run_selftest;
use geoclip_core::synth::{generate_world, WorldConfig};
use geoclip_core::{
    Dataset, GalleryIndex, GeoClipModel, GeoError, GpsCoord, Matrix, Provenance, TrainConfig, Trainer,
};

use crate::args::{Cli, Command, EncodeArgs, EvalArgs, GalleryCommand, HeatmapArgs, SelftestArgs, SynthArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Geo(GeoError),
    Failed(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Geo(e) => e.kind(),
            CliError::Failed(_) => "check-failed",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            // the kind is printed separately; keep only the message
            CliError::Geo(
                GeoError::InvalidConfig(m)
                | GeoError::InvalidInput(m)
                | GeoError::DegenerateInput(m)
                | GeoError::InvalidState(m)
                | GeoError::RejectedInput(m)
                | GeoError::Format(m)
                | GeoError::Corruption(m),
            ) => f.write_str(m),
            CliError::Geo(GeoError::Io(e)) => write!(f, "{e}"),
            CliError::Geo(e) => write!(f, "{e}"),
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        CliError::Geo(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Geo(GeoError::Io(e))
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => train(a, seed),
        Command::Gallery(g) => gallery(g, seed),
        Command::Eval(a) => eval(a),
        Command::EncodeGps(a) => encode_gps(a),
        Command::Heatmap(a) => heatmap_cmd(a),
        Command::Selftest(a) => selftest(a, seed),
        Command::Synth(a) => synth(a, seed),
    }
}

/// Coordinates paired with a gallery embedding file: same path, `.csv` extension.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("csv")
}

/// Flags beat the config file, which beats the defaults.
fn train_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        apply_config(&load_config(path)?, &mut config)?;
    }
    let mut flags = ConfigMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k.to_string(), v);
        }
    };
    put("epochs", a.epochs.map(|v| v.to_string()));
    put("lr", a.lr.map(|v| v.to_string()));
    put("batch_size", a.batch_size.map(|v| v.to_string()));
    put("queue_size", a.queue_size.map(|v| v.to_string()));
    put("precision", a.precision.clone());
    put("seed", seed.map(|v| v.to_string()));
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{kv}`")))?;
        flags.insert(k.trim().to_string(), v.trim().to_string());
    }
    apply_config(&flags, &mut config)?;
    Ok(config)
}

fn count_mismatch(what: &str, records: usize, coords: usize) -> CliError {
    CliError::Geo(GeoError::InvalidInput(format!(
        "{what} has {records} records but the coordinate file has {coords} rows"
    )))
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut config = train_config(&a, seed)?;
    let features = read_embeddings(&a.embeddings)?;
    let (_, coords) = read_coords(&a.coords)?;
    if features.records() != coords.len() {
        return Err(count_mismatch("embedding file", features.records(), coords.len()));
    }
    if features.dim() != ImageHead::FEATURE_DIM {
        return Err(GeoError::InvalidInput(format!(
            "training needs {}-dim backbone features, got {}",
            ImageHead::FEATURE_DIM,
            features.dim()
        ))
        .into());
    }
    config.views = features.views;
    let dataset = Dataset::new(features.rows, features.views, coords)?;
    let mut trainer = Trainer::new(config, dataset.feature_dim())?;

    let mut log = String::new();
    let stdout = std::io::stdout();
    while trainer.epochs_done() < trainer.config().epochs {
        let r = trainer.run_epoch(&dataset)?;
        let line = serde_json::json!({
            "epoch": r.epoch,
            "mean_loss": r.mean_loss,
            "lr": r.lr,
            "tau": r.tau,
        });
        let mut out = stdout.lock();
        writeln!(out, "{}", serde_json::to_string(&r).expect("plain struct"))?;
        out.flush()?;
        if let Some(path) = &a.report {
            log.push_str(&line.to_string());
            log.push('\n');
            write_atomic(path, log.as_bytes())?;
        }
    }
    save_checkpoint(&Checkpoint::from_trainer(&trainer), &a.out)?;
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gallery(cmd: GalleryCommand, seed: Option<u64>) -> Result<()> {
    match cmd {
        GalleryCommand::Build { coords, checkpoint, out } => {
            let (ids, coords) = read_coords(&coords)?;
            let model = load_checkpoint(&checkpoint)?.model;
            let emb = model.encoder.encode_gps_batch(&coords)?;
            write_embeddings(&EmbeddingFile::new(emb, 1)?, &out)?;
            write_coords(sidecar(&out), Some(&ids), &coords)?;
        }
        GalleryCommand::Sample { coords, k, out } => {
            let (ids, coords) = read_coords(&coords)?;
            let pick = sample_indices(coords.len(), k, seed.unwrap_or(0))?;
            let ids: Vec<String> = pick.iter().map(|&i| ids[i].clone()).collect();
            let coords: Vec<GpsCoord> = pick.iter().map(|&i| coords[i]).collect();
            write_or_print(out.as_deref(), &format_coords(Some(&ids), &coords)?)?;
        }
        GalleryCommand::Lattice { n, land, out } => {
            let mut coords = fibonacci_lattice(n)?;
            if let Some(mask) = land {
                coords = land_filter(&coords, &LandMask::from_path(mask)?)?;
            }
            write_or_print(out.as_deref(), &format_coords(None, &coords)?)?;
        }
    }
    Ok(())
}

fn load_model(path: Option<&Path>, why: &str) -> Result<GeoClipModel> {
    let path = path.ok_or_else(|| CliError::Usage(format!("--checkpoint is required for {why}")))?;
    Ok(load_checkpoint(path)?.model)
}

/// Unit-norm shared-space rows for an embedding file: backbone features go
/// through the image head, 512-dim vectors are only renormalized.
fn shared_space(file: &EmbeddingFile, checkpoint: Option<&Path>) -> Result<Matrix> {
    if file.dim() == ImageHead::FEATURE_DIM {
        let model = load_model(checkpoint, "768-dim backbone features")?;
        Ok(model.embed_images(&file.rows)?)
    } else {
        Ok(normalize_rows(&file.rows)?.0)
    }
}

/// One query row per record: the first view, or the mean of all views.
fn per_record(rows: &Matrix, views: usize, tencrop: bool) -> Result<Matrix> {
    let records = rows.rows() / views;
    let mut out = Vec::with_capacity(records);
    for r in 0..records {
        if tencrop {
            let group: Vec<&[f64]> = (0..views).map(|j| rows.row(r * views + j)).collect();
            out.push(average_views(&group)?);
        } else {
            out.push(rows.row(r * views).to_vec());
        }
    }
    Ok(Matrix::from_rows(&out)?)
}

fn parse_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad number `{s}` in {what}")))
        })
        .collect()
}

/// `lat,lon,radius_km`.
pub fn parse_restrict(raw: &str) -> Result<(GpsCoord, f64)> {
    match parse_list(raw, "--restrict")?.as_slice() {
        &[lat, lon, r] => Ok((GpsCoord::new(lat, lon)?, r)),
        _ => Err(CliError::Usage(format!("--restrict expects lat,lon,radius_km, got `{raw}`"))),
    }
}

fn load_gallery(path: &Path) -> Result<GalleryIndex> {
    let file = read_embeddings(path)?;
    let (_, coords) = read_coords(sidecar(path))?;
    if file.records() != coords.len() || file.views != 1 {
        return Err(count_mismatch("gallery file", file.rows.rows(), coords.len()));
    }
    Ok(GalleryIndex::new(coords, normalize_rows(&file.rows)?.0, Provenance::TrainSample)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let file = read_embeddings(&a.queries)?;
    let (_, truth) = read_coords(&a.truth)?;
    if file.records() != truth.len() {
        return Err(count_mismatch("query file", file.records(), truth.len()));
    }
    let thresholds = parse_list(&a.thresholds, "--thresholds")?;
    let queries = per_record(&shared_space(&file, a.checkpoint.as_deref())?, file.views, a.tencrop)?;
    let mut gallery = load_gallery(&a.gallery)?;
    if let Some(raw) = &a.restrict {
        let (center, radius) = parse_restrict(raw)?;
        gallery = restrict_gallery(&gallery, center, radius)?;
    }
    let pred = predict_top1(&queries, &gallery)?;
    let report = threshold_accuracy(&pred, &truth, &thresholds)?;
    let json = serde_json::to_string(&report).expect("plain struct");
    println!("{report}");
    println!("{json}");
    if let Some(out) = &a.out {
        write_atomic(out, format!("{json}\n").as_bytes())?;
    }
    Ok(())
}

fn encode_gps(a: EncodeArgs) -> Result<()> {
    let (_, coords) = read_coords(&a.coords)?;
    let model = load_checkpoint(&a.checkpoint)?.model;
    let emb = model.encoder.encode_gps_batch(&coords)?;
    write_embeddings(&EmbeddingFile::new(emb, 1)?, &a.out)?;
    Ok(())
}

fn heatmap_cmd(a: HeatmapArgs) -> Result<()> {
    let file = read_embeddings(&a.query)?;
    if a.record >= file.records() {
        return Err(GeoError::InvalidInput(format!(
            "record {} requested from a file of {}",
            a.record,
            file.records()
        ))
        .into());
    }
    let model = load_checkpoint(&a.checkpoint)?.model;
    let row = Matrix::from_rows(&[file.rows.row(a.record * file.views)])?;
    let query = if file.dim() == ImageHead::FEATURE_DIM {
        model.embed_images(&row)?
    } else {
        normalize_rows(&row)?.0
    };
    let (rows, cols, coords) = grid_coords(a.grid_step)?;
    let scores = heatmap(query.row(0), &coords, &model.encoder)?;
    let map = Heatmap {
        rows,
        cols,
        coords,
        scores,
    };
    write_heatmap_csv(&map, &a.out)?;
    if let Some(p) = &a.pgm {
        write_heatmap_pgm(&map, p)?;
    }
    Ok(())
}

fn selftest(a: SelftestArgs, seed: Option<u64>) -> Result<()> {
    let results = run_selftest(seed.unwrap_or(0), a.instances);
    let mut out = std::io::stdout().lock();
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {}: {}", r.name, r.detail)?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} checks failed", results.len())));
    }
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let cfg = WorldConfig {
        train: a.train,
        held_out: a.held_out,
        views: a.views,
        seed: seed.unwrap_or(0),
        ..WorldConfig::fixture()
    };
    let world = generate_world(&cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let dir = &a.out_dir;
    write_embeddings(&EmbeddingFile::new(world.train.features().clone(), a.views)?, dir.join("train.gceb"))?;
    write_coords(dir.join("train.csv"), None, world.train.coords())?;
    if a.held_out > 0 {
        write_embeddings(&EmbeddingFile::new(world.held_out_features, a.views)?, dir.join("heldout.gceb"))?;
        write_coords(dir.join("heldout.csv"), None, &world.held_out_coords)?;
    }
    Ok(())
}
