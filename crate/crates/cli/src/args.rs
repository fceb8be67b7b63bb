use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "geoclip", version, about = "GPS embeddings and image-to-GPS retrieval")]
pub struct Cli {
    /// Seed for every random choice; overrides `seed` in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the location encoder and image head on precomputed features.
    Train(TrainArgs),
    /// Build, sample or lay out coordinate galleries.
    #[command(subcommand)]
    Gallery(GalleryCommand),
    /// Top-1 retrieval accuracy of queries against a gallery.
    Eval(EvalArgs),
    /// Location embeddings for a coordinate file.
    EncodeGps(EncodeArgs),
    /// Similarity of one query to a world grid of locations.
    Heatmap(HeatmapArgs),
    /// Analytic invariant checks of the model code.
    Selftest(SelftestArgs),
    /// Write a synthetic world as embedding and coordinate files.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Backbone image features (768-dim embedding file).
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Coordinates of the records, `id,lat,lon`.
    #[arg(long)]
    pub coords: PathBuf,
    /// Flat `key = value` training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the epoch reports (without wall times) to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub queue_size: Option<usize>,
    /// `f64` or `f32` matrix products.
    #[arg(long)]
    pub precision: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum GalleryCommand {
    /// Encode a coordinate file; writes the embeddings and a sidecar `.csv`.
    Build {
        #[arg(long)]
        coords: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random subset of `k` coordinates.
    Sample {
        #[arg(long)]
        coords: PathBuf,
        #[arg(long)]
        k: usize,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evenly spaced Fibonacci-lattice coordinates.
    Lattice {
        #[arg(long)]
        n: usize,
        /// Keep only points on land in this mask.
        #[arg(long)]
        land: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Query embeddings: 768-dim backbone features or 512-dim shared-space vectors.
    #[arg(long)]
    pub queries: PathBuf,
    /// True coordinates of the queries.
    #[arg(long)]
    pub truth: PathBuf,
    /// Gallery embedding file; coordinates come from its sidecar `.csv`.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Needed for 768-dim queries.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Only consider gallery entries within `radius_km` of `lat,lon`.
    #[arg(long, value_name = "LAT,LON,RADIUS_KM")]
    pub restrict: Option<String>,
    /// Average the embeddings of all views of a record.
    #[arg(long)]
    pub tencrop: bool,
    /// Distance thresholds in km, comma separated.
    #[arg(long, default_value = "1,25,200,750,2500")]
    pub thresholds: String,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub coords: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    /// Embedding file holding the query (768-dim features go through the head).
    #[arg(long)]
    pub query: PathBuf,
    /// Which record of the query file to use.
    #[arg(long, default_value_t = 0)]
    pub record: usize,
    #[arg(long)]
    pub grid_step: f64,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV of `lat,lon,score`.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional grayscale raster of the same map.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Random instances per gradient check.
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 50)]
    pub held_out: usize,
    #[arg(long, default_value_t = 1)]
    pub views: usize,
}
