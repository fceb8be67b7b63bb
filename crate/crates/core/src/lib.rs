//! Continuous GPS embeddings trained contrastively against image features, and
//! worldwide image-to-GPS retrieval over coordinate galleries.

pub mod error;
pub mod gallery;
pub mod io;
pub mod geodesy;
pub mod linalg;
pub mod locenc;
pub mod net;
pub mod posenc;
pub mod selftest;
pub mod synth;
pub mod trainer;

pub use error::{GeoError, Result};
pub use geodesy::{GpsCoord, ProjectedCoord};
pub use linalg::{Matrix, Precision};
pub use locenc::{EncoderConfig, LocationEncoder};
pub use gallery::{GalleryIndex, Hit, Provenance, ThresholdReport};
pub use trainer::{Dataset, GeoClipModel, GpsQueue, TrainConfig, Trainer};
