//! Frequency-domain quantization defense against small adversarial
//! perturbations: corpus statistics, table design, the defend/compress
//! pipeline, augmentation export and ensemble voting.

pub mod ablation;
pub mod augment;
pub mod codec;
pub mod design;
pub mod ensemble;
pub mod error;
pub mod image;
pub mod io;
pub mod json;
pub mod metrics;
pub mod perturb;
pub mod quant;
pub mod stats;
pub mod transform;

pub use codec::{decode, defend, encode, scale_table, CodecConfig, CoefArchive, TableSpec};
pub use design::{optimize, BandPartition, Design, DesignConfig, EvalReport, Evaluator};
pub use ensemble::{ConfidenceVector, EnsembleDecision, VoteRule};
pub use error::{ArchiveError, Error, Result};
pub use image::{ColorPath, ImageBuffer, Plane};
pub use perturb::{PerturbKind, PerturbSpec, Residual};
pub use quant::QuantTable;
pub use stats::{BandRatio, BandStats, ChannelTag};
pub use transform::CoefBlock;
