//! Scene-aware video anomaly detection at the feature level.
//!
//! Objects are encoded together with a pooled segmentation map of their
//! background, pulled toward same-scene and same-class neighbours in momentum
//! memory banks, and scored at test time by how well a memory-weighted latent
//! reconstructs them.
//!
//! ```
//! use hsc_core::nn::{l2_normalize, norm};
//!
//! let (v, _) = l2_normalize(&[3.0, 4.0]).unwrap();
//! assert!((norm(&v) - 1.0).abs() < 1e-15);
//! ```

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scene;
pub mod score;
pub mod skeleton;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use data::{load_dataset, save_dataset, Dataset};
pub use error::{HscError, Result};
pub use model::{Banks, HscModel, MemoryBank, StreamId};
pub use pipeline::{PipelineConfig, Stage2Mode};

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
