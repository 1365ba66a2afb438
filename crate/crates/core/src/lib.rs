//! Single-object visual tracking with a two-branch Siamese network.
//!
//! A modified VGG16 backbone and an AlexNet-like side branch (attached after
//! the second pooling stage) embed an exemplar patch and a search patch. Each
//! branch cross-correlates its embeddings into a 17×17 score map; the maps are
//! fused with a fixed weight `λ`, upsampled, and read off for the new target
//! position. The side-branch exemplar features pass through a
//! squeeze-and-excitation channel attention block, and the APCEP sharpness
//! score of the response gates scale updates when confidence collapses.
//!
//! The crate is organised by subsystem:
//!
//! - [`netmodel`]: layer specs, the two feature networks, channel attention,
//!   weight files.
//! - [`correlation`]: cross-correlation heads, fusion, response upsampling.
//! - [`labels_loss`]: ±1 label maps and the balanced logistic loss.
//! - [`confidence`]: APCE / APCEP and the confidence gate.
//! - [`siamese`]: the assembled model with its training graph.
//! - [`training`]: pair sampling, the SGD loop and checkpoints.
//! - [`tracker`]: the online tracking loop.
//! - [`evalbench`]: OTB-style sequences, success/precision metrics, reports.
//! - [`synthetic`]: generated moving-shape sequences for desk-scale runs.
//! - [`cli`]: layered configuration and the `siampf` command line.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

pub mod cli;
pub mod confidence;
pub mod correlation;
mod error;
pub mod evalbench;
pub mod frame;
pub mod labels_loss;
pub mod netmodel;
mod scalar;
pub mod siamese;
pub mod synthetic;
pub mod tracker;
pub mod training;
mod util;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use cli::RunConfig;
pub use correlation::ResponseMap;
pub use frame::Frame;
pub use netmodel::{FeatureMap, NetworkSpec};
pub use siamese::{ModelConfig, SiameseModel};
pub use tracker::{TargetState, Tracker, TrackerConfig};
pub use training::{Checkpoint, TrainConfig};

