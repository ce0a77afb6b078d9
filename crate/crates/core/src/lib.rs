//! Event-camera visual place recognition with a stateless spiking network.
//!
//! The crate covers the whole pipeline: parsing and rasterizing event
//! streams ([`event`]), training-time augmentations ([`augment`]), a small
//! reverse-mode substrate for spiking layers ([`snn`]), the SEW-ResNet
//! encoder and spiking MixVPR aggregator ([`arch`]), the NT-Xent objective
//! ([`contrastive`]), optimization and checkpoints ([`train`]), retrieval
//! metrics and baselines ([`retrieval`]), the analytical energy model
//! ([`energy`]) and a synthetic multi-traverse generator ([`synth`]).

pub mod arch;
pub mod augment;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod dataset;
pub mod energy;
pub mod error;
pub mod event;
pub mod retrieval;
pub mod rng;
pub mod snn;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
