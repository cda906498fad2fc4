//! Fast knowledge distillation.
//!
//! Teacher soft labels are generated once per crop, compressed and stored
//! next to the crop's augmentation parameters. Training replays the stored
//! crops in multi-crop mini-batches, which reproduces online distillation
//! exactly while loading far fewer images and no teacher.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod image;
pub mod label_store;
pub mod numeric;
pub mod pipeline;
pub mod quantize;
pub mod relabel;
pub mod rng;
pub mod teacher;
pub mod train;

pub use error::{Error, FormatError, Result};
