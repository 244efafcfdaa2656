//! Skeleton pose forecasting on pseudo-image sequences.
//!
//! Joint-coordinate skeleton frames are laid out as `N × 3` one-channel
//! images (one row per joint, in a body-part aware order). A convolutional
//! encoder-dynamics-decoder network then maps `m` observed images to all `K`
//! future images in a single pass, with one independent decoder per future
//! frame. The crate carries its own small reverse-mode tensor engine so every
//! gradient can be checked against finite differences.

pub mod blocks;
pub mod checkpoint;
mod conv;
pub mod data;
pub mod edd;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod params;
pub mod repr;
pub mod skeleton;
pub mod ste;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, NodeId, OpKind, Tape};
pub use tensor::Tensor;
