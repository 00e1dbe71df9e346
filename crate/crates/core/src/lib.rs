//! Automatic colorization of grayscale images with a U-Net whose encoder is a
//! ResNet34 and whose first decoder stage fuses a global image descriptor
//! into local features.
//!
//! The crate covers the whole pipeline: sRGB/Lab conversion
//! ([`colorspace`]), the network and its weight format ([`model`],
//! [`weights`]), joint regression/classification training ([`loss`],
//! [`optim`], [`train`], [`gradcheck`]), directory-per-class datasets
//! ([`dataset`]) and evaluation metrics ([`eval`]).

pub mod colorize;
pub mod colorspace;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelGraph};
pub use tensor::{Scalar, Tensor};
