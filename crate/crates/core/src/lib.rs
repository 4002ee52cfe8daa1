//! Skin lesion segmentation on the CPU.
//!
//! Two pipelines share one data model: a valid-convolution U-Net
//! ([`unet`], built on the small autodiff engine in [`tensor`]) and an
//! unsupervised fuzzy c-means pipeline ([`fuzzyclust`]). [`posteval`]
//! scores both with Jaccard and Dice over seeded folds.

// `!(x > y)` is the NaN-rejecting form used for argument validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorspace;
pub mod config;
pub mod dataio;
pub mod error;
pub mod fuzzyclust;
pub mod morphology;
pub mod par;
pub mod pipeline;
pub mod posteval;
pub mod tensor;
pub mod unet;

pub use dataio::{BinaryMask, RgbImage};
pub use error::{Error, Result};
pub use par::Exec;
