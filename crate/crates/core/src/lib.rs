//! Latent style-space regularization for multi-domain image-to-image
//! translation.
//!
//! The crate contains the full training and evaluation stack of a
//! StarGAN v2-shaped translator at desk scale: the style-space primitives
//! (`latent`), the four networks (`networks`), the base translation losses
//! (`losses`), the shrinkage and mixup regularizers (`regularizers`), the
//! truly-unsupervised extension (`tunit`), the perceptual distances
//! (`perceptual`), the smoothness and quality metrics (`metrics`), data
//! provision (`data`) and orchestration (`harness`).

pub mod data;
pub mod error;
pub mod harness;
pub mod latent;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod perceptual;
pub mod regularizers;
pub mod tunit;

pub use error::{Error, Result};
