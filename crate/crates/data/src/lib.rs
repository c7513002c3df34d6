//! Image datasets for the capsule experiments: IDX ingestion, histology and
//! fundus patch preparation, and the subsampling / imbalance / augmentation
//! manipulations the experiment grid is built from.

pub mod augment;
pub mod clahe;
mod error;
pub mod idx;
pub mod manifest;
pub mod patches;
pub mod pnm;
pub mod resize;
pub mod sampling;
mod set;
pub mod stain;
pub mod synthetic;

pub use error::{DataError, Result};
pub use set::{Image, LabeledImageSet, Split};
