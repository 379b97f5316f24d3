//! Hyperspectral band grouping with visual cluster assessment and
//! multiple-kernel classification of the grouped features.

pub mod banding;
pub mod cube_io;
pub mod error;
pub mod export;
pub mod features;
pub mod kernels;
pub mod pipeline;
pub mod proximity;
pub mod store;
pub mod svm;
pub mod vat;

pub use error::{Error, Result};
