//! Polygon-scan selective state-space segmentation.
//!
//! The crate is organised bottom-up:
//!
//! * [`scan`] builds polygon scan orders and the cross-scan / cross-merge pair.
//! * [`ssm`] runs the selective state-space recurrence along those orders.
//! * [`frequency`] holds the Haar wavelet analysis used by the frequency branch.
//! * [`attention`] assembles the space–frequency collaborative attention block.
//! * [`model`] wires everything into a small UNet and trains it with SPSA.
//! * [`metrics`] computes confusion-matrix metrics and ROC AUC.
//! * [`data_io`] reads and writes tensors and netpbm images, and synthesises
//!   vessel-like training data.
//! * [`cli`] is the command-line front end.

pub mod attention;
pub mod cli;
pub mod data_io;
pub mod error;
pub mod frequency;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scan;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
