//! Travel time estimation for road-network paths.
//!
//! A path is cut into overlapping sub-path windows, each window is rendered as
//! a multi-channel image (path, traffic, road network, signals), a 2D CNN turns
//! every image into a feature vector, and a 1D CNN over the sequence of feature
//! vectors regresses the travel time. Per-window heads add sub-path supervision.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod geo;
pub mod io;
pub mod model;
pub mod nn;
pub mod raster;
pub mod scalar;
pub mod synth;
pub mod traffic;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Image32 = raster::GeneralizedImage<f32>;
pub type Image64 = raster::GeneralizedImage<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
