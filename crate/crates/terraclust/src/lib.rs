//! Unsupervised zoning of a region observed as a sequence of tiled raster
//! images: a triplet-loss tile encoder, K-means clustering of the resulting
//! embedding time series, clustering-driven encoder refinement, and the
//! analysis toolkit (color maps, projections, medoids, interpolations,
//! semantic trees, validity scores).
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `terraclust` binary for the file-based pipeline.

pub mod analysis;
pub mod encoder;
pub mod error;
pub mod kmeans;
pub mod mts;
pub mod pipeline;
pub mod raster;
pub mod triplets;
pub mod util;

pub use error::{Error, Result};
