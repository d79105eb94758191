//! Persistent-homology regularizers for deep regression.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: point clouds, Euclidean distance matrices, seeded subsampling.
//! - [`tda`]: Kruskal minimum spanning trees and 0-dimensional persistent homology.
//! - [`id_estimation`]: PH-dimension (MST growth slope) and TwoNN intrinsic-dimension estimators.
//! - [`regularizers`]: the dimension losses (`L'_d`, `L_d`), the topology loss `L_t`
//!   and their weighted combination, each returning a value and a gradient w.r.t. the features.
//! - [`nn`]: a two-layer ReLU regression network with hand-written backprop and AdamW.
//! - [`datasets`]: synthetic Swiss roll / torus / circle / mammoth targets and their
//!   100-dimensional signal+noise encoding.
//! - [`harness`]: the seeded experiment runner behind the `phreg` CLI.

pub mod datasets;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod id_estimation;
pub mod nn;
pub mod regularizers;
pub mod rng;
pub mod tda;

pub use error::{Error, Result};
pub use geometry::{DistanceMatrix, PointCloud};
