//! Skeleton-based action recognition over directed kinematic graphs:
//! partitioned adaptive graph convolution plus windowed spatio-temporal
//! attention.
//!
//! Module map:
//! - [`graph`]: kinematic trees, adjacency and partition strategies
//! - [`windows`]: spatio-temporal window layouts and relative positions
//! - [`engine`]: arrays, reverse-mode differentiation, finite differences
//! - [`layers`]: CAGC, STSE, the stacked model and two-stream fusion
//! - [`data`]: skeleton samples, preprocessing and a synthetic generator
//! - [`train`]: Adam, the step schedule, training and evaluation

pub mod data;
pub mod engine;
pub mod error;
pub mod graph;
pub mod layers;
pub mod train;
pub mod windows;

pub use engine::{Array, ParamStore, Tape};
pub use error::{Error, Result};
pub use graph::{PartitionStrategy, SkeletonTopology};
pub use layers::{DdGcn, ModelConfig};
pub use windows::WindowSpec;
