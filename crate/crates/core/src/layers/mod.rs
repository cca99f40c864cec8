//! Network building blocks: channel-wise adaptive graph convolution, the
//! spatio-temporal synchronous encoder, the stacked model and stream fusion.

mod cagc;
pub mod checks;
mod model;
mod reference;
mod stgc;
mod stream;
mod stse;

pub use cagc::{reduced_channels, Cagc, GraphContext};
pub use model::{DdGcn, ModelConfig, DEFAULT_CHANNELS, DEFAULT_STRIDES};
pub use reference::{sgc_reference, Normalization};
pub use stgc::StgcLayer;
pub use stream::{argmax, bone_transform, fuse_scores};
pub use stse::{Stse, StseConfig, LAYER_NORM_EPS};
