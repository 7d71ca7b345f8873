//! Motion-appearance feature extractor: encoder, cross-frame attention, middle-frame
//! synthesis, pyramid losses, training and motion-vector export.

mod attention;
mod coords;
mod loss;
mod model;
mod pyramid;
mod train;

pub use attention::{cell_size, local_attention, Attended};
pub use coords::{coordinate_grid, CoordGrid};
pub use loss::{total_loss, total_loss_tensor, LossWeights};
pub use model::{
    compose_middle, extract_motion_vector, AppearanceFeatures, Mafe, MafeConfig, MafeOutput, MiddlePrediction, MotionFeatures,
    MOTION_SCALES,
};
pub use pyramid::{laplacian_loss, laplacian_pyramid, pyr_down, pyr_up, reconstruct, symmetric_index, BINOMIAL5};
pub use train::*;
