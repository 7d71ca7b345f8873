//! Pseudo ground truth: contrastive re-identification embeddings and block-matching flow,
//! plus the losses that apply them to the feature extractor.

mod block_match;
mod contrastive;
mod losses;
mod reid;
mod resample;

pub use block_match::{block_match_flow, quantize, BlockMatchConfig};
pub use contrastive::{contrastive_loss, l2_normalize};
pub use losses::{flow_loss, flow_targets, pair_embeddings, reid_key, reid_loss, reid_loss_from_map};
pub use reid::{export_embeddings, reid_separation, train_reid, ReidConfig, ReidEmbedder, ReidReport, Separation};
pub use resample::resample_flow;
