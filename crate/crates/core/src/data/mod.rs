//! Clips, synthetic phantoms, frame-pair selection and binary persistence.

mod flow;
mod pairs;
mod phantom;
mod store;
mod video;

pub use flow::FlowField;
pub use pairs::{select_frame_pair, select_frame_pairs, FramePair, PairStrategy};
pub use phantom::{analytic_flow, generate_phantom, PhantomSpec};
pub use store::{
    read_feature_store, read_flow_store, write_feature_store, write_flow_store, FeatureRecord, FeatureStore,
};
pub use video::{clip_path, load_video_dataset, read_clip, read_manifest, write_clip, write_manifest, Split, VideoClip, MANIFEST_NAME};
