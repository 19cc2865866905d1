//! Heatmap aggregation, peak extraction, tag grouping and the inference
//! pipeline.

mod group;
mod infer;
mod maps;
mod oracle;
mod peaks;

pub use group::{group, min_cost_assignment, GroupingMode, Pose, PoseKeypoint};
pub use infer::{
    decode_maps, multi_scale_infer, pyramid_maps, scale_maps, scaled_size, DecodeConfig, Inference,
    InferenceConfig,
};
pub use maps::{aggregate, flip_merge, resize_map};
pub use oracle::oracle_pyramid;
pub use peaks::{extract_peaks, KeypointCandidate};
