//! Training targets, losses and augmentation.

mod augment;
mod tags;
mod targets;

pub use augment::{apply_draw, augment, AffineDraw, AugmentConfig};
pub use tags::{tag_loss, tag_loss_terms, total_loss, LossWeights, TagLossTerms};
pub use targets::{
    heatmap_loss, level_sizes, make_targets, tag_indices, to_level_cell, TagIndices, TargetPyramid,
    DEFAULT_SIGMA,
};
