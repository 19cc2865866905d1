//! Deterministic synthetic multi-person scenes of articulated stick figures.

mod render;
mod scene;

pub use scene::{
    export, generate_image, generate_split, load_dataset, to_coco, Dataset, Sample, SceneConfig,
};
