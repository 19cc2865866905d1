//! OKS and COCO-style AP/AR evaluation.

pub mod coco;
mod evaluate;
mod oks;

pub use evaluate::{
    evaluate, AreaRange, AreaRanges, EvalReport, ImageGroundTruth, ImagePredictions, MatchRecord,
    MAX_DETECTIONS, OKS_THRESHOLDS, RECALL_POINTS,
};
pub use oks::{oks, oks_keypoints, OksConstants};
