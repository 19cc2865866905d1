//! The multi-branch high-resolution backbone and its deconvolution pyramid.

mod complexity;
mod config;
mod net;

pub use complexity::{conv_flops, conv_params, StageCost};
pub use config::ModelConfig;
pub use net::{build_model, HeatmapPyramid, Model, PyramidVars};
