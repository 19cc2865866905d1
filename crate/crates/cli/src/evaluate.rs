//! Runs the inference pipeline over a dataset and scores it.

use anyhow::Result;
use posepyr_core::decode::{multi_scale_infer, InferenceConfig};
use posepyr_core::eval::{
    evaluate, AreaRanges, EvalReport, ImageGroundTruth, ImagePredictions, OksConstants,
};
use posepyr_core::model::Model;
use posepyr_core::synthdata::Dataset;
use posepyr_tensor::Element;

use crate::config::RunConfig;

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub inference: InferenceConfig,
    pub oks: OksConstants,
    pub ranges: AreaRanges,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig, flip: bool) -> Result<Self> {
        Ok(Self {
            inference: InferenceConfig {
                flip,
                ..cfg.inference.clone()
            },
            oks: cfg.data.oks(cfg.model.num_keypoints)?,
            ranges: cfg.data.area_ranges,
        })
    }
}

pub struct ModelEval {
    pub report: EvalReport,
    pub predictions: Vec<ImagePredictions>,
}

pub fn predict_dataset<T: Element>(
    model: &Model<T>,
    data: &Dataset,
    inference: &InferenceConfig,
) -> Result<Vec<ImagePredictions>> {
    data.samples
        .iter()
        .map(|s| {
            let inf = multi_scale_infer(model, &s.image, &data.keypoints.flip_index, inference)?;
            Ok(ImagePredictions {
                image_id: s.image_id,
                poses: inf.poses,
            })
        })
        .collect()
}

pub fn ground_truth(data: &Dataset) -> Vec<ImageGroundTruth> {
    data.samples
        .iter()
        .map(|s| ImageGroundTruth {
            image_id: s.image_id,
            annotations: s.annotations.clone(),
        })
        .collect()
}

pub fn evaluate_model<T: Element>(
    model: &Model<T>,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<ModelEval> {
    let predictions = predict_dataset(model, data, &opts.inference)?;
    let report = evaluate(&predictions, &ground_truth(data), &opts.oks, &opts.ranges)?;
    Ok(ModelEval {
        report,
        predictions,
    })
}
