use posepyr_tensor::{Element, Tensor};

use crate::annotation::Annotation;
use crate::error::Result;
use crate::model::HeatmapPyramid;
use crate::supervision::{level_sizes, make_targets};

/// Ground truth dressed up as a network prediction for one image: the
/// training targets as heatmaps, and a tagmap holding, for each keypoint type
/// and level-0 cell, the index of the person whose target dominates there
/// (0 where no target reaches). Decoding it measures the decoder alone.
pub fn oracle_pyramid<T: Element>(
    annotations: &[Annotation],
    input: (usize, usize),
    num_levels: usize,
    num_keypoints: usize,
    sigma: f64,
) -> Result<HeatmapPyramid<T>> {
    let levels = level_sizes(input, num_levels);
    let targets = make_targets::<T>(
        &[annotations.to_vec()],
        input,
        &levels,
        num_keypoints,
        sigma,
    )?;
    let (h, w) = levels[0];
    let mut best = vec![0.0f64; num_keypoints * h * w];
    let mut tags = vec![T::zero(); num_keypoints * h * w];
    for (i, a) in annotations.iter().enumerate() {
        let single = make_targets::<f64>(
            &[vec![a.clone()]],
            input,
            &levels[..1],
            num_keypoints,
            sigma,
        )?;
        for (j, &v) in single.heatmaps[0].data().iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                tags[j] = T::lit(i as f64);
            }
        }
    }
    Ok(HeatmapPyramid {
        levels: targets.heatmaps,
        tagmap: Tensor::from_vec(&[1, num_keypoints, h, w], tags)?,
    })
}
