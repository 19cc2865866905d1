use posepyr_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use super::group::{group, GroupingMode, Pose};
use super::maps::{aggregate, flip_merge, resize_map};
use super::peaks::extract_peaks;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{HeatmapPyramid, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub max_per_type: usize,
    pub peak_threshold: f64,
    pub tag_threshold: f64,
    pub grouping: GroupingMode,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_per_type: 30,
            peak_threshold: 0.1,
            tag_threshold: 1.0,
            grouping: GroupingMode::Greedy,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub flip: bool,
    pub scales: Vec<f64>,
    /// Average all pyramid levels; otherwise use only the highest resolution.
    pub aggregate: bool,
    /// Short side at scale 1; defaults to the model input size.
    pub base_size: Option<usize>,
    pub decode: DecodeConfig,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            flip: true,
            scales: vec![1.0],
            aggregate: true,
            base_size: None,
            decode: DecodeConfig::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!(
                "scales must be a nonempty list of positive values, got {:?}",
                self.scales
            )));
        }
        Ok(())
    }
}

/// Decoded poses plus the maps they were read from, at original image size.
#[derive(Clone, Debug)]
pub struct Inference<T> {
    pub poses: Vec<Pose>,
    /// `K x H x W`.
    pub heatmaps: Tensor<T>,
    /// `K x H x W`.
    pub tags: Tensor<T>,
}

/// Peaks and grouping on final maps.
pub fn decode_maps<T: Element>(
    heatmaps: &Tensor<T>,
    tags: &Tensor<T>,
    cfg: &DecodeConfig,
) -> Result<Vec<Pose>> {
    let cands = extract_peaks(heatmaps, tags, cfg.max_per_type, cfg.peak_threshold)?;
    let k = super::maps::khw(heatmaps)?.0;
    Ok(group(&cands, k, cfg.tag_threshold, cfg.grouping))
}

/// Single-image pyramid to heatmaps and tags at `out` size.
pub fn pyramid_maps<T: Element>(
    pyramid: &HeatmapPyramid<T>,
    out: (usize, usize),
    use_all_levels: bool,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let levels = if use_all_levels {
        &pyramid.levels[..]
    } else {
        &pyramid.levels[pyramid.levels.len() - 1..]
    };
    Ok((aggregate(levels, out)?, resize_map(&pyramid.tagmap, out)?))
}

fn round_to(v: f64, m: usize) -> usize {
    (((v / m as f64).round() as usize).max(1)) * m
}

/// Network input size for `image` at `scale`: short side `scale * base`,
/// aspect kept, both sides rounded to the model's size divisor.
pub fn scaled_size(
    width: usize,
    height: usize,
    base: usize,
    scale: f64,
    divisor: usize,
) -> (usize, usize) {
    let short = width.min(height) as f64;
    let r = scale * base as f64 / short;
    (
        round_to(width as f64 * r, divisor),
        round_to(height as f64 * r, divisor),
    )
}

/// Heatmaps of one scale at original size, flip-merged if requested, and the
/// unflipped tags.
pub fn scale_maps<T: Element>(
    model: &Model<T>,
    image: &Image,
    scale: f64,
    flip_index: &[usize],
    cfg: &InferenceConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let base = cfg.base_size.unwrap_or(model.config().input_size);
    let (w, h) = scaled_size(
        image.width(),
        image.height(),
        base,
        scale,
        model.config().size_divisor(),
    );
    let resized = image.resize(w, h);
    let mut batch = vec![resized.to_tensor::<T>()];
    if cfg.flip {
        batch.push(resized.flip_horizontal().to_tensor());
    }
    let pyr = model.predict(&Tensor::stack(&batch)?)?;
    let out = (image.height(), image.width());
    let (mut heat, tags) = pyramid_maps(&pyr.item(0)?, out, cfg.aggregate)?;
    if cfg.flip {
        // Mirror-then-resize equals resize-then-mirror for this sampling grid.
        let (flipped, _) = pyramid_maps(&pyr.item(1)?, out, cfg.aggregate)?;
        heat = flip_merge(&heat, &flipped, flip_index)?;
    }
    Ok((heat, tags))
}

/// Runs the network at every scale, flip-merges per scale, averages the
/// heatmaps over scales and decodes. Tags come from the scale closest to 1.
pub fn multi_scale_infer<T: Element>(
    model: &Model<T>,
    image: &Image,
    flip_index: &[usize],
    cfg: &InferenceConfig,
) -> Result<Inference<T>> {
    cfg.validate()?;
    let tag_scale = cfg
        .scales
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .map(|(i, _)| i)
        .expect("nonempty");
    let mut acc: Option<Vec<T>> = None;
    let mut tags = None;
    let mut shape = Vec::new();
    for (i, &s) in cfg.scales.iter().enumerate() {
        let (heat, t) = scale_maps(model, image, s, flip_index, cfg)?;
        if i == tag_scale {
            tags = Some(t);
        }
        shape = heat.shape().to_vec();
        match &mut acc {
            Some(a) => a.iter_mut().zip(heat.data()).for_each(|(a, &b)| *a += b),
            None => acc = Some(heat.into_data()),
        }
    }
    let n = T::lit(cfg.scales.len() as f64);
    let mut heat = acc.expect("nonempty");
    heat.iter_mut().for_each(|v| *v = *v / n);
    let heatmaps = Tensor::from_vec(&shape, heat)?;
    let tags = tags.expect("tag scale visited");
    let poses = decode_maps(&heatmaps, &tags, &cfg.decode)?;
    Ok(Inference {
        poses,
        heatmaps,
        tags,
    })
}
