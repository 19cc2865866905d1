use posepyr_tensor::{Element, Graph, Tensor, Var};

use crate::annotation::Annotation;
use crate::error::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 2.0;

/// Grid cell of a `level`-cell axis that contains image coordinate `x` on an
/// `input`-pixel axis. Pixel centers sit at integer coordinates, so cell `u`
/// covers `[u, u + 1) * input / level - 0.5`.
pub fn to_level_cell(x: f64, input: usize, level: usize) -> Option<usize> {
    let u = ((x + 0.5) * level as f64 / input as f64).floor();
    (u >= 0.0 && u < level as f64).then_some(u as usize)
}

/// Spatial sizes `(h, w)` of a pyramid with `levels` levels whose lowest
/// level is at 1/4 of the input.
pub fn level_sizes(input: (usize, usize), levels: usize) -> Vec<(usize, usize)> {
    (0..levels)
        .map(|i| ((input.0 / 4) << i, (input.1 / 4) << i))
        .collect()
}

/// Per image, per person: the `(keypoint type, y, x)` level-0 cells whose
/// tags belong together.
pub type TagIndices = Vec<Vec<Vec<(usize, usize, usize)>>>;

/// Supervision for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetPyramid<T> {
    /// Level `i` is `N x K x h_i x w_i`, values in `[0, 1]`.
    pub heatmaps: Vec<Tensor<T>>,
    /// Same shapes as `heatmaps`; 1 where the loss applies.
    pub masks: Vec<Tensor<T>>,
    pub tag_indices: TagIndices,
}

fn validate_levels(levels: &[(usize, usize)]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one level is required".into(),
        ));
    }
    for (i, w) in levels.windows(2).enumerate() {
        if w[1] != (2 * w[0].0, 2 * w[0].1) {
            return Err(Error::InvalidArgument(format!(
                "level {} must be twice level {i}: {:?} vs {:?}",
                i + 1,
                w[1],
                w[0]
            )));
        }
    }
    Ok(())
}

/// Gaussian targets for a batch. Each visible keypoint is mapped to the cell
/// containing it at every level and splatted as `exp(-d^2 / 2 sigma^2)` over a
/// window of radius `ceil(3 sigma)`; sigma is the same at every level.
/// Persons of the same keypoint type merge by per-pixel max. Crowd
/// annotations produce no targets and are masked out inside their bbox.
pub fn make_targets<T: Element>(
    batch: &[Vec<Annotation>],
    input: (usize, usize),
    levels: &[(usize, usize)],
    num_keypoints: usize,
    sigma: f64,
) -> Result<TargetPyramid<T>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    validate_levels(levels)?;
    let n = batch.len();
    let k = num_keypoints;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut heatmaps = Vec::with_capacity(levels.len());
    let mut masks = Vec::with_capacity(levels.len());
    for &(h, w) in levels {
        let mut heat = vec![0.0f64; n * k * h * w];
        let mut mask = vec![T::one(); n * k * h * w];
        for (b, annos) in batch.iter().enumerate() {
            for a in annos {
                check_keypoints(a, k)?;
                if a.iscrowd {
                    if let Some([bx, by, bw, bh]) = a.bbox {
                        let xs = cell_span(bx, bx + bw, input.1, w);
                        let ys = cell_span(by, by + bh, input.0, h);
                        for c in 0..k {
                            for y in ys.clone() {
                                for x in xs.clone() {
                                    mask[((b * k + c) * h + y) * w + x] = T::zero();
                                }
                            }
                        }
                    }
                    continue;
                }
                for (c, kp) in a.keypoints.iter().enumerate() {
                    if !kp.is_visible() {
                        continue;
                    }
                    let (Some(cx), Some(cy)) = (
                        to_level_cell(kp.x, input.1, w),
                        to_level_cell(kp.y, input.0, h),
                    ) else {
                        continue;
                    };
                    let plane = &mut heat[(b * k + c) * h * w..(b * k + c + 1) * h * w];
                    for dy in -radius..=radius {
                        let y = cy as i64 + dy;
                        if y < 0 || y >= h as i64 {
                            continue;
                        }
                        for dx in -radius..=radius {
                            let x = cx as i64 + dx;
                            if x < 0 || x >= w as i64 {
                                continue;
                            }
                            let v = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                            let slot = &mut plane[y as usize * w + x as usize];
                            *slot = slot.max(v);
                        }
                    }
                }
            }
        }
        let shape = [n, k, h, w];
        heatmaps.push(Tensor::from_vec(
            &shape,
            heat.into_iter().map(T::lit).collect(),
        )?);
        masks.push(Tensor::from_vec(&shape, mask)?);
    }
    Ok(TargetPyramid {
        heatmaps,
        masks,
        tag_indices: tag_indices(batch, input, levels[0], k)?,
    })
}

fn check_keypoints(a: &Annotation, k: usize) -> Result<()> {
    if a.keypoints.len() != k {
        return Err(Error::InvalidArgument(format!(
            "person {} has {} keypoints, expected {k}",
            a.person_id,
            a.keypoints.len()
        )));
    }
    Ok(())
}

fn cell_span(lo: f64, hi: f64, input: usize, level: usize) -> std::ops::Range<usize> {
    let scale = level as f64 / input as f64;
    let a = ((lo + 0.5) * scale).floor().clamp(0.0, level as f64) as usize;
    let b = ((hi + 0.5) * scale).ceil().clamp(0.0, level as f64) as usize;
    a..b
}

/// Level-0 cells sampled by the tag loss. Persons without a visible in-grid
/// keypoint and crowd annotations are skipped.
pub fn tag_indices(
    batch: &[Vec<Annotation>],
    input: (usize, usize),
    level0: (usize, usize),
    num_keypoints: usize,
) -> Result<TagIndices> {
    let (h, w) = level0;
    batch
        .iter()
        .map(|annos| {
            let mut persons = Vec::new();
            for a in annos.iter().filter(|a| !a.iscrowd) {
                check_keypoints(a, num_keypoints)?;
                let cells: Vec<_> = a
                    .keypoints
                    .iter()
                    .enumerate()
                    .filter(|(_, kp)| kp.is_visible())
                    .filter_map(|(c, kp)| {
                        Some((
                            c,
                            to_level_cell(kp.y, input.0, h)?,
                            to_level_cell(kp.x, input.1, w)?,
                        ))
                    })
                    .collect();
                if !cells.is_empty() {
                    persons.push(cells);
                }
            }
            Ok(persons)
        })
        .collect()
}

/// Sum over levels of the masked mean squared error; each level's squared
/// error is averaged over all of its elements.
pub fn heatmap_loss<T: Element>(
    g: &mut Graph<T>,
    preds: &[Var],
    targets: &TargetPyramid<T>,
) -> Result<Var> {
    if preds.len() != targets.heatmaps.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted levels vs {} target levels",
            preds.len(),
            targets.heatmaps.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (i, (&p, (t, m))) in preds
        .iter()
        .zip(targets.heatmaps.iter().zip(&targets.masks))
        .enumerate()
    {
        if g.shape(p) != t.shape() {
            return Err(Error::InvalidArgument(format!(
                "level {i}: prediction {:?} vs target {:?}",
                g.shape(p),
                t.shape()
            )));
        }
        let tv = g.constant(t.clone());
        let l = g.masked_mse(p, tv, m.data().to_vec())?;
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no levels".into()))
}
