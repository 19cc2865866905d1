//! Heatmap and pose-overlay images.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Result};
use posepyr_core::decode::Pose;
use posepyr_core::image::save_gray_png;
use posepyr_core::model::HeatmapPyramid;
use posepyr_core::Image;
use posepyr_tensor::Element;

use crate::commands::{atomic_path, commit};

pub const SKELETON_COLOR: [f32; 3] = [1.0, 1.0, 0.0];
pub const KEYPOINT_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

/// Writes `{prefix}_level{l}_kp{k}.png` for every pyramid level and each
/// requested keypoint type. Values are clamped to `[0, 1]`.
pub fn save_heatmaps<T: Element>(
    pyramid: &HeatmapPyramid<T>,
    keypoints: &[usize],
    dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (l, level) in pyramid.levels.iter().enumerate() {
        let [n, kk, h, w] = level.dims4()?;
        ensure!(
            n == 1,
            "plotting expects a single image, got a batch of {n}"
        );
        for &k in keypoints {
            ensure!(k < kk, "keypoint type {k} out of range for {kk} types");
            let plane: Vec<f32> = level.data()[k * h * w..(k + 1) * h * w]
                .iter()
                .map(|v| v.to_f32().unwrap_or(0.0).clamp(0.0, 1.0))
                .collect();
            let path = dir.join(format!("{prefix}_level{l}_kp{k}.png"));
            let tmp = atomic_path(&path);
            save_gray_png(&tmp, w, h, &plane)?;
            commit(&tmp, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn stamp(img: &mut Image, x: f64, y: f64, radius: f64, color: [f32; 3]) {
    let r = radius.ceil() as i64;
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for py in cy - r..=cy + r {
        for px in cx - r..=cx + r {
            let inside = ((px - cx).pow(2) + (py - cy).pow(2)) as f64 <= radius * radius;
            if inside
                && px >= 0
                && py >= 0
                && (px as usize) < img.width()
                && (py as usize) < img.height()
            {
                img.blend(py as usize, px as usize, color, 1.0);
            }
        }
    }
}

/// Draws each pose's skeleton (limbs between present keypoints, as pairs of
/// keypoint indices) and then its present keypoints on a copy of `image`.
pub fn overlay(image: &Image, poses: &[Pose], limbs: &[(usize, usize)]) -> Image {
    let mut out = image.clone();
    for pose in poses {
        for &(a, b) in limbs {
            let (Some(p), Some(q)) = (pose.keypoints.get(a), pose.keypoints.get(b)) else {
                continue;
            };
            if p.score <= 0.0 || q.score <= 0.0 {
                continue;
            }
            let steps = ((q.x - p.x).hypot(q.y - p.y) * 2.0).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                stamp(
                    &mut out,
                    p.x + t * (q.x - p.x),
                    p.y + t * (q.y - p.y),
                    0.5,
                    SKELETON_COLOR,
                );
            }
        }
        for kp in pose.keypoints.iter().filter(|k| k.score > 0.0) {
            stamp(&mut out, kp.x, kp.y, 1.5, KEYPOINT_COLOR);
        }
    }
    out
}

pub fn save_overlay(
    image: &Image,
    poses: &[Pose],
    limbs: &[(usize, usize)],
    path: &Path,
) -> Result<()> {
    let tmp = atomic_path(path);
    overlay(image, poses, limbs).save_png(&tmp)?;
    commit(&tmp, path)
}
