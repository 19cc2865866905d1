use serde::{Deserialize, Serialize};

use crate::annotation::Annotation;
use crate::decode::{Pose, PoseKeypoint};
use crate::error::{Error, Result};
use crate::skeleton::COCO_SIGMAS;

/// Per-keypoint falloff constants `k_i` of the OKS metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OksConstants {
    k: Vec<f64>,
}

impl OksConstants {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() || k.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!(
                "OKS constants must be positive, got {k:?}"
            )));
        }
        Ok(Self { k })
    }

    pub fn uniform(num_keypoints: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; num_keypoints])
    }

    /// Constants for the given COCO joints from the published sigmas (`k = 2 sigma`).
    pub fn coco(joints: &[usize]) -> Result<Self> {
        Self::new(joints.iter().map(|&j| 2.0 * COCO_SIGMAS[j]).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }
}

/// OKS between predicted keypoints and a ground truth, averaging
/// `exp(-d^2 / (2 s^2 k^2))` over the visible ground-truth keypoints with
/// `s^2` the ground-truth area.
pub fn oks_keypoints(pred: &[PoseKeypoint], gt: &Annotation, consts: &OksConstants) -> Result<f64> {
    let k = consts.values();
    if pred.len() != gt.keypoints.len() || k.len() != gt.keypoints.len() {
        return Err(Error::InvalidArgument(format!(
            "OKS over {} predicted, {} ground-truth keypoints and {} constants",
            pred.len(),
            gt.keypoints.len(),
            k.len()
        )));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, g), ki) in pred.iter().zip(&gt.keypoints).zip(k) {
        if !g.is_visible() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / (2.0 * gt.area * ki * ki)).exp();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoVisibleKeypoints);
    }
    Ok(sum / n as f64)
}

pub fn oks(pred: &Pose, gt: &Annotation, consts: &OksConstants) -> Result<f64> {
    oks_keypoints(&pred.keypoints, gt, consts)
}
