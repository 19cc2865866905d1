//! COCO keypoint annotation and result files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::evaluate::{ImageGroundTruth, ImagePredictions};
use crate::annotation::{Annotation, Keypoint};
use crate::decode::{Pose, PoseKeypoint};
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    /// Flat `[x1, y1, v1, ..., xK, yK, vK]`.
    pub keypoints: Vec<f64>,
    pub num_keypoints: usize,
    pub area: f64,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub keypoints: Vec<String>,
    /// 1-based keypoint index pairs.
    #[serde(default)]
    pub skeleton: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a keypoint results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u32,
    pub keypoints: Vec<f64>,
    pub score: f64,
}

impl CocoAnnotation {
    pub fn from_annotation(a: &Annotation, image_id: u64) -> Self {
        let bbox = a.bbox.unwrap_or_else(|| keypoint_bbox(&a.keypoints));
        Self {
            id: a.person_id,
            image_id,
            category_id: 1,
            keypoints: a
                .keypoints
                .iter()
                .flat_map(|k| [k.x, k.y, k.v as f64])
                .collect(),
            num_keypoints: a.num_visible(),
            area: a.area,
            bbox,
            iscrowd: a.iscrowd as u8,
        }
    }

    pub fn to_annotation(&self) -> Result<Annotation> {
        if !self.keypoints.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "annotation {} has {} keypoint values, not a multiple of 3",
                self.id,
                self.keypoints.len()
            )));
        }
        let keypoints = self
            .keypoints
            .chunks(3)
            .map(|c| {
                let v = c[2];
                if !(v == 0.0 || v == 1.0 || v == 2.0) {
                    return Err(Error::InvalidArgument(format!(
                        "annotation {} has visibility {v}",
                        self.id
                    )));
                }
                Ok(Keypoint::new(c[0], c[1], v as u8))
            })
            .collect::<Result<_>>()?;
        Ok(Annotation {
            person_id: self.id,
            keypoints,
            area: self.area,
            bbox: Some(self.bbox),
            iscrowd: self.iscrowd != 0,
        })
    }
}

fn keypoint_bbox(kps: &[Keypoint]) -> [f64; 4] {
    let vis: Vec<_> = kps.iter().filter(|k| k.is_visible()).collect();
    if vis.is_empty() {
        return [0.0; 4];
    }
    let x0 = vis.iter().map(|k| k.x).fold(f64::INFINITY, f64::min);
    let x1 = vis.iter().map(|k| k.x).fold(f64::NEG_INFINITY, f64::max);
    let y0 = vis.iter().map(|k| k.y).fold(f64::INFINITY, f64::min);
    let y1 = vis.iter().map(|k| k.y).fold(f64::NEG_INFINITY, f64::max);
    [x0, y0, x1 - x0, y1 - y0]
}

impl CocoDataset {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    /// Ground truth grouped per image, in image order.
    pub fn ground_truth(&self) -> Result<Vec<ImageGroundTruth>> {
        let mut out: Vec<ImageGroundTruth> = self
            .images
            .iter()
            .map(|i| ImageGroundTruth {
                image_id: i.id,
                annotations: Vec::new(),
            })
            .collect();
        for a in &self.annotations {
            let slot = out
                .iter_mut()
                .find(|g| g.image_id == a.image_id)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "annotation {} refers to unknown image {}",
                        a.id, a.image_id
                    ))
                })?;
            slot.annotations.push(a.to_annotation()?);
        }
        Ok(out)
    }
}

impl CocoResult {
    pub fn from_pose(image_id: u64, pose: &Pose) -> Self {
        Self {
            image_id,
            category_id: 1,
            keypoints: pose
                .keypoints
                .iter()
                .flat_map(|k| [k.x, k.y, k.score])
                .collect(),
            score: pose.instance_score,
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        if !self.keypoints.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "result for image {} has {} keypoint values",
                self.image_id,
                self.keypoints.len()
            )));
        }
        let keypoints = self
            .keypoints
            .chunks(3)
            .map(|c| PoseKeypoint {
                x: c[0],
                y: c[1],
                score: c[2],
            })
            .collect();
        Ok(Pose {
            keypoints,
            instance_score: self.score,
            tag_mean: 0.0,
        })
    }
}

pub fn results_from_predictions(preds: &[ImagePredictions]) -> Vec<CocoResult> {
    preds
        .iter()
        .flat_map(|p| {
            p.poses
                .iter()
                .map(|pose| CocoResult::from_pose(p.image_id, pose))
        })
        .collect()
}

/// Groups a results file back into per-image predictions.
pub fn predictions_from_results(results: &[CocoResult]) -> Result<Vec<ImagePredictions>> {
    let mut out: Vec<ImagePredictions> = Vec::new();
    for r in results {
        let pose = r.to_pose()?;
        match out.iter_mut().find(|p| p.image_id == r.image_id) {
            Some(p) => p.poses.push(pose),
            None => out.push(ImagePredictions {
                image_id: r.image_id,
                poses: vec![pose],
            }),
        }
    }
    Ok(out)
}

pub fn load_results(path: &Path) -> Result<Vec<CocoResult>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
