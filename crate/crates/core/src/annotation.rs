use serde::{Deserialize, Serialize};

/// One keypoint in image pixels; pixel `i` has its center at coordinate `i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// 0 = not labeled / masked, 1 = labeled but occluded, 2 = labeled and visible.
    pub v: u8,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: u8) -> Self {
        Self { x, y, v }
    }

    pub fn is_visible(&self) -> bool {
        self.v > 0
    }
}

/// Ground truth for one person.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub person_id: u64,
    pub keypoints: Vec<Keypoint>,
    /// Person area in px², the `s²` of the OKS metric.
    pub area: f64,
    /// `(x, y, w, h)`.
    pub bbox: Option<[f64; 4]>,
    #[serde(default)]
    pub iscrowd: bool,
}

impl Annotation {
    pub fn num_visible(&self) -> usize {
        self.keypoints.iter().filter(|k| k.is_visible()).count()
    }
}
