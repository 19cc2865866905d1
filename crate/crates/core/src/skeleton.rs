//! Keypoint naming, left/right flip tables and the limb graph used for
//! rendering and overlays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 17 body joints in the conventional COCO order.
pub const COCO_JOINTS: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Joints annotated when fewer than 17 are requested, most informative first.
const PRIORITY: [usize; 17] = [0, 9, 10, 15, 16, 5, 6, 11, 12, 7, 8, 13, 14, 1, 2, 3, 4];

/// Rendered limbs as pairs of COCO joint indices.
pub const COCO_LIMBS: [(usize, usize); 16] = [
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
];

/// Standard COCO per-keypoint sigmas; the falloff constant is `2 * sigma`.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub names: Vec<String>,
    /// COCO joint index of each annotated keypoint.
    pub joints: Vec<usize>,
    /// `flip_index[k]` is the keypoint that `k` becomes under a mirror.
    pub flip_index: Vec<usize>,
}

impl KeypointSet {
    /// The first `k` joints of the priority order, re-sorted into COCO order
    /// when `k == 17`. `k = 5` gives nose, both wrists and both ankles.
    pub fn standard(k: usize) -> Result<Self> {
        if k == 0 || k > COCO_JOINTS.len() {
            return Err(Error::Config(format!(
                "keypoint count must be in 1..=17, got {k}"
            )));
        }
        let mut joints: Vec<usize> = PRIORITY[..k].to_vec();
        if k == COCO_JOINTS.len() {
            joints.sort_unstable();
        }
        let names: Vec<String> = joints.iter().map(|&j| COCO_JOINTS[j].to_string()).collect();
        let flip_index = flip_index(&names)?;
        Ok(Self {
            names,
            joints,
            flip_index,
        })
    }

    /// Builds a set from COCO joint names, in the given order.
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let joints = names
            .iter()
            .map(|n| {
                COCO_JOINTS
                    .iter()
                    .position(|j| j == n)
                    .ok_or_else(|| Error::Config(format!("unknown keypoint name {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let flip_index = flip_index(&names)?;
        Ok(Self {
            names,
            joints,
            flip_index,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Limbs whose endpoints are both annotated, as keypoint indices.
    pub fn limbs(&self) -> Vec<(usize, usize)> {
        let pos = |j: usize| self.joints.iter().position(|&x| x == j);
        COCO_LIMBS
            .iter()
            .filter_map(|&(a, b)| Some((pos(a)?, pos(b)?)))
            .collect()
    }
}

/// Pairs `left_*` with `right_*`; other names map to themselves.
pub fn flip_index(names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let partner = if let Some(rest) = n.strip_prefix("left_") {
                format!("right_{rest}")
            } else if let Some(rest) = n.strip_prefix("right_") {
                format!("left_{rest}")
            } else {
                return Ok(i);
            };
            names.iter().position(|m| *m == partner).ok_or_else(|| {
                Error::Config(format!("keypoint {n} has no mirrored partner {partner}"))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_point_set() {
        let s = KeypointSet::standard(5).unwrap();
        assert_eq!(
            s.names,
            [
                "nose",
                "left_wrist",
                "right_wrist",
                "left_ankle",
                "right_ankle"
            ]
        );
        assert_eq!(s.flip_index, [0, 2, 1, 4, 3]);
    }

    #[test]
    fn full_set_is_coco_order_and_flip_is_an_involution() {
        let s = KeypointSet::standard(17).unwrap();
        assert_eq!(s.joints, (0..17).collect::<Vec<_>>());
        for (k, &f) in s.flip_index.iter().enumerate() {
            assert_eq!(s.flip_index[f], k);
        }
        assert_eq!(s.limbs().len(), COCO_LIMBS.len());
    }

    #[test]
    fn unpaired_side_is_rejected() {
        let names = vec!["left_wrist".to_string()];
        assert!(flip_index(&names).is_err());
        assert!(KeypointSet::standard(2).is_err());
    }
}
