use serde::{Deserialize, Serialize};

use super::oks::{oks, OksConstants};
use crate::annotation::Annotation;
use crate::decode::Pose;
use crate::error::{Error, Result};

pub const OKS_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
pub const RECALL_POINTS: usize = 101;
pub const MAX_DETECTIONS: usize = 20;

/// Half-open area interval `(lo, hi]` in px².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRange {
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub fn contains(&self, area: f64) -> bool {
        area > self.lo && area <= self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaRanges {
    pub all: AreaRange,
    pub medium: AreaRange,
    pub large: AreaRange,
}

impl Default for AreaRanges {
    fn default() -> Self {
        Self {
            all: AreaRange {
                lo: -1.0,
                hi: f64::INFINITY,
            },
            medium: AreaRange {
                lo: 32.0 * 32.0,
                hi: 96.0 * 96.0,
            },
            large: AreaRange {
                lo: 96.0 * 96.0,
                hi: f64::INFINITY,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePredictions {
    pub image_id: u64,
    pub poses: Vec<Pose>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGroundTruth {
    pub image_id: u64,
    pub annotations: Vec<Annotation>,
}

/// One prediction matched to a ground truth at the 0.5 threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub image_id: u64,
    /// Index into the image's predictions as given.
    pub prediction: usize,
    pub person_id: u64,
    pub oks: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar: f64,
    pub ar50: f64,
    pub ar75: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
    /// Interpolated precision at each threshold (rows) and recall point, all areas.
    pub precision: Vec<Vec<f64>>,
    /// Average precision per threshold, all areas.
    pub ap_per_threshold: Vec<f64>,
    pub matches: Vec<MatchRecord>,
}

impl EvalReport {
    /// `(name, value)` pairs in a fixed order.
    pub fn metrics(&self) -> [(&'static str, f64); 10] {
        [
            ("AP", self.ap),
            ("AP50", self.ap50),
            ("AP75", self.ap75),
            ("AP_M", self.ap_medium),
            ("AP_L", self.ap_large),
            ("AR", self.ar),
            ("AR50", self.ar50),
            ("AR75", self.ar75),
            ("AR_M", self.ar_medium),
            ("AR_L", self.ar_large),
        ]
    }
}

/// Detections of one image after sorting and truncation, with their
/// per-threshold match outcome.
struct ImageEval {
    image_id: u64,
    /// `(score, original index, ignored-by-area)` per kept prediction.
    dets: Vec<(f64, usize, bool)>,
    /// `matched[t][d]`: ground-truth index matched at threshold `t`.
    matched: Vec<Vec<Option<usize>>>,
    /// Whether the matched ground truth (if any) is ignored.
    det_ignored: Vec<Vec<bool>>,
    positives: usize,
}

fn pose_area(p: &Pose) -> f64 {
    let present: Vec<_> = p.keypoints.iter().filter(|k| k.score > 0.0).collect();
    if present.is_empty() {
        return 0.0;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for k in present {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    (x1 - x0) * (y1 - y0)
}

fn evaluate_image(
    image_id: u64,
    poses: &[Pose],
    gts: &[Annotation],
    consts: &OksConstants,
    range: AreaRange,
) -> Result<ImageEval> {
    // Non-ignored ground truths first; stable so input order breaks ties.
    let mut order: Vec<usize> = (0..gts.len()).collect();
    let ignored = |g: &Annotation| g.iscrowd || g.num_visible() == 0 || !range.contains(g.area);
    order.sort_by_key(|&i| ignored(&gts[i]));
    let gt_ignored: Vec<bool> = order.iter().map(|&i| ignored(&gts[i])).collect();

    let mut dets: Vec<usize> = (0..poses.len()).collect();
    dets.sort_by(|&a, &b| poses[b].instance_score.total_cmp(&poses[a].instance_score));
    dets.truncate(MAX_DETECTIONS);

    let mut ious = vec![vec![f64::NEG_INFINITY; order.len()]; dets.len()];
    for (d, &pi) in dets.iter().enumerate() {
        for (g, &gi) in order.iter().enumerate() {
            ious[d][g] = match oks(&poses[pi], &gts[gi], consts) {
                Ok(v) => v,
                Err(Error::NoVisibleKeypoints) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
        }
    }

    let mut matched = Vec::with_capacity(OKS_THRESHOLDS.len());
    let mut det_ignored = Vec::with_capacity(OKS_THRESHOLDS.len());
    for &t in &OKS_THRESHOLDS {
        let mut gt_taken = vec![false; order.len()];
        let mut m = vec![None; dets.len()];
        let mut ig = vec![false; dets.len()];
        for d in 0..dets.len() {
            let mut best = t.min(1.0 - 1e-10);
            let mut hit: Option<usize> = None;
            for g in 0..order.len() {
                let crowd = gts[order[g]].iscrowd;
                if gt_taken[g] && !crowd {
                    continue;
                }
                // Once matched to a regular gt, do not fall back to ignored ones.
                if let Some(h) = hit {
                    if !gt_ignored[h] && gt_ignored[g] {
                        break;
                    }
                }
                if ious[d][g] < best {
                    continue;
                }
                best = ious[d][g];
                hit = Some(g);
            }
            if let Some(g) = hit {
                gt_taken[g] = true;
                m[d] = Some(g);
                ig[d] = gt_ignored[g];
            } else {
                ig[d] = !range.contains(pose_area(&poses[dets[d]]));
            }
        }
        matched.push(m.into_iter().map(|g| g.map(|g| order[g])).collect());
        det_ignored.push(ig);
    }
    Ok(ImageEval {
        image_id,
        dets: dets
            .iter()
            .map(|&i| (poses[i].instance_score, i, false))
            .collect(),
        matched,
        det_ignored,
        positives: gt_ignored.iter().filter(|&&i| !i).count(),
    })
}

/// Precision table rows per threshold, AP per threshold and recall per
/// threshold for one area range; `None` when no ground truth is eligible.
fn accumulate(images: &[ImageEval]) -> Option<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let positives: usize = images.iter().map(|e| e.positives).sum();
    if positives == 0 {
        return None;
    }
    let mut table = Vec::new();
    let mut aps = Vec::new();
    let mut recalls = Vec::new();
    for t in 0..OKS_THRESHOLDS.len() {
        // (score, image id, original index, true positive)
        let mut dets: Vec<(f64, u64, usize, bool)> = Vec::new();
        for e in images {
            for (d, &(score, idx, _)) in e.dets.iter().enumerate() {
                if e.det_ignored[t][d] {
                    continue;
                }
                dets.push((score, e.image_id, idx, e.matched[t][d].is_some()));
            }
        }
        dets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut rc = Vec::with_capacity(dets.len());
        let mut pr = Vec::with_capacity(dets.len());
        for d in &dets {
            if d.3 {
                tp += 1;
            } else {
                fp += 1;
            }
            rc.push(tp as f64 / positives as f64);
            pr.push(tp as f64 / (tp + fp) as f64);
        }
        for i in (1..pr.len()).rev() {
            if pr[i] > pr[i - 1] {
                pr[i - 1] = pr[i];
            }
        }
        let row: Vec<f64> = (0..RECALL_POINTS)
            .map(|r| {
                let target = r as f64 / (RECALL_POINTS - 1) as f64;
                let idx = rc.partition_point(|&v| v < target);
                pr.get(idx).copied().unwrap_or(0.0)
            })
            .collect();
        aps.push(row.iter().sum::<f64>() / RECALL_POINTS as f64);
        recalls.push(rc.last().copied().unwrap_or(0.0));
        table.push(row);
    }
    Some((table, aps, recalls))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// COCO-protocol keypoint evaluation. A metric whose area range has no
/// eligible ground truth is reported as 0.
pub fn evaluate(
    preds: &[ImagePredictions],
    gts: &[ImageGroundTruth],
    consts: &OksConstants,
    ranges: &AreaRanges,
) -> Result<EvalReport> {
    let mut ids: Vec<u64> = gts.iter().map(|g| g.image_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "duplicate ground-truth image id".into(),
        ));
    }
    for p in preds {
        if ids.binary_search(&p.image_id).is_err() {
            return Err(Error::InvalidArgument(format!(
                "predictions for unknown image id {}",
                p.image_id
            )));
        }
    }
    let poses_of = |id: u64| -> Vec<Pose> {
        preds
            .iter()
            .filter(|p| p.image_id == id)
            .flat_map(|p| p.poses.iter().cloned())
            .collect()
    };
    let per_range = |range: AreaRange| -> Result<Vec<ImageEval>> {
        gts.iter()
            .map(|g| {
                evaluate_image(
                    g.image_id,
                    &poses_of(g.image_id),
                    &g.annotations,
                    consts,
                    range,
                )
            })
            .collect()
    };

    let all = per_range(ranges.all)?;
    let (precision, ap_per_threshold, recalls) = accumulate(&all).unwrap_or_else(|| {
        let n = OKS_THRESHOLDS.len();
        (
            vec![vec![0.0; RECALL_POINTS]; n],
            vec![0.0; n],
            vec![0.0; n],
        )
    });
    let summary = |evals: &[ImageEval]| match accumulate(evals) {
        Some((_, ap, rc)) => (mean(&ap), mean(&rc)),
        None => (0.0, 0.0),
    };
    let (ap_medium, ar_medium) = summary(&per_range(ranges.medium)?);
    let (ap_large, ar_large) = summary(&per_range(ranges.large)?);

    let mut matches = Vec::new();
    for e in &all {
        let gt = &gts
            .iter()
            .find(|g| g.image_id == e.image_id)
            .expect("known id")
            .annotations;
        let poses = poses_of(e.image_id);
        for (d, m) in e.matched[0].iter().enumerate() {
            if let Some(g) = *m {
                let pi = e.dets[d].1;
                matches.push(MatchRecord {
                    image_id: e.image_id,
                    prediction: pi,
                    person_id: gt[g].person_id,
                    oks: oks(&poses[pi], &gt[g], consts)?,
                });
            }
        }
    }

    Ok(EvalReport {
        ap: mean(&ap_per_threshold),
        ap50: ap_per_threshold[0],
        ap75: ap_per_threshold[5],
        ap_medium,
        ap_large,
        ar: mean(&recalls),
        ar50: recalls[0],
        ar75: recalls[5],
        ar_medium,
        ar_large,
        precision,
        ap_per_threshold,
        matches,
    })
}
