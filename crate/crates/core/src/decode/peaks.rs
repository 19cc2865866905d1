use posepyr_tensor::{Element, Tensor};
use serde::{Deserialize, Serialize};

use super::maps::khw;
use crate::error::{Error, Result};

/// An identity-free keypoint detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointCandidate {
    /// Keypoint type.
    pub k: usize,
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub tag: f64,
}

/// Local maxima of each channel under a 3x3 window. A pixel survives if it is
/// not below any neighbor and strictly above the neighbors preceding it in
/// raster order, so a plateau yields exactly one peak. Per type, the
/// `max_per_type` best peaks scoring above `threshold` are kept, ordered by
/// score then `(y, x)`; coordinates move a quarter pixel toward the larger
/// neighbor along each axis, and the tag is read at the integer peak.
pub fn extract_peaks<T: Element>(
    heat: &Tensor<T>,
    tags: &Tensor<T>,
    max_per_type: usize,
    threshold: f64,
) -> Result<Vec<KeypointCandidate>> {
    let (k, h, w) = khw(heat)?;
    if khw(tags)? != (k, h, w) {
        return Err(Error::InvalidArgument(format!(
            "heatmap {:?} and tagmap {:?} differ",
            heat.shape(),
            tags.shape()
        )));
    }
    let hd = heat.data();
    let mut out = Vec::new();
    for c in 0..k {
        let plane = &hd[c * h * w..(c + 1) * h * w];
        let v = |y: usize, x: usize| plane[y * w + x].to_f64().unwrap();
        let mut found = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let s = v(y, x);
                if !(s > threshold) {
                    continue;
                }
                let mut keep = true;
                'nb: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if (dy, dx) == (0, 0)
                            || ny < 0
                            || nx < 0
                            || ny >= h as i64
                            || nx >= w as i64
                        {
                            continue;
                        }
                        let n = v(ny as usize, nx as usize);
                        let earlier = dy < 0 || (dy == 0 && dx < 0);
                        if n > s || (earlier && n == s) {
                            keep = false;
                            break 'nb;
                        }
                    }
                }
                if keep {
                    found.push((s, y, x));
                }
            }
        }
        // Raster order already breaks ties; the sort is stable.
        found.sort_by(|a, b| b.0.total_cmp(&a.0));
        found.truncate(max_per_type);
        for (s, y, x) in found {
            let shift = |lo: f64, hi: f64| {
                if hi > lo {
                    0.25
                } else if lo > hi {
                    -0.25
                } else {
                    0.0
                }
            };
            let dx = if x > 0 && x + 1 < w {
                shift(v(y, x - 1), v(y, x + 1))
            } else {
                0.0
            };
            let dy = if y > 0 && y + 1 < h {
                shift(v(y - 1, x), v(y + 1, x))
            } else {
                0.0
            };
            out.push(KeypointCandidate {
                k: c,
                x: x as f64 + dx,
                y: y as f64 + dy,
                score: s,
                tag: tags.data()[(c * h + y) * w + x].to_f64().unwrap(),
            });
        }
    }
    Ok(out)
}
