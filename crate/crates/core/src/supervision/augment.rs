use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{Annotation, Keypoint};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Rotation is drawn uniformly from `[-max_rotation_deg, max_rotation_deg]`.
    pub max_rotation_deg: f64,
    pub scale_range: [f64; 2],
    /// Translation in output pixels, per axis.
    pub max_translation: f64,
    pub flip_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 30.0,
            scale_range: [0.75, 1.5],
            max_translation: 40.0,
            flip_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) || self.max_rotation_deg < 0.0 || self.max_translation < 0.0 {
            return Err(Error::Config(format!(
                "invalid augmentation ranges: {self:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!(
                "flip_prob must be in [0, 1], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }
}

/// One sampled augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineDraw {
    pub rotation_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub flip: bool,
}

impl AffineDraw {
    pub const IDENTITY: AffineDraw = AffineDraw {
        rotation_deg: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
        flip: false,
    };

    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let r = cfg.max_rotation_deg;
        let t = cfg.max_translation;
        let [lo, hi] = cfg.scale_range;
        Self {
            rotation_deg: if r > 0.0 {
                rng.random_range(-r..=r)
            } else {
                0.0
            },
            scale: if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            },
            tx: if t > 0.0 {
                rng.random_range(-t..=t)
            } else {
                0.0
            },
            ty: if t > 0.0 {
                rng.random_range(-t..=t)
            } else {
                0.0
            },
            flip: rng.random_bool(cfg.flip_prob),
        }
    }

    /// Row-major 2x3 matrix mapping input to output coordinates (before the
    /// flip): `q = s R (p - c_in) + c_out + t` with `c` the image centers and
    /// `R = [[cos, -sin], [sin, cos]]`.
    pub fn matrix(&self, input: (usize, usize), output: usize) -> [[f64; 3]; 2] {
        let (h, w) = input;
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let co = (output as f64 - 1.0) / 2.0;
        let th = self.rotation_deg.to_radians();
        let (a, b) = (self.scale * th.cos(), self.scale * th.sin());
        [
            [a, -b, co + self.tx - (a * cx - b * cy)],
            [b, a, co + self.ty - (b * cx + a * cy)],
        ]
    }
}

fn apply(m: &[[f64; 3]; 2], x: f64, y: f64) -> (f64, f64) {
    (
        m[0][0] * x + m[0][1] * y + m[0][2],
        m[1][0] * x + m[1][1] * y + m[1][2],
    )
}

/// Warps `image` and `annos` by `draw` into an `output x output` crop.
/// Keypoints that leave the crop are kept with `v = 0`; with a flip, keypoint
/// `k` takes the data of `flip_index[k]`.
pub fn apply_draw(
    image: &Image,
    annos: &[Annotation],
    draw: &AffineDraw,
    output: usize,
    flip_index: &[usize],
) -> Result<(Image, Vec<Annotation>)> {
    let m = draw.matrix((image.height(), image.width()), output);
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-12 {
        return Err(Error::InvalidArgument("degenerate augmentation".into()));
    }
    // Inverse of the linear part, for backward pixel mapping.
    let inv = [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ];
    let last = output as f64 - 1.0;
    let mut out = Image::new(output, output);
    for y in 0..output {
        for x in 0..output {
            let qx = if draw.flip { last - x as f64 } else { x as f64 } - m[0][2];
            let qy = y as f64 - m[1][2];
            let px = inv[0][0] * qx + inv[0][1] * qy;
            let py = inv[1][0] * qx + inv[1][1] * qy;
            for c in 0..3 {
                if let Some(v) = image.sample(c, py, px) {
                    out.set(c, y, x, v);
                }
            }
        }
    }

    let mut result = Vec::with_capacity(annos.len());
    for a in annos {
        let mut kps: Vec<Keypoint> = a
            .keypoints
            .iter()
            .map(|kp| {
                let (mut x, y) = apply(&m, kp.x, kp.y);
                if draw.flip {
                    x = last - x;
                }
                let inside = (0.0..=last).contains(&x) && (0.0..=last).contains(&y);
                Keypoint::new(x, y, if inside { kp.v } else { 0 })
            })
            .collect();
        if draw.flip {
            if flip_index.len() != kps.len() {
                return Err(Error::InvalidArgument(format!(
                    "flip table has {} entries for {} keypoints",
                    flip_index.len(),
                    kps.len()
                )));
            }
            kps = flip_index.iter().map(|&f| kps[f]).collect();
        }
        let bbox = a.bbox.map(|[bx, by, bw, bh]| {
            let corners =
                [(bx, by), (bx + bw, by), (bx, by + bh), (bx + bw, by + bh)].map(|(x, y)| {
                    let (mut x, y) = apply(&m, x, y);
                    if draw.flip {
                        x = last - x;
                    }
                    (x, y)
                });
            let x0 = corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let x1 = corners
                .iter()
                .map(|c| c.0)
                .fold(f64::NEG_INFINITY, f64::max);
            let y0 = corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
            let y1 = corners
                .iter()
                .map(|c| c.1)
                .fold(f64::NEG_INFINITY, f64::max);
            [x0, y0, x1 - x0, y1 - y0]
        });
        result.push(Annotation {
            person_id: a.person_id,
            keypoints: kps,
            area: a.area * draw.scale * draw.scale,
            bbox,
            iscrowd: a.iscrowd,
        });
    }
    Ok((out, result))
}

/// Samples a draw from `rng` and applies it.
pub fn augment(
    image: &Image,
    annos: &[Annotation],
    cfg: &AugmentConfig,
    output: usize,
    flip_index: &[usize],
    rng: &mut impl Rng,
) -> Result<(Image, Vec<Annotation>)> {
    let draw = AffineDraw::sample(cfg, rng);
    apply_draw(image, annos, &draw, output, flip_index)
}
