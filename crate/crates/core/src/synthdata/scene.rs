use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::Shape;
use crate::annotation::{Annotation, Keypoint};
use crate::error::{io_err, Error, Result};
use crate::eval::coco::{CocoAnnotation, CocoCategory, CocoDataset, CocoImage};
use crate::image::Image;
use crate::skeleton::{KeypointSet, COCO_JOINTS, COCO_LIMBS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub image_size: usize,
    /// Inclusive range of persons per image.
    pub persons_per_image: [usize; 2],
    /// Inclusive range of the person bbox diagonal in px, sampled uniformly.
    pub scale_range: [f64; 2],
    /// 0 places persons independently; 1 places each near an earlier one.
    pub crowding: f64,
    pub num_keypoints: usize,
    pub seed: u64,
    /// Persons keep this distance from the image border.
    pub margin: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            persons_per_image: [1, 3],
            scale_range: [60.0, 240.0],
            crowding: 0.0,
            num_keypoints: 5,
            seed: 0,
            margin: 2.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [plo, phi] = self.persons_per_image;
        let [slo, shi] = self.scale_range;
        if self.image_size == 0 || plo > phi {
            return Err(Error::Config(format!(
                "invalid image size / person count: {} / {:?}",
                self.image_size, self.persons_per_image
            )));
        }
        if !(slo > 0.0 && slo <= shi) || shi > self.image_size as f64 - 2.0 * self.margin {
            return Err(Error::Config(format!(
                "scale_range {:?} must be positive and fit a {} px image with margin {}",
                self.scale_range, self.image_size, self.margin
            )));
        }
        if !(0.0..=1.0).contains(&self.crowding) || self.margin < 0.0 {
            return Err(Error::Config(format!(
                "crowding must be in [0, 1] and margin non-negative, got {} / {}",
                self.crowding, self.margin
            )));
        }
        KeypointSet::standard(self.num_keypoints)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub image: Image,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub keypoints: KeypointSet,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All 17 joints of one figure in body units (torso length 1), before
/// scaling and placement, plus the head radius.
struct Figure {
    joints: [(f64, f64); 17],
    head: (f64, f64),
    head_radius: f64,
}

fn rot(v: (f64, f64), a: f64) -> (f64, f64) {
    (v.0 * a.cos() - v.1 * a.sin(), v.0 * a.sin() + v.1 * a.cos())
}

fn add(a: (f64, f64), b: (f64, f64), s: f64) -> (f64, f64) {
    (a.0 + s * b.0, a.1 + s * b.1)
}

fn sample_figure(rng: &mut impl Rng) -> Figure {
    let deg = PI / 180.0;
    let lean = rng.random_range(-15.0..15.0) * deg;
    // Image y points down; the figure faces the viewer so its left is +x.
    let down = rot((0.0, 1.0), lean);
    let left = (down.1, -down.0);
    let neck = (0.0, 0.0);
    let pelvis = add(neck, down, 1.0);
    let head = add(neck, down, -0.38);
    let head_radius = 0.2;
    let mut j = [(0.0, 0.0); 17];
    j[0] = add(head, down, 0.05);
    j[1] = add(add(head, left, 0.07), down, -0.04);
    j[2] = add(add(head, left, -0.07), down, -0.04);
    j[3] = add(head, left, 0.17);
    j[4] = add(head, left, -0.17);
    j[5] = add(neck, left, 0.24);
    j[6] = add(neck, left, -0.24);
    j[11] = add(pelvis, left, 0.15);
    j[12] = add(pelvis, left, -0.15);
    for (side, sign) in [(0usize, 1.0), (1, -1.0)] {
        // Arms swing outward from hanging down; elbows bend further out or in.
        let shoulder = rng.random_range(-15.0..165.0) * deg;
        let elbow = rng.random_range(-30.0..120.0) * deg;
        let upper = rot(down, -sign * shoulder);
        let fore = rot(upper, -sign * elbow);
        j[7 + side] = add(j[5 + side], upper, 0.42);
        j[9 + side] = add(j[7 + side], fore, 0.38);
        let hip = rng.random_range(-10.0..45.0) * deg;
        let knee = rng.random_range(-40.0..10.0) * deg;
        let thigh = rot(down, -sign * hip);
        let shin = rot(thigh, -sign * knee);
        j[13 + side] = add(j[11 + side], thigh, 0.5);
        j[15 + side] = add(j[13 + side], shin, 0.5);
    }
    Figure {
        joints: j,
        head,
        head_radius,
    }
}

struct Placed {
    joints: [(f64, f64); 17],
    shapes: Vec<Shape>,
    bbox: [f64; 4],
}

fn extent(f: &Figure) -> (f64, f64, f64, f64) {
    let mut b = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in &f.joints {
        b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
    }
    let (hx, hy, r) = (f.head.0, f.head.1, f.head_radius);
    (
        b.0.min(hx - r),
        b.1.min(hy - r),
        b.2.max(hx + r),
        b.3.max(hy + r),
    )
}

fn shade(c: [f32; 3], toward: f32, amount: f32) -> [f32; 3] {
    c.map(|v| v + (toward - v) * amount)
}

fn figure_shapes(
    joints: &[(f64, f64); 17],
    head: (f64, f64),
    head_r: f64,
    unit: f64,
    color: [f32; 3],
) -> Vec<Shape> {
    let thick = (0.07 * unit).max(1.0);
    let light = shade(color, 1.0, 0.45);
    let dark = shade(color, 0.0, 0.45);
    let side = |j: usize| match COCO_JOINTS[j] {
        n if n.starts_with("left_") => 1,
        n if n.starts_with("right_") => -1,
        _ => 0,
    };
    let tint = |s: i32| match s {
        1 => light,
        -1 => dark,
        _ => color,
    };
    let mut shapes = Vec::new();
    let mid_sh = (
        (joints[5].0 + joints[6].0) / 2.0,
        (joints[5].1 + joints[6].1) / 2.0,
    );
    let mid_hip = (
        (joints[11].0 + joints[12].0) / 2.0,
        (joints[11].1 + joints[12].1) / 2.0,
    );
    shapes.push(Shape {
        a: mid_sh,
        b: mid_hip,
        radius: 1.6 * thick,
        color,
    });
    for &(a, b) in COCO_LIMBS.iter().filter(|&&(a, _)| a >= 5) {
        let s = if side(a) == side(b) { side(a) } else { 0 };
        shapes.push(Shape {
            a: joints[a],
            b: joints[b],
            radius: thick,
            color: tint(s),
        });
    }
    shapes.push(Shape::disk(head, head_r, color));
    // Hands and feet get distinct end disks.
    for j in [9, 10, 15, 16] {
        shapes.push(Shape::disk(joints[j], 1.5 * thick, tint(side(j))));
    }
    shapes.push(Shape::disk(
        joints[0],
        (0.35 * thick).max(0.8),
        shade(color, 0.0, 0.7),
    ));
    shapes
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    // Saturated hue at mid brightness so both shades stay distinguishable.
    let h = rng.random_range(0.0..6.0f32);
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let v = rng.random_range(0.55..0.85f32);
    [
        0.15 + v * r * 0.85,
        0.15 + v * g * 0.85,
        0.15 + v * b * 0.85,
    ]
}

/// Generates image `index` of the split; independent of every other index.
pub fn generate_image(cfg: &SceneConfig, set: &KeypointSet, index: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let size = cfg.image_size;
    let sz = size as f64;

    let mut image = Image::new(size, size);
    let base: [f32; 3] = [
        rng.random_range(0.25..0.6),
        rng.random_range(0.25..0.6),
        rng.random_range(0.25..0.6),
    ];
    for y in 0..size {
        for x in 0..size {
            for (c, b) in base.iter().enumerate() {
                image.set(c, y, x, b + rng.random_range(-0.08..0.08f32));
            }
        }
    }

    let n = rng.random_range(cfg.persons_per_image[0]..=cfg.persons_per_image[1]);
    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    for p in 0..n {
        // Every draw happens regardless of the crowding value, so scenes at
        // different crowding levels share all other randomness.
        let fig = sample_figure(&mut rng);
        let diag = rng.random_range(cfg.scale_range[0]..=cfg.scale_range[1]);
        let color = random_color(&mut rng);
        let (ux, uy) = (rng.random_range(0.0..1.0f64), rng.random_range(0.0..1.0f64));
        let anchor_pick = rng.random_range(0.0..1.0f64);
        let jitter = Normal::new(0.0, 0.2).expect("valid");
        let (jx, jy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));

        let (x0, y0, x1, y1) = extent(&fig);
        let unit = diag / ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let (w, h) = ((x1 - x0) * unit, (y1 - y0) * unit);
        let (free_x, free_y) = (sz - 2.0 * cfg.margin - w, sz - 2.0 * cfg.margin - h);
        let mut left = cfg.margin + ux * free_x;
        let mut top = cfg.margin + uy * free_y;
        if p > 0 && cfg.crowding > 0.0 {
            let a = &placed[((anchor_pick * p as f64) as usize).min(p - 1)];
            let (ax, ay) = (a.bbox[0] + a.bbox[2] / 2.0, a.bbox[1] + a.bbox[3] / 2.0);
            let cx = (ax + jx * diag - w / 2.0).clamp(cfg.margin, cfg.margin + free_x);
            let cy = (ay + jy * diag - h / 2.0).clamp(cfg.margin, cfg.margin + free_y);
            left += cfg.crowding * (cx - left);
            top += cfg.crowding * (cy - top);
        }
        let map = |(x, y): (f64, f64)| (left + (x - x0) * unit, top + (y - y0) * unit);
        let joints = fig.joints.map(map);
        let shapes = figure_shapes(&joints, map(fig.head), fig.head_radius * unit, unit, color);
        placed.push(Placed {
            joints,
            shapes,
            bbox: [left, top, w, h],
        });
    }
    for p in &placed {
        for s in &p.shapes {
            s.draw(&mut image);
        }
    }

    let image_id = index + 1;
    let annotations = placed
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let keypoints = set
                .joints
                .iter()
                .map(|&j| {
                    let (x, y) = p.joints[j];
                    let covered = placed[i + 1..]
                        .iter()
                        .any(|q| q.shapes.iter().any(|s| s.coverage(x, y) > 0.5));
                    Keypoint::new(x, y, if covered { 1 } else { 2 })
                })
                .collect();
            Annotation {
                person_id: image_id * 1000 + i as u64,
                keypoints,
                area: p.bbox[2] * p.bbox[3],
                bbox: Some(p.bbox),
                iscrowd: false,
            }
        })
        .collect();
    Ok(Sample {
        image_id,
        image,
        annotations,
    })
}

/// `n_images` scenes, deterministic in `cfg.seed`.
pub fn generate_split(cfg: &SceneConfig, n_images: usize) -> Result<Dataset> {
    cfg.validate()?;
    let set = KeypointSet::standard(cfg.num_keypoints)?;
    let samples = (0..n_images as u64)
        .map(|i| generate_image(cfg, &set, i))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        keypoints: set,
        samples,
    })
}

fn file_name(id: u64) -> String {
    format!("images/{id:06}.png")
}

/// COCO-format view of the dataset.
pub fn to_coco(ds: &Dataset) -> CocoDataset {
    let skeleton = ds
        .keypoints
        .limbs()
        .into_iter()
        .map(|(a, b)| [a + 1, b + 1])
        .collect();
    CocoDataset {
        images: ds
            .samples
            .iter()
            .map(|s| CocoImage {
                id: s.image_id,
                file_name: file_name(s.image_id),
                width: s.image.width(),
                height: s.image.height(),
            })
            .collect(),
        annotations: ds
            .samples
            .iter()
            .flat_map(|s| {
                s.annotations
                    .iter()
                    .map(|a| CocoAnnotation::from_annotation(a, s.image_id))
            })
            .collect(),
        categories: vec![CocoCategory {
            id: 1,
            name: "person".into(),
            keypoints: ds.keypoints.names.clone(),
            skeleton,
        }],
    }
}

/// Writes `images/NNNNNN.png` and `annotations.json` under `dir`. The JSON is
/// written last, through a temporary file.
pub fn export(ds: &Dataset, dir: &Path) -> Result<()> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    for s in &ds.samples {
        s.image.save_png(&dir.join(file_name(s.image_id)))?;
    }
    let json = dir.join("annotations.json");
    posepyr_tensor::checkpoint::write_atomic(&json, to_coco(ds).to_json().as_bytes())?;
    Ok(())
}

/// Reads a directory written by [`export`] (or any COCO keypoint file laid
/// out the same way).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let coco = CocoDataset::load(&dir.join("annotations.json"))?;
    let names = coco
        .categories
        .first()
        .map(|c| c.keypoints.clone())
        .ok_or_else(|| Error::InvalidArgument(format!("{}: no categories", dir.display())))?;
    let keypoints = KeypointSet::from_names(names)?;
    let gts = coco.ground_truth()?;
    let samples = coco
        .images
        .iter()
        .zip(gts)
        .map(|(img, gt)| {
            let image = Image::load_png(&dir.join(&img.file_name))?;
            if (image.width(), image.height()) != (img.width, img.height) {
                return Err(Error::InvalidArgument(format!(
                    "{}: size {}x{} differs from annotation {}x{}",
                    img.file_name,
                    image.width(),
                    image.height(),
                    img.width,
                    img.height
                )));
            }
            Ok(Sample {
                image_id: img.id,
                image,
                annotations: gt.annotations,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Dataset { keypoints, samples })
}
