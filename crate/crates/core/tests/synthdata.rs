use posepyr_core::eval::coco::CocoDataset;
use posepyr_core::synthdata::{export, generate_split, load_dataset, SceneConfig};

fn small(seed: u64) -> SceneConfig {
    SceneConfig {
        image_size: 96,
        scale_range: [30.0, 80.0],
        seed,
        ..Default::default()
    }
}

#[test]
fn same_seed_is_bitwise_identical() {
    let a = generate_split(&small(7), 6).unwrap();
    let b = generate_split(&small(7), 6).unwrap();
    assert_eq!(a, b);
    let c = generate_split(&small(8), 6).unwrap();
    assert_ne!(a.samples[0].image, c.samples[0].image);
}

#[test]
fn image_content_depends_only_on_its_index() {
    let long = generate_split(&small(3), 5).unwrap();
    let short = generate_split(&small(3), 2).unwrap();
    assert_eq!(long.samples[..2], short.samples[..]);
}

#[test]
fn single_person_bbox_respects_margin() {
    let cfg = SceneConfig {
        persons_per_image: [1, 1],
        crowding: 0.0,
        margin: 4.0,
        ..small(11)
    };
    let ds = generate_split(&cfg, 200).unwrap();
    let size = cfg.image_size as f64;
    for s in &ds.samples {
        assert_eq!(s.annotations.len(), 1);
        let [x, y, w, h] = s.annotations[0].bbox.unwrap();
        assert!(x >= cfg.margin - 1e-9 && y >= cfg.margin - 1e-9);
        assert!(x + w <= size - cfg.margin + 1e-9 && y + h <= size - cfg.margin + 1e-9);
        for k in &s.annotations[0].keypoints {
            assert!(
                k.x >= x - 1e-9 && k.x <= x + w + 1e-9 && k.y >= y - 1e-9 && k.y <= y + h + 1e-9
            );
        }
    }
}

#[test]
fn scale_histogram_matches_uniform_within_binomial_3_sigma() {
    let cfg = SceneConfig {
        persons_per_image: [2, 2],
        image_size: 64,
        scale_range: [20.0, 60.0],
        ..small(5)
    };
    let ds = generate_split(&cfg, 500).unwrap();
    let diags: Vec<f64> = ds
        .samples
        .iter()
        .flat_map(|s| s.annotations.iter())
        .map(|a| {
            let b = a.bbox.unwrap();
            (b[2] * b[2] + b[3] * b[3]).sqrt()
        })
        .collect();
    assert_eq!(diags.len(), 1000);
    let bins = 8;
    let mut counts = vec![0usize; bins];
    for d in &diags {
        assert!((20.0 - 1e-9..=60.0 + 1e-9).contains(d));
        counts[(((d - 20.0) / 40.0 * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let n = diags.len() as f64;
    let p = 1.0 / bins as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "bin count {c}");
    }
}

#[test]
fn area_is_bbox_area_and_visibility_is_one_or_two() {
    let ds = generate_split(
        &SceneConfig {
            crowding: 1.0,
            ..small(2)
        },
        30,
    )
    .unwrap();
    let mut occluded = 0;
    for s in &ds.samples {
        for a in &s.annotations {
            let b = a.bbox.unwrap();
            assert!((a.area - b[2] * b[3]).abs() < 1e-9);
            assert_eq!(a.keypoints.len(), 5);
            for k in &a.keypoints {
                assert!(k.v == 1 || k.v == 2);
                occluded += usize::from(k.v == 1);
            }
        }
        // The last-drawn person is never occluded.
        if let Some(last) = s.annotations.last() {
            assert!(last.keypoints.iter().all(|k| k.v == 2));
        }
    }
    assert!(occluded > 0, "crowded scenes should produce some occlusion");
}

#[test]
fn export_round_trips_through_the_coco_loader() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_split(&small(4), 10).unwrap();
    export(&ds, dir.path()).unwrap();

    let files = walk(dir.path());
    assert_eq!(files.iter().filter(|p| p.ends_with(".png")).count(), 10);
    assert_eq!(files.iter().filter(|p| p.ends_with(".json")).count(), 1);
    assert_eq!(files.len(), 11);

    let coco = CocoDataset::load(&dir.path().join("annotations.json")).unwrap();
    let gts = coco.ground_truth().unwrap();
    for (s, gt) in ds.samples.iter().zip(&gts) {
        assert_eq!(s.image_id, gt.image_id);
        assert_eq!(s.annotations, gt.annotations);
    }

    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.keypoints, ds.keypoints);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.annotations, b.annotations);
        let max_err = a
            .image
            .data()
            .iter()
            .zip(b.image.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn empty_dataset_exports_valid_empty_json() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_split(&small(0), 0).unwrap();
    export(&ds, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("annotations.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["images"].as_array().unwrap().len(), 0);
    assert_eq!(v["annotations"].as_array().unwrap().len(), 0);
    assert!(load_dataset(dir.path()).unwrap().is_empty());
}

#[test]
fn export_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let ds = generate_split(&small(0), 1).unwrap();
    let err = export(&ds, &blocker).unwrap_err().to_string();
    assert!(err.contains("file"), "{err}");
}

#[test]
fn crowding_monotonically_increases_mean_pairwise_iou() {
    let mut prev = -1.0;
    for crowding in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let cfg = SceneConfig {
            persons_per_image: [3, 3],
            crowding,
            ..small(21)
        };
        let ds = generate_split(&cfg, 150).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for s in &ds.samples {
            for i in 0..s.annotations.len() {
                for j in i + 1..s.annotations.len() {
                    sum += iou(
                        s.annotations[i].bbox.unwrap(),
                        s.annotations[j].bbox.unwrap(),
                    );
                    n += 1;
                }
            }
        }
        let mean = sum / n as f64;
        assert!(mean > prev, "crowding {crowding}: {mean} <= {prev}");
        prev = mean;
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        SceneConfig {
            scale_range: [30.0, 200.0],
            ..small(0)
        },
        SceneConfig {
            scale_range: [0.0, 20.0],
            ..small(0)
        },
        SceneConfig {
            crowding: 1.5,
            ..small(0)
        },
        SceneConfig {
            persons_per_image: [3, 1],
            ..small(0)
        },
        SceneConfig {
            num_keypoints: 4,
            ..small(0)
        },
    ] {
        assert!(generate_split(&cfg, 1).is_err(), "{cfg:?}");
    }
}

#[test]
fn seventeen_keypoint_scenes_use_coco_order() {
    let ds = generate_split(
        &SceneConfig {
            num_keypoints: 17,
            ..small(1)
        },
        2,
    )
    .unwrap();
    assert_eq!(ds.keypoints.names[0], "nose");
    assert_eq!(ds.keypoints.names[16], "right_ankle");
    assert!(ds
        .samples
        .iter()
        .flat_map(|s| &s.annotations)
        .all(|a| a.keypoints.len() == 17));
}

fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let h = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    let inter = w.max(0.0) * h.max(0.0);
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

fn walk(dir: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p.to_string_lossy().into_owned());
        }
    }
    out
}
