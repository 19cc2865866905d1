use posepyr_core::annotation::{Annotation, Keypoint};
use posepyr_core::image::Image;
use posepyr_core::supervision::*;
use posepyr_tensor::gradcheck::{self, GradCase};
use posepyr_tensor::{Graph, Tensor};

fn person(id: u64, kps: &[(f64, f64, u8)]) -> Annotation {
    Annotation {
        person_id: id,
        keypoints: kps
            .iter()
            .map(|&(x, y, v)| Keypoint::new(x, y, v))
            .collect(),
        area: 100.0,
        bbox: None,
        iscrowd: false,
    }
}

fn at(t: &Tensor<f64>, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[((n * s[1] + c) * s[2] + y) * s[3] + x]
}

#[test]
fn peak_is_one_at_the_keypoint_cell() {
    // Input 64 px, level 16 cells: pixel 30 lies in cell floor(30.5 / 4) = 7.
    let t: TargetPyramid<f64> = make_targets(
        &[vec![person(1, &[(30.0, 30.0, 2)])]],
        (64, 64),
        &[(16, 16)],
        1,
        2.0,
    )
    .unwrap();
    let h = &t.heatmaps[0];
    assert_eq!(at(h, 0, 0, 7, 7), 1.0);
    assert!((at(h, 0, 0, 7, 9) - (-0.5f64).exp()).abs() < 1e-15);
    assert!(h.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    // Window radius 3 sigma = 6 cells.
    assert!(at(h, 0, 0, 7, 13) > 0.0);
    assert_eq!(at(h, 0, 0, 7, 14), 0.0);
}

#[test]
fn sigma_is_not_rescaled_per_level() {
    let t: TargetPyramid<f64> = make_targets(
        &[vec![person(1, &[(33.0, 33.0, 2)])]],
        (64, 64),
        &[(16, 16), (32, 32)],
        1,
        2.0,
    )
    .unwrap();
    let e = (-0.5f64).exp();
    // Cell floor(33.5/4) = 8 at level 0 and floor(33.5/2) = 16 at level 1.
    assert_eq!(at(&t.heatmaps[0], 0, 0, 8, 8), 1.0);
    assert!((at(&t.heatmaps[0], 0, 0, 8, 10) - e).abs() < 1e-15);
    assert_eq!(at(&t.heatmaps[1], 0, 0, 16, 16), 1.0);
    assert!((at(&t.heatmaps[1], 0, 0, 16, 18) - e).abs() < 1e-15);
}

#[test]
fn coincident_persons_merge_by_max() {
    let annos = vec![person(1, &[(20.0, 20.0, 2)]), person(2, &[(20.0, 20.0, 2)])];
    let t: TargetPyramid<f64> = make_targets(&[annos], (64, 64), &[(16, 16)], 1, 2.0).unwrap();
    let max = t.heatmaps[0].data().iter().cloned().fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    let single: TargetPyramid<f64> = make_targets(
        &[vec![person(1, &[(20.0, 20.0, 2)])]],
        (64, 64),
        &[(16, 16)],
        1,
        2.0,
    )
    .unwrap();
    assert_eq!(t.heatmaps, single.heatmaps);
}

#[test]
fn off_image_and_invisible_keypoints_produce_nothing() {
    let annos = vec![person(1, &[(-10.0, 5.0, 2), (5.0, 5.0, 0)])];
    let t: TargetPyramid<f64> = make_targets(&[annos], (32, 32), &[(8, 8)], 2, 2.0).unwrap();
    assert!(t.heatmaps[0].data().iter().all(|&v| v == 0.0));
    assert!(t.tag_indices[0].is_empty());
}

#[test]
fn targets_are_translation_equivariant() {
    let base = vec![person(1, &[(21.0, 17.0, 2)]), person(2, &[(35.0, 40.0, 2)])];
    let shifted: Vec<_> = base
        .iter()
        .map(|a| {
            let mut a = a.clone();
            for k in &mut a.keypoints {
                k.x += 8.0;
                k.y += 4.0;
            }
            a
        })
        .collect();
    let levels = [(16, 16), (32, 32)];
    let t0: TargetPyramid<f64> = make_targets(&[base], (64, 64), &levels, 1, 2.0).unwrap();
    let t1: TargetPyramid<f64> = make_targets(&[shifted], (64, 64), &levels, 1, 2.0).unwrap();
    for (l, &(h, w)) in levels.iter().enumerate() {
        let f = w / 16;
        let (dx, dy) = (2 * f, f);
        for y in 0..h - dy {
            for x in 0..w - dx {
                assert_eq!(
                    at(&t0.heatmaps[l], 0, 0, y, x),
                    at(&t1.heatmaps[l], 0, 0, y + dy, x + dx)
                );
            }
        }
    }
}

#[test]
fn crowd_regions_are_masked() {
    let mut crowd = person(9, &[(0.0, 0.0, 0)]);
    crowd.iscrowd = true;
    crowd.bbox = Some([8.0, 8.0, 8.0, 8.0]);
    let t: TargetPyramid<f64> = make_targets(&[vec![crowd]], (32, 32), &[(8, 8)], 1, 2.0).unwrap();
    let zeros = t.masks[0].data().iter().filter(|&&m| m == 0.0).count();
    assert!(zeros > 0 && zeros < 64);
    assert_eq!(at(&t.masks[0], 0, 0, 0, 0), 1.0);
}

fn pyramid(values: &[f64], levels: &[(usize, usize)]) -> Vec<Tensor<f64>> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &(h, w))| {
            let data = (0..2 * h * w)
                .map(|j| values[(i + j) % values.len()])
                .collect();
            Tensor::from_vec(&[1, 2, h, w], data).unwrap()
        })
        .collect()
}

fn targets_from(heatmaps: Vec<Tensor<f64>>) -> TargetPyramid<f64> {
    TargetPyramid {
        masks: heatmaps.iter().map(|t| Tensor::ones(t.shape())).collect(),
        heatmaps,
        tag_indices: vec![vec![]],
    }
}

#[test]
fn heatmap_loss_examples() {
    let levels = [(4, 4), (8, 8)];
    let t = targets_from(pyramid(&[0.1, 0.7, 0.3, 0.9, 0.0], &levels));

    let mut g = Graph::new();
    let preds: Vec<_> = t.heatmaps.iter().map(|h| g.constant(h.clone())).collect();
    let l = heatmap_loss(&mut g, &preds, &t).unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);

    let mut g = Graph::new();
    let c = 0.3;
    let shifted: Vec<f64> = t.heatmaps[1].data().iter().map(|v| v + c).collect();
    let preds = vec![
        g.constant(t.heatmaps[0].clone()),
        g.constant(Tensor::from_vec(t.heatmaps[1].shape(), shifted).unwrap()),
    ];
    let l = heatmap_loss(&mut g, &preds, &t).unwrap();
    assert!((g.value(l).item().unwrap() - c * c).abs() < 1e-12);
}

#[test]
fn heatmap_loss_matches_per_level_loops() {
    let levels = [(3, 3), (6, 6)];
    let t = targets_from(pyramid(&[0.2, 0.5, 0.9], &levels));
    let p = pyramid(&[0.4, -0.1, 0.6, 1.2], &levels);
    let mut expected = 0.0;
    for (a, b) in p.iter().zip(&t.heatmaps) {
        let mut s = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            s += (x - y) * (x - y);
        }
        expected += s / a.numel() as f64;
    }
    let mut g = Graph::new();
    let preds: Vec<_> = p.iter().map(|h| g.constant(h.clone())).collect();
    let l = heatmap_loss(&mut g, &preds, &t).unwrap();
    assert!((g.value(l).item().unwrap() - expected).abs() < 1e-12);

    let wrong = vec![preds[0]];
    assert!(heatmap_loss(&mut g, &wrong, &t).is_err());
}

fn tag_fixture() -> (Tensor<f64>, TagIndices) {
    // 16 px input, 4x4 level-0 grid, two keypoint types.
    let a = person(1, &[(1.0, 1.0, 2), (9.0, 5.0, 2)]);
    let b = person(2, &[(13.0, 13.0, 2), (0.0, 0.0, 0)]);
    let idx = tag_indices(&[vec![a, b]], (16, 16), (4, 4), 2).unwrap();
    let mut data = vec![0.0; 2 * 16];
    data[0] = 1.0; // type 0, cell (0, 0)
    data[16 + 4 + 2] = 3.0; // type 1, cell (1, 2)
    data[15] = 5.0; // type 0, cell (3, 3)
    (Tensor::from_vec(&[1, 2, 4, 4], data).unwrap(), idx)
}

#[test]
fn tag_loss_hand_computed() {
    let (tags, idx) = tag_fixture();
    assert_eq!(idx[0], vec![vec![(0, 0, 0), (1, 1, 2)], vec![(0, 3, 3)]]);
    let terms = tag_loss_terms(&tags, &idx).unwrap();
    // Person means 2 and 5: pull = (1 + 0) / 2, push = 2 exp(-9/2) / 2.
    assert!((terms.pull - 0.5).abs() < 1e-15);
    assert!((terms.push - (-4.5f64).exp()).abs() < 1e-15);

    let mut g = Graph::new();
    let v = g.constant(tags);
    let l = tag_loss(&mut g, v, &idx).unwrap();
    assert!((g.value(l).item().unwrap() - 0.5 - (-4.5f64).exp()).abs() < 1e-15);
}

#[test]
fn tag_loss_degenerate_cases() {
    let single = person(1, &[(1.0, 1.0, 2), (9.0, 5.0, 2)]);
    let idx = tag_indices(&[vec![single]], (16, 16), (4, 4), 2).unwrap();
    let mut data = vec![0.0; 32];
    data[0] = 0.7;
    data[16 + 6] = 0.7;
    let t = Tensor::from_vec(&[1, 2, 4, 4], data).unwrap();
    let terms = tag_loss_terms(&t, &idx).unwrap();
    assert_eq!(terms.push, 0.0);
    assert_eq!(terms.pull, 0.0);
}

#[test]
fn tag_loss_gradient_matches_finite_differences() {
    let (tags, idx) = tag_fixture();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
    let noisy = gradcheck::random_tensor(&mut rng, tags.shape());
    let case = GradCase {
        name: "tag_loss".into(),
        inputs: vec![noisy],
        build: Box::new(move |g, v| Ok(tag_loss(g, v[0], &idx).unwrap())),
    };
    let report = gradcheck::check(&case).unwrap();
    assert!(report.rel_error <= 1e-4, "{report:?}");

    // A batch of two images with three persons in the second.
    let a = vec![person(1, &[(1.0, 1.0, 2), (9.0, 5.0, 2)])];
    let b = vec![
        person(1, &[(1.0, 1.0, 2), (9.0, 5.0, 2)]),
        person(2, &[(13.0, 13.0, 2), (5.0, 9.0, 2)]),
        person(3, &[(5.0, 1.0, 1), (14.0, 2.0, 2)]),
    ];
    let idx = tag_indices(&[a, b], (16, 16), (4, 4), 2).unwrap();
    let case = GradCase {
        name: "tag_loss batch".into(),
        inputs: vec![gradcheck::random_tensor(&mut rng, &[2, 2, 4, 4])],
        build: Box::new(move |g, v| Ok(tag_loss(g, v[0], &idx).unwrap())),
    };
    let report = gradcheck::check(&case).unwrap();
    assert!(report.rel_error <= 1e-4, "{report:?}");
}

#[test]
fn total_loss_weights() {
    let mut g = Graph::<f64>::new();
    let h = g.constant(Tensor::scalar(0.5));
    let t = g.constant(Tensor::scalar(2.0));
    let l = total_loss(&mut g, h, t, LossWeights::default()).unwrap();
    assert!((g.value(l).item().unwrap() - 0.502).abs() < 1e-15);
    let z = g.constant(Tensor::scalar(0.0));
    let l = total_loss(&mut g, z, z, LossWeights::default()).unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);
    let l = total_loss(
        &mut g,
        h,
        t,
        LossWeights {
            heatmap: 2.0,
            tag: 0.5,
        },
    )
    .unwrap();
    assert_eq!(g.value(l).item().unwrap(), 2.0);
}

fn test_image(w: usize, h: usize) -> Image {
    let data = (0..3 * w * h).map(|i| (i % 17) as f32 / 16.0).collect();
    Image::from_planar(w, h, data).unwrap()
}

#[test]
fn identity_draw_changes_nothing() {
    let img = test_image(24, 24);
    let annos = vec![person(1, &[(3.5, 7.25, 2), (20.0, 1.0, 1)])];
    let (out, a) = apply_draw(&img, &annos, &AffineDraw::IDENTITY, 24, &[1, 0]).unwrap();
    assert_eq!(out, img);
    assert_eq!(a, annos);
}

#[test]
fn flip_mirrors_and_swaps() {
    let img = test_image(16, 16);
    let annos = vec![person(1, &[(3.0, 4.0, 2), (10.0, 2.0, 1)])];
    let draw = AffineDraw {
        flip: true,
        ..AffineDraw::IDENTITY
    };
    let (out, a) = apply_draw(&img, &annos, &draw, 16, &[1, 0]).unwrap();
    assert_eq!(out, img.flip_horizontal());
    assert_eq!(a[0].keypoints[0], Keypoint::new(15.0 - 10.0, 2.0, 1));
    assert_eq!(a[0].keypoints[1], Keypoint::new(15.0 - 3.0, 4.0, 2));
}

#[test]
fn rotation_matches_hand_matrix() {
    let img = test_image(33, 33);
    // 10 px right of the center (16, 16).
    let annos = vec![person(1, &[(26.0, 16.0, 2)])];
    let draw = AffineDraw {
        rotation_deg: 30.0,
        ..AffineDraw::IDENTITY
    };
    let (_, a) = apply_draw(&img, &annos, &draw, 33, &[0]).unwrap();
    let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    let kp = a[0].keypoints[0];
    assert!((kp.x - (16.0 + 10.0 * c)).abs() < 1e-12);
    assert!((kp.y - (16.0 + 10.0 * s)).abs() < 1e-12);
    assert_eq!(kp.v, 2);
}

#[test]
fn keypoints_leaving_the_crop_are_masked_not_dropped() {
    let img = test_image(32, 32);
    let mut annos = vec![
        person(1, &[(2.0, 2.0, 2), (16.0, 16.0, 2)]),
        person(2, &[(30.0, 30.0, 1), (12.0, 20.0, 0)]),
    ];
    annos[0].bbox = Some([2.0, 2.0, 14.0, 14.0]);
    let draw = AffineDraw {
        scale: 1.5,
        tx: -6.0,
        ..AffineDraw::IDENTITY
    };
    let (_, a) = apply_draw(&img, &annos, &draw, 32, &[1, 0]).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!(a[0].keypoints[0].v, 0);
    assert_eq!(a[0].keypoints[1].v, 2);
    assert_eq!(a[1].keypoints[0].v, 0);
    assert!((a[0].area - 225.0).abs() < 1e-12);
    let [_, _, bw, bh] = a[0].bbox.unwrap();
    assert!((bw - 21.0).abs() < 1e-12 && (bh - 21.0).abs() < 1e-12);
}

#[test]
fn sampled_draws_respect_ranges() {
    use rand::SeedableRng;
    let cfg = AugmentConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut flips = 0;
    for _ in 0..1000 {
        let d = AffineDraw::sample(&cfg, &mut rng);
        assert!(d.rotation_deg.abs() <= 30.0);
        assert!((0.75..=1.5).contains(&d.scale));
        assert!(d.tx.abs() <= 40.0 && d.ty.abs() <= 40.0);
        flips += d.flip as usize;
    }
    assert!((400..600).contains(&flips));
}
