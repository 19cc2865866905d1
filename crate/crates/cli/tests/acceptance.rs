//! End-to-end acceptance criteria A1-A8. Each test prints one
//! `A<n> PASS|FAIL` line with the measured quantities before asserting.

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use posepyr_cli::commands::cmd_inspect;
use posepyr_cli::evaluate::{evaluate_model, EvalOptions};
use posepyr_cli::train::Trainer;
use posepyr_cli::RunConfig;
use posepyr_core::annotation::{Annotation, Keypoint};
use posepyr_core::decode::{
    decode_maps, group, oracle_pyramid, pyramid_maps, DecodeConfig, GroupingMode,
    KeypointCandidate, Pose, PoseKeypoint,
};
use posepyr_core::eval::{
    evaluate, oks, AreaRanges, EvalReport, ImageGroundTruth, ImagePredictions, OksConstants,
};
use posepyr_core::model::{Model, ModelConfig};
use posepyr_core::synthdata::{generate_split, Dataset, SceneConfig};
use posepyr_tensor::{gradcheck, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria are timed, so they run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes straight to stdout so the verdict shows even when the test
/// harness captures output.
fn report(id: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "\n{id} {verdict} {detail}").expect("stdout is writable");
    out.flush().expect("stdout is writable");
    drop(out);
    assert!(pass, "{id} failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn a1_architecture_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (name, model, params, gflops) in [
        ("W32/512", ModelConfig::w32(), 28.6e6, 47.9),
        ("W48/640", ModelConfig::w48(), 63.8e6, 154.3),
    ] {
        let cfg = RunConfig {
            model,
            ..RunConfig::default()
        };
        let r = cmd_inspect(&cfg, None).unwrap();
        let dp = (r.total_params as f64 - params) / params;
        let df = (r.total_gflops - gflops) / gflops;
        pass &= dp.abs() <= 0.03 && df.abs() <= 0.05;
        lines.push(format!(
            "{name}: {:.2}M params ({:+.2}%), {:.2} GFLOPs ({:+.2}%)",
            r.total_params as f64 / 1e6,
            100.0 * dp,
            r.total_gflops,
            100.0 * df
        ));
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(10);
    report("A1", pass, format!("{}; {:.1}s", lines.join("; "), secs(t)));
}

#[test]
fn a2_gradient_suite() {
    let _g = serial();
    let start = Instant::now();
    let cases = gradcheck::op_suite(7, 5);
    let mut worst = (0.0f64, String::new());
    let mut names = BTreeSet::new();
    for case in &cases {
        let r = gradcheck::check(case).unwrap();
        names.insert(
            r.name
                .split(['[', ' '])
                .next()
                .unwrap_or_default()
                .to_string(),
        );
        if !(r.rel_error <= worst.0) {
            worst = (r.rel_error, r.name);
        }
    }
    let t = start.elapsed();
    let pass = worst.0 <= 1e-4 && cases.len() >= 5 * names.len() && t < Duration::from_secs(120);
    report(
        "A2",
        pass,
        format!(
            "{} cases over {} ops, worst relative error {:.2e} ({}); {:.1}s",
            cases.len(),
            names.len(),
            worst.0,
            worst.1,
            secs(t)
        ),
    );
}

/// Checks that every pose holds keypoints of exactly one person, each person
/// has exactly one pose, and every visible keypoint is recovered within
/// `tolerance` pixels. Returns a description of the first violation.
fn partition_error(annotations: &[Annotation], poses: &[Pose], tolerance: f64) -> Option<String> {
    let nearest = |k: usize, p: &PoseKeypoint| {
        annotations
            .iter()
            .enumerate()
            .filter(|(_, a)| a.keypoints[k].v > 0)
            .map(|(i, a)| (i, (a.keypoints[k].x - p.x).hypot(a.keypoints[k].y - p.y)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    };
    let mut owner = vec![None; annotations.len()];
    for (pi, pose) in poses.iter().enumerate() {
        let persons: BTreeSet<usize> = pose
            .keypoints
            .iter()
            .enumerate()
            .filter(|(_, p)| p.score > 0.0)
            .filter_map(|(k, p)| nearest(k, p).map(|(i, _)| i))
            .collect();
        if persons.len() != 1 {
            return Some(format!("pose {pi} mixes persons {persons:?}"));
        }
        let person = *persons.first().unwrap();
        if let Some(other) = owner[person].replace(pi) {
            return Some(format!("person {person} split over poses {other} and {pi}"));
        }
    }
    for (i, a) in annotations.iter().enumerate() {
        let Some(pi) = owner[i] else {
            return Some(format!("person {i} has no pose"));
        };
        for (k, kp) in a.keypoints.iter().enumerate().filter(|(_, kp)| kp.v > 0) {
            let p = poses[pi].keypoints[k];
            let d = (p.x - kp.x).hypot(p.y - kp.y);
            if p.score <= 0.0 || d > tolerance {
                return Some(format!("person {i} keypoint {k} off by {d:.2}px"));
            }
        }
    }
    None
}

#[test]
fn a3_decoder_oracle() {
    let _g = serial();
    let start = Instant::now();
    let size = 256;
    let levels = 2;
    let scene = SceneConfig {
        image_size: size,
        persons_per_image: [1, 3],
        scale_range: [100.0, 200.0],
        seed: 3,
        ..SceneConfig::default()
    };
    let ds = generate_split(&scene, 50).unwrap();
    let k = ds.keypoints.len();
    // One cell of the coarsest (level-0) map.
    let cell = (size / (size / 4)) as f64;
    let mut preds = Vec::new();
    let mut broken = Vec::new();
    for s in &ds.samples {
        let pyr = oracle_pyramid::<f64>(&s.annotations, (size, size), levels, k, 2.0).unwrap();
        let (heat, tags) = pyramid_maps(&pyr, (size, size), true).unwrap();
        let poses = decode_maps(&heat, &tags, &DecodeConfig::default()).unwrap();
        if let Some(e) = partition_error(&s.annotations, &poses, cell) {
            broken.push(format!("image {}: {e}", s.image_id));
        }
        preds.push(ImagePredictions {
            image_id: s.image_id,
            poses,
        });
    }
    let r = evaluate(
        &preds,
        &posepyr_cli::evaluate::ground_truth(&ds),
        &OksConstants::uniform(k, 0.08).unwrap(),
        &AreaRanges::default(),
    )
    .unwrap();
    let t = start.elapsed();
    let pass = r.ap >= 0.99 && broken.is_empty() && t < Duration::from_secs(60);
    report(
        "A3",
        pass,
        format!(
            "AP {:.4} on 50 scenes, {} partition errors{}; {:.1}s",
            r.ap,
            broken.len(),
            broken
                .first()
                .map(|e| format!(" (first: {e})"))
                .unwrap_or_default(),
            secs(t)
        ),
    );
}

fn train(cfg: &RunConfig, data: &Dataset) -> Model<f32> {
    let mut t = Trainer::new(cfg, data).unwrap();
    while !t.is_done() {
        t.run_epoch().unwrap();
    }
    t.into_model()
}

/// Training settings of the overfit run: 16 images and 500 Adam steps at a
/// constant learning rate of 1e-3.
fn overfit_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::toy();
    cfg.data.scene = SceneConfig {
        image_size: 128,
        persons_per_image: [1, 2],
        scale_range: [70.0, 110.0],
        num_keypoints: 5,
        seed: 0,
        ..SceneConfig::default()
    };
    cfg.training.batch_size = A4_BATCH;
    cfg.training.epochs = 500 * A4_BATCH / 16;
    cfg.training.lr = 1e-3;
    cfg.training.lr_drops.clear();
    cfg.training.augment = false;
    cfg.training.loss_weights.tag = TAG_WEIGHT;
    cfg.training.seed = 0;
    cfg
}

const A4_BATCH: usize = 16;
const TAG_WEIGHT: f64 = 0.03;

#[test]
fn a4_overfit_end_to_end() {
    let _g = serial();
    let start = Instant::now();
    let cfg = overfit_config();
    let data = generate_split(&cfg.data.scene, 16).unwrap();
    let mut trainer = Trainer::new(&cfg, &data).unwrap();
    let mut last = None;
    while !trainer.is_done() {
        last = Some(trainer.run_epoch().unwrap());
    }
    let steps = trainer.step_count();
    let model = trainer.into_model();
    // Trained without mirrored samples, so evaluated without flip testing.
    let r = evaluate_model(
        &model,
        &data,
        &EvalOptions::from_config(&cfg, false).unwrap(),
    )
    .unwrap()
    .report;
    let t = start.elapsed();
    let last = last.unwrap();
    let pass = steps == 500 && r.ap >= 0.9 && t <= Duration::from_secs(600);
    report(
        "A4",
        pass,
        format!(
            "train AP {:.4} (AP50 {:.4}, AP75 {:.4}) after {steps} steps, final heatmap loss {:.2e}, tag loss {:.3}; {:.0}s",
            r.ap, r.ap50, r.ap75, last.heatmap_loss, last.tag_loss, secs(t)
        ),
    );
}

const A5_SEEDS: [u64; 3] = [0, 1, 2];
const A5_TRAIN_IMAGES: usize = 64;
const A5_VAL_IMAGES: usize = 48;
const A5_EPOCHS: usize = 100;

fn ablation_config(seed: u64, num_deconv_modules: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        num_deconv_modules,
        ..ModelConfig::toy()
    };
    cfg.data.scene = SceneConfig {
        image_size: 128,
        persons_per_image: [1, 3],
        scale_range: [40.0, 120.0],
        num_keypoints: 5,
        seed: 100 + seed,
        ..SceneConfig::default()
    };
    cfg.training.epochs = A5_EPOCHS;
    cfg.training.batch_size = 8;
    cfg.training.loss_weights.tag = TAG_WEIGHT;
    cfg.training.seed = seed;
    cfg
}

/// Validation scenes skewed toward small persons: most fall in or just
/// below the medium area bin.
fn small_person_split(seed: u64) -> Dataset {
    let scene = SceneConfig {
        image_size: 128,
        persons_per_image: [1, 3],
        scale_range: [40.0, 90.0],
        num_keypoints: 5,
        seed: 200 + seed,
        ..SceneConfig::default()
    };
    generate_split(&scene, A5_VAL_IMAGES).unwrap()
}

#[test]
fn a5_multi_resolution_supervision_ablation() {
    let _g = serial();
    let start = Instant::now();
    let mut rows = Vec::new();
    let (mut ours, mut base) = (0.0, 0.0);
    for seed in A5_SEEDS {
        let val = small_person_split(seed);
        let mut ap = [0.0; 2];
        for (i, deconv) in [1, 0].into_iter().enumerate() {
            let cfg = ablation_config(seed, deconv);
            let data = generate_split(&cfg.data.scene, A5_TRAIN_IMAGES).unwrap();
            let model = train(&cfg, &data);
            let opts = EvalOptions::from_config(&cfg, true).unwrap();
            ap[i] = evaluate_model(&model, &val, &opts)
                .unwrap()
                .report
                .ap_medium;
        }
        rows.push(format!("seed {seed}: {:.4} vs {:.4}", ap[0], ap[1]));
        ours += ap[0] / A5_SEEDS.len() as f64;
        base += ap[1] / A5_SEEDS.len() as f64;
    }
    let t = start.elapsed();
    let pass = ours >= base - 0.02 && t <= Duration::from_secs(45 * 60);
    report(
        "A5",
        pass,
        format!(
            "mean AP_M 2-level {ours:.4} vs deconv-free {base:.4} ({}{}); {:.0}s",
            rows.join(", "),
            if ours >= base { ", 2-level ahead" } else { "" },
            secs(t)
        ),
    );
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        base_width: 2,
        stem_width: 4,
        bottleneck_width: 2,
        deconv_residual_blocks: 1,
        units_per_branch: 1,
        ..ModelConfig::toy()
    }
}

#[test]
fn a6_shape_contracts() {
    let _g = serial();
    let start = Instant::now();
    let w32 = ModelConfig::w32();
    let expected = (vec![128, 256], 128);
    // The full-width network is checked through its shape rules; a narrow
    // network with the same topology is actually run at 512.
    let mut pass = w32.num_deconv_modules == 1 && w32.input_size == 512;
    let model = Model::<f32>::new(&tiny_model(), 0).unwrap();
    let run = |h: usize, w: usize| {
        let x = Tensor::<f32>::zeros(&[1, 3, h, w]);
        let p = model.predict(&x).unwrap();
        let levels: Vec<Vec<usize>> = p.levels.iter().map(|l| l.shape().to_vec()).collect();
        (levels, p.tagmap.shape().to_vec())
    };
    let (levels, tagmap) = run(512, 512);
    let got: Vec<usize> = levels.iter().map(|s| s[2]).collect();
    pass &= got == expected.0
        && levels.iter().all(|s| s[2] == s[3] && s[1] == 5)
        && tagmap == [1, 5, expected.1, expected.1];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let div = model.config().size_divisor();
    let mut checked = 0;
    for _ in 0..20 {
        let (h, w) = (div * rng.random_range(1..=8), div * rng.random_range(1..=8));
        let (levels, tagmap) = run(h, w);
        let (want, want_tag) = model.output_shapes(1, h, w).unwrap();
        pass &= levels
            .iter()
            .map(|s| [s[0], s[1], s[2], s[3]])
            .collect::<Vec<_>>()
            == want
            && tagmap == want_tag
            && levels[0][2..] == [h / 4, w / 4]
            && levels[1][2..] == [h / 2, w / 2];
        checked += 1;
    }
    let t = start.elapsed();
    pass &= t < Duration::from_secs(1);
    report(
        "A6",
        pass,
        format!(
            "input 512 -> heatmaps {got:?}^2, tags {}^2; {checked} random sizes; {:.2}s",
            tagmap[2],
            secs(t)
        ),
    );
}

fn gt(id: u64, area: f64, kps: &[(f64, f64, u8)]) -> Annotation {
    Annotation {
        person_id: id,
        keypoints: kps
            .iter()
            .map(|&(x, y, v)| Keypoint::new(x, y, v))
            .collect(),
        area,
        bbox: None,
        iscrowd: false,
    }
}

fn pose(score: f64, kps: &[(f64, f64)]) -> Pose {
    Pose {
        keypoints: kps
            .iter()
            .map(|&(x, y)| PoseKeypoint { x, y, score })
            .collect(),
        instance_score: score,
        tag_mean: 0.0,
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn eval_one(preds: &[ImagePredictions], gts: &[ImageGroundTruth], c: &OksConstants) -> EvalReport {
    evaluate(preds, gts, c, &AreaRanges::default()).unwrap()
}

#[test]
fn a7_evaluator_fixtures() {
    let _g = serial();
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // OKS: d^2 = 8, s^2 = 400, k = 0.1 gives exp(-1).
    let c1 = OksConstants::uniform(1, 0.1).unwrap();
    let g = gt(1, 400.0, &[(10.0, 10.0, 2)]);
    check(
        "oks exp(-1)",
        close(
            oks(&pose(1.0, &[(12.0, 12.0)]), &g, &c1).unwrap(),
            (-1.0f64).exp(),
        ),
    );
    let c3 = OksConstants::new(vec![0.1, 0.2, 0.3]).unwrap();
    let g3 = gt(1, 400.0, &[(0.0, 0.0, 2), (10.0, 0.0, 1), (0.0, 10.0, 2)]);
    let p3 = pose(1.0, &[(2.0, 0.0), (10.0, 1.0), (6.0, 10.0)]);
    check(
        "oks three types",
        close(oks(&p3, &g3, &c3).unwrap(), 0.7274315179672036),
    );

    // Two ground truths, one perfect detection and one at OKS 0.61: true
    // positives at thresholds 0.5-0.6, TP then FP above.
    let a = gt(1, 10000.0, &[(300.0, 300.0, 2)]);
    let b = gt(2, 10000.0, &[(100.0, 100.0, 2)]);
    let perfect_a = pose(0.9, &[(300.0, 300.0)]);
    let near_b = pose(0.8, &[(100.0 + 9.942799623997058, 100.0)]);
    let gts = vec![ImageGroundTruth {
        image_id: 7,
        annotations: vec![a.clone(), b.clone()],
    }];
    let preds = vec![ImagePredictions {
        image_id: 7,
        poses: vec![perfect_a.clone(), near_b.clone()],
    }];
    let r = eval_one(&preds, &gts, &c1);
    check("AP", close(r.ap, 0.6534653465346535));
    check("AP50", close(r.ap50, 1.0));
    check("AP75", close(r.ap75, 51.0 / 101.0));
    check("AR", close(r.ar, 0.65));
    check("AP_L", close(r.ap_large, r.ap));
    check("AP_M", close(r.ap_medium, 0.0));

    // Ordering: shuffled images, annotations and predictions.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let c = OksConstants::uniform(3, 0.08).unwrap();
    let mut gts = Vec::new();
    let mut ps = Vec::new();
    for id in 0..10u64 {
        let mut annos = Vec::new();
        let mut poses = Vec::new();
        for p in 0..rng.random_range(1..4u64) {
            let kps: Vec<(f64, f64, u8)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..200.0),
                        rng.random_range(0.0..200.0),
                        2,
                    )
                })
                .collect();
            let noisy: Vec<(f64, f64)> = kps
                .iter()
                .map(|k| {
                    (
                        k.0 + rng.random_range(-6.0..6.0),
                        k.1 + rng.random_range(-6.0..6.0),
                    )
                })
                .collect();
            annos.push(gt(id * 10 + p, rng.random_range(500.0..20000.0), &kps));
            poses.push(pose(rng.random_range(0.1..1.0), &noisy));
        }
        gts.push(ImageGroundTruth {
            image_id: id,
            annotations: annos,
        });
        ps.push(ImagePredictions {
            image_id: id,
            poses,
        });
    }
    let base = eval_one(&ps, &gts, &c);
    for _ in 0..5 {
        let mut g2 = gts.clone();
        g2.shuffle(&mut rng);
        g2.iter_mut().for_each(|g| g.annotations.shuffle(&mut rng));
        let mut p2 = ps.clone();
        p2.shuffle(&mut rng);
        check(
            "ordering",
            eval_one(&p2, &g2, &c).metrics() == base.metrics(),
        );
    }

    // Scale consistency: coordinates times s, areas times s^2.
    for s in [0.5, 2.0, 3.7] {
        let scale_gt = |g: &ImageGroundTruth| {
            let mut g = g.clone();
            for a in &mut g.annotations {
                a.area *= s * s;
                a.keypoints.iter_mut().for_each(|k| {
                    k.x *= s;
                    k.y *= s;
                });
            }
            g
        };
        let scale_pred = |p: &ImagePredictions| {
            let mut p = p.clone();
            for pose in &mut p.poses {
                pose.keypoints.iter_mut().for_each(|k| {
                    k.x *= s;
                    k.y *= s;
                });
            }
            p
        };
        let g2: Vec<_> = gts.iter().map(scale_gt).collect();
        let p2: Vec<_> = ps.iter().map(scale_pred).collect();
        let r = eval_one(&p2, &g2, &c);
        // Area bins are absolute, so only the scale-free metrics must agree.
        let same = r.matches.len() == base.matches.len()
            && r.matches
                .iter()
                .zip(&base.matches)
                .all(|(x, y)| close(x.oks, y.oks))
            && close(r.ap, base.ap)
            && close(r.ar, base.ar);
        check("scale consistency", same);
    }

    // Constant tag shift leaves the grouping unchanged.
    let cands: Vec<KeypointCandidate> = (0..40)
        .map(|_| KeypointCandidate {
            k: rng.random_range(0..4),
            x: rng.random_range(0.0..100.0),
            y: rng.random_range(0.0..100.0),
            score: rng.random_range(0.1..1.0),
            tag: f64::from(rng.random_range(0..4u8)) * 2.0 + rng.random_range(-0.3..0.3),
        })
        .collect();
    for mode in [GroupingMode::Greedy, GroupingMode::Optimal] {
        let reference = group(&cands, 4, 1.0, mode);
        for shift in [-3.0, 0.5, 12.0] {
            let shifted: Vec<_> = cands
                .iter()
                .map(|c| KeypointCandidate {
                    tag: c.tag + shift,
                    ..*c
                })
                .collect();
            let poses = group(&shifted, 4, 1.0, mode);
            let same = poses.len() == reference.len()
                && poses.iter().zip(&reference).all(|(p, q)| {
                    p.keypoints == q.keypoints && close(p.tag_mean - shift, q.tag_mean)
                });
            check("tag shift", same);
        }
    }

    let t = start.elapsed();
    let pass = failures.is_empty() && t < Duration::from_secs(10);
    report(
        "A7",
        pass,
        format!(
            "AP fixture {:.10}, {} failed checks{}; {:.2}s",
            r.ap,
            failures.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(" {failures:?}")
            },
            secs(t)
        ),
    );
}

fn fifty_step_checkpoint(seed: u64) -> Vec<u8> {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::toy();
    cfg.data.scene = SceneConfig {
        image_size: 128,
        persons_per_image: [1, 3],
        scale_range: [40.0, 120.0],
        num_keypoints: 5,
        seed,
        ..SceneConfig::default()
    };
    cfg.training.batch_size = 2;
    cfg.training.epochs = 25;
    cfg.training.seed = seed;
    let data = generate_split(&cfg.data.scene, 4).unwrap();
    let mut t = Trainer::new(&cfg, &data).unwrap();
    while !t.is_done() {
        t.run_epoch().unwrap();
    }
    assert_eq!(t.step_count(), 50);
    t.checkpoint().to_bytes()
}

#[test]
fn a8_determinism() {
    let _g = serial();
    let start = Instant::now();
    let first = fifty_step_checkpoint(11);
    let second = fifty_step_checkpoint(11);
    let other = fifty_step_checkpoint(12);
    let t = start.elapsed();
    let pass = first == second && first != other && t < Duration::from_secs(120);
    report(
        "A8",
        pass,
        format!(
            "two 50-step runs {} ({} bytes), different seed {}; {:.1}s",
            if first == second {
                "bitwise identical"
            } else {
                "differ"
            },
            first.len(),
            if first != other {
                "differs"
            } else {
                "identical"
            },
            secs(t)
        ),
    );
}
