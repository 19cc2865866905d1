//! Subcommand implementations. Every output file is written under a
//! temporary name and renamed into place once complete.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use posepyr_core::decode::multi_scale_infer;
use posepyr_core::eval::coco::{results_from_predictions, CocoResult};
use posepyr_core::eval::{EvalReport, ImagePredictions};
use posepyr_core::model::{Model, StageCost};
use posepyr_core::skeleton::KeypointSet;
use posepyr_core::synthdata::{export, generate_split, load_dataset, Dataset};
use posepyr_core::Image;
use posepyr_tensor::{Checkpoint, Tensor};
use serde::Serialize;

use crate::config::RunConfig;
use crate::evaluate::{evaluate_model, EvalOptions};
use crate::plot;
use crate::train::{self, TrainOutcome};

/// Sibling path used while `path` is being written.
pub fn atomic_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub fn commit(tmp: &Path, path: &Path) -> Result<()> {
    fs::rename(tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    posepyr_tensor::checkpoint::write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Exports `ds` to `dir`, replacing a previous export there.
fn export_atomic(ds: &Dataset, dir: &Path) -> Result<()> {
    let tmp = atomic_path(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).with_context(|| format!("removing {}", tmp.display()))?;
    }
    export(ds, &tmp).with_context(|| format!("exporting to {}", tmp.display()))?;
    if dir.exists() {
        ensure!(
            dir.join("annotations.json").exists(),
            "{} exists and is not a dataset directory; refusing to replace it",
            dir.display()
        );
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    if let Some(parent) = dir.parent() {
        create_dir(parent)?;
    }
    commit(&tmp, dir)
}

/// Where `gen-data` writes, and `train`/`eval` read, the two splits.
pub fn data_dirs(cfg: &RunConfig, out: Option<&Path>) -> (PathBuf, PathBuf) {
    match out {
        Some(o) => (o.join("train"), o.join("val")),
        None => (cfg.paths.train_data.clone(), cfg.paths.val_data.clone()),
    }
}

pub fn gen_data(cfg: &RunConfig, out: Option<&Path>) -> Result<(PathBuf, PathBuf)> {
    let (train_dir, val_dir) = data_dirs(cfg, out);
    let train = generate_split(&cfg.data.scene, cfg.data.train_images)?;
    export_atomic(&train, &train_dir)?;
    let val = generate_split(&cfg.data.val_scene(), cfg.data.val_images)?;
    export_atomic(&val, &val_dir)?;
    Ok((train_dir, val_dir))
}

fn load_split(dir: &Path) -> Result<Dataset> {
    ensure!(
        dir.join("annotations.json").exists(),
        "dataset {} not found (run gen-data first)",
        dir.display()
    );
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

pub fn cmd_train(
    cfg: &RunConfig,
    resume: Option<&Path>,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_data = load_split(&cfg.paths.train_data)?;
    let val_data = if cfg.training.eval_every > 0 {
        Some(load_split(&cfg.paths.val_data)?)
    } else {
        None
    };
    let out_dir = out.unwrap_or(&cfg.paths.output_dir);
    create_dir(out_dir)?;
    write_json(&out_dir.join("config.json"), cfg)?;
    train::train(cfg, &train_data, val_data.as_ref(), out_dir, resume)
}

/// Builds the configured model and loads `checkpoint` into it.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<f32>> {
    let ckpt = Checkpoint::<f32>::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let mut model = Model::new(&cfg.model, 0)?;
    model.load_checkpoint(&ckpt).with_context(|| {
        format!(
            "checkpoint {} does not fit the configured model",
            checkpoint.display()
        )
    })?;
    Ok(model)
}

pub fn checkpoint_path(cfg: &RunConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.paths.checkpoint.clone())
        .unwrap_or_else(|| cfg.paths.output_dir.join("final.ckpt"))
}

/// One evaluation pass as written to disk.
#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    pub flip: bool,
    pub metrics: Vec<(String, f64)>,
    pub report: EvalReport,
}

/// Evaluates on the validation split with the configured flip setting, or
/// with both settings when `flip_both`. Writes `report[_flip|_noflip].json`
/// and `results[...].json` under `out`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    flip_both: bool,
) -> Result<Vec<EvalOutput>> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let data = load_split(&cfg.paths.val_data)?;
    create_dir(out)?;
    let flips = if flip_both {
        vec![false, true]
    } else {
        vec![cfg.inference.flip]
    };
    let mut outputs = Vec::new();
    for flip in flips {
        let opts = EvalOptions::from_config(cfg, flip)?;
        let e = evaluate_model(&model, &data, &opts)?;
        let suffix = match (flip_both, flip) {
            (false, _) => "",
            (true, true) => "_flip",
            (true, false) => "_noflip",
        };
        let output = EvalOutput {
            flip,
            metrics: e
                .report
                .metrics()
                .iter()
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
            report: e.report,
        };
        write_json(&out.join(format!("report{suffix}.json")), &output)?;
        write_json(
            &out.join(format!("results{suffix}.json")),
            &results_from_predictions(&e.predictions),
        )?;
        outputs.push(output);
    }
    Ok(outputs)
}

pub fn format_metrics(output: &EvalOutput) -> String {
    let mut s = format!("flip = {}\n", output.flip);
    for (name, v) in &output.metrics {
        s.push_str(&format!("  {name:<6} {v:.4}\n"));
    }
    s
}

/// Runs inference on PNG images. Writes `results.json` with every image's
/// poses (image ids count from 1 in argument order) and an overlay per image.
pub fn cmd_infer(
    cfg: &RunConfig,
    checkpoint: &Path,
    images: &[PathBuf],
    out: &Path,
) -> Result<Vec<CocoResult>> {
    cfg.validate()?;
    ensure!(!images.is_empty(), "no input images given");
    let model = load_model(cfg, checkpoint)?;
    let set = KeypointSet::standard(cfg.model.num_keypoints)?;
    create_dir(out)?;
    let mut preds = Vec::new();
    for (i, path) in images.iter().enumerate() {
        let image = Image::load_png(path).with_context(|| format!("reading {}", path.display()))?;
        let inf = multi_scale_infer(&model, &image, &set.flip_index, &cfg.inference)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        plot::save_overlay(
            &image,
            &inf.poses,
            &set.limbs(),
            &out.join(format!("{stem}_overlay.png")),
        )?;
        preds.push(ImagePredictions {
            image_id: i as u64 + 1,
            poses: inf.poses,
        });
    }
    let results = results_from_predictions(&preds);
    write_json(&out.join("results.json"), &results)?;
    Ok(results)
}

#[derive(Clone, Debug, Serialize)]
pub struct InspectReport {
    pub input_size: usize,
    pub stages: Vec<StageCost>,
    pub total_params: usize,
    pub total_gflops: f64,
}

pub fn cmd_inspect(cfg: &RunConfig, input_size: Option<usize>) -> Result<InspectReport> {
    cfg.model.validate()?;
    let size = input_size.unwrap_or(cfg.model.input_size);
    let model = Model::<f32>::new(&cfg.model, 0)?;
    Ok(InspectReport {
        input_size: size,
        stages: model.complexity(size),
        total_params: model.count_params(),
        total_gflops: model.count_flops(size),
    })
}

pub fn format_inspect(r: &InspectReport) -> String {
    let mut s = format!("{:<14} {:>14} {:>10}\n", "stage", "params", "GFLOPs");
    for st in &r.stages {
        s.push_str(&format!(
            "{:<14} {:>14} {:>10.3}\n",
            st.stage, st.params, st.gflops
        ));
    }
    s.push_str(&format!(
        "{:<14} {:>14} {:>10.3}\n{:<14} {:>13.3}M\n(input {}x{})\n",
        "total",
        r.total_params,
        r.total_gflops,
        "",
        r.total_params as f64 / 1e6,
        r.input_size,
        r.input_size
    ));
    s
}

/// Writes per-level heatmaps for `keypoints` (all types when empty) and a
/// pose overlay for one image.
pub fn cmd_plot(
    cfg: &RunConfig,
    checkpoint: &Path,
    image_path: &Path,
    keypoints: &[usize],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let model = load_model(cfg, checkpoint)?;
    let set = KeypointSet::standard(cfg.model.num_keypoints)?;
    let image =
        Image::load_png(image_path).with_context(|| format!("reading {}", image_path.display()))?;
    let div = cfg.model.size_divisor();
    if image.width() % div != 0 || image.height() % div != 0 {
        bail!(
            "plot needs an image whose sides are multiples of {div}, got {}x{}",
            image.width(),
            image.height()
        );
    }
    create_dir(out)?;
    let all: Vec<usize> = (0..cfg.model.num_keypoints).collect();
    let kps = if keypoints.is_empty() {
        &all[..]
    } else {
        keypoints
    };
    let pyr = model.predict(&Tensor::stack(&[image.to_tensor()])?)?;
    let mut written = plot::save_heatmaps(&pyr, kps, out, "heatmap")?;
    let inf = multi_scale_infer(&model, &image, &set.flip_index, &cfg.inference)?;
    let overlay = out.join("overlay.png");
    plot::save_overlay(&image, &inf.poses, &set.limbs(), &overlay)?;
    written.push(overlay);
    Ok(written)
}
