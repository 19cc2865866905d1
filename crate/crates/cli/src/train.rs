//! Deterministic training loop.
//!
//! Every epoch draws its shuffle and augmentations from its own RNG stream,
//! so a run resumed from an epoch-boundary checkpoint replays exactly the
//! same batches as an uninterrupted one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{ensure, Context, Result};
use posepyr_core::model::Model;
use posepyr_core::supervision::{
    apply_draw, heatmap_loss, level_sizes, make_targets, tag_loss, total_loss, AffineDraw,
};
use posepyr_core::synthdata::Dataset;
use posepyr_core::{Annotation, Image};
use posepyr_tensor::{adam_step, AdamConfig, Checkpoint, Graph, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::evaluate::{evaluate_model, EvalOptions};

pub const LOG_HEADER: &str = "epoch,step,heatmap_loss,tag_loss,total_loss,lr";
pub const AP_LOG_HEADER: &str = "epoch,step,ap,ap50,ap75,ap_medium,ap_large";

/// Mean losses of one epoch, as written to the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub heatmap_loss: f64,
    pub tag_loss: f64,
    pub total_loss: f64,
    pub lr: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.9e},{:.9e},{:.9e},{:e}",
            self.epoch, self.step, self.heatmap_loss, self.tag_loss, self.total_loss, self.lr
        )
    }
}

/// Losses of a single optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub heatmap: f64,
    pub tag: f64,
    pub total: f64,
}

/// Progress stored in checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
}

pub struct Trainer<'a> {
    cfg: &'a RunConfig,
    data: &'a Dataset,
    model: Model<f32>,
    epoch: usize,
    step: usize,
}

/// Scales the draw so the whole `(h, w)` image maps into an `output` square
/// before the sampled scale and translation apply.
fn fit_draw(mut draw: AffineDraw, (h, w): (usize, usize), output: usize) -> AffineDraw {
    draw.scale *= output as f64 / h.max(w) as f64;
    draw
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a RunConfig, data: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            data.keypoints.len() == cfg.model.num_keypoints,
            "dataset has {} keypoint types, model expects {}",
            data.keypoints.len(),
            cfg.model.num_keypoints
        );
        ensure!(!data.is_empty(), "training dataset is empty");
        Ok(Self {
            cfg,
            data,
            model: Model::new(&cfg.model, cfg.training.seed)?,
            epoch: 0,
            step: 0,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: &'a RunConfig, data: &'a Dataset, ckpt: &Checkpoint<f32>) -> Result<Self> {
        let mut t = Self::new(cfg, data)?;
        let state: TrainState = serde_json::from_str(&ckpt.metadata)
            .context("checkpoint metadata is not a training state")?;
        ensure!(
            state.seed == cfg.training.seed,
            "checkpoint was trained with seed {}, config has {}",
            state.seed,
            cfg.training.seed
        );
        t.model.load_checkpoint(ckpt)?;
        t.epoch = state.epoch;
        t.step = state.step;
        Ok(t)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.training.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        let state = TrainState {
            epoch: self.epoch,
            step: self.step,
            seed: self.cfg.training.seed,
        };
        self.model
            .to_checkpoint(serde_json::to_string(&state).expect("state serializes"))
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.training.seed ^ 0xda7a_5eed);
        rng.set_stream(epoch as u64);
        rng
    }

    /// Warps one sample into the network input square.
    fn prepare(&self, index: usize, rng: &mut ChaCha8Rng) -> Result<(Image, Vec<Annotation>)> {
        let s = &self.data.samples[index];
        let t = &self.cfg.training;
        let size = self.cfg.model.input_size;
        let draw = if t.augment {
            AffineDraw::sample(&t.augmentation, rng)
        } else {
            AffineDraw::IDENTITY
        };
        let dims = (s.image.height(), s.image.width());
        if draw == AffineDraw::IDENTITY && dims == (size, size) {
            return Ok((s.image.clone(), s.annotations.clone()));
        }
        Ok(apply_draw(
            &s.image,
            &s.annotations,
            &fit_draw(draw, dims, size),
            size,
            &self.data.keypoints.flip_index,
        )?)
    }

    /// One Adam step on a prepared batch.
    pub fn train_step(
        &mut self,
        batch: &[(Image, Vec<Annotation>)],
        lr: f64,
    ) -> Result<StepLosses> {
        let cfg = &self.cfg;
        let size = cfg.model.input_size;
        let images: Vec<Tensor<f32>> = batch.iter().map(|(im, _)| im.to_tensor()).collect();
        let annos: Vec<Vec<Annotation>> = batch.iter().map(|(_, a)| a.clone()).collect();
        let levels = level_sizes((size, size), cfg.model.num_deconv_modules + 1);
        let targets = make_targets::<f32>(
            &annos,
            (size, size),
            &levels,
            cfg.model.num_keypoints,
            cfg.training.sigma,
        )?;

        let mut g = Graph::new();
        let vars = self.model.bind(&mut g);
        let x = g.constant(Tensor::stack(&images)?);
        let out = self.model.forward(&mut g, &vars, x, Mode::Train)?;
        let hm = heatmap_loss(&mut g, &out.levels, &targets)?;
        let tag = tag_loss(&mut g, out.tagmap, &targets.tag_indices)?;
        let total = total_loss(&mut g, hm, tag, cfg.training.loss_weights)?;
        g.backward(total)?;
        self.model.collect_grads(&g, &vars);
        let adam = AdamConfig {
            lr,
            ..AdamConfig::default()
        };
        adam_step(self.model.params_mut(), &adam);
        self.model.zero_grads();
        self.step += 1;

        let item = |v| -> Result<f64> { Ok(f64::from(g.value(v).item()?)) };
        Ok(StepLosses {
            heatmap: item(hm)?,
            tag: item(tag)?,
            total: item(total)?,
        })
    }

    /// Runs the next epoch and returns its mean losses.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let lr = self.cfg.training.lr_at(epoch);
        let mut rng = self.epoch_rng(epoch);
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        order.shuffle(&mut rng);
        let (mut hm, mut tag, mut total, mut n) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(self.cfg.training.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| self.prepare(i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let l = self.train_step(&batch, lr)?;
            hm += l.heatmap;
            tag += l.tag;
            total += l.total;
            n += 1;
        }
        self.epoch += 1;
        let n = n as f64;
        Ok(EpochRecord {
            epoch,
            step: self.step,
            heatmap_loss: hm / n,
            tag_loss: tag / n,
            total_loss: total / n,
            lr,
        })
    }
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint_epoch{epoch:04}.ckpt")
}

fn timestamp() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Trains to `cfg.training.epochs`, writing `metrics.csv`, periodic and final
/// checkpoints (`final.ckpt`) and, with a validation set and `eval_every`,
/// `ap_log.csv` under `out_dir`. Logs are written under a temporary name and
/// renamed when training finishes.
pub fn train(
    cfg: &RunConfig,
    train_data: &Dataset,
    val_data: Option<&Dataset>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
            Trainer::resume(cfg, train_data, &ckpt)
                .with_context(|| format!("resuming from {}", p.display()))?
        }
        None => Trainer::new(cfg, train_data)?,
    };
    let log_path = out_dir.join("metrics.csv");
    let tmp_log = out_dir.join("metrics.csv.partial");
    let mut log = BufWriter::new(
        File::create(&tmp_log).with_context(|| format!("creating {}", tmp_log.display()))?,
    );
    writeln!(
        log,
        "# posepyr training log, started at unix time {}",
        timestamp()
    )?;
    writeln!(log, "{LOG_HEADER}")?;

    let eval_every = cfg.training.eval_every;
    let mut ap_log = match val_data {
        Some(_) if eval_every > 0 => {
            let p = out_dir.join("ap_log.csv.partial");
            let mut w = BufWriter::new(
                File::create(&p).with_context(|| format!("creating {}", p.display()))?,
            );
            writeln!(w, "{AP_LOG_HEADER}")?;
            Some(w)
        }
        _ => None,
    };

    let mut history = Vec::new();
    while !trainer.is_done() {
        let rec = trainer.run_epoch()?;
        writeln!(log, "{}", rec.csv_row())?;
        log.flush()?;
        history.push(rec);
        let done = trainer.epoch();
        if cfg.training.checkpoint_every > 0 && done % cfg.training.checkpoint_every == 0 {
            let p = out_dir.join(checkpoint_name(done));
            trainer
                .checkpoint()
                .save(&p)
                .with_context(|| format!("writing {}", p.display()))?;
        }
        if let (Some(w), Some(val)) = (ap_log.as_mut(), val_data) {
            if done % eval_every == 0 || trainer.is_done() {
                let opts = EvalOptions::from_config(cfg, cfg.inference.flip)?;
                let r = evaluate_model(trainer.model(), val, &opts)?.report;
                writeln!(
                    w,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    rec.epoch, rec.step, r.ap, r.ap50, r.ap75, r.ap_medium, r.ap_large
                )?;
                w.flush()?;
            }
        }
    }
    let checkpoint_path = out_dir.join("final.ckpt");
    trainer
        .checkpoint()
        .save(&checkpoint_path)
        .with_context(|| format!("writing {}", checkpoint_path.display()))?;
    drop(log);
    fs::rename(&tmp_log, &log_path).with_context(|| format!("renaming {}", tmp_log.display()))?;
    if let Some(w) = ap_log {
        drop(w);
        fs::rename(
            out_dir.join("ap_log.csv.partial"),
            out_dir.join("ap_log.csv"),
        )?;
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
        log_path,
        checkpoint_path,
    })
}
