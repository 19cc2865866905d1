use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use posepyr_cli::commands::{self, format_inspect, format_metrics};
use posepyr_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "posepyr",
    version,
    about = "Bottom-up multi-person pose estimation with a high-resolution feature pyramid"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration; built-in toy defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed and the scene seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Checkpoint to evaluate, infer or plot with; for `train`, one to resume from.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated inference scales, e.g. 0.5,1,2.
    #[arg(long, global = true, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    /// Disables flip testing.
    #[arg(long, global = true)]
    no_flip: bool,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generates the synthetic train and validation splits.
    GenData,
    /// Trains a model; resumes when --checkpoint is given.
    Train,
    /// Evaluates a checkpoint on the validation split.
    Eval {
        /// Reports both with and without flip testing.
        #[arg(long)]
        flip_both: bool,
    },
    /// Runs inference on PNG images.
    Infer {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Prints per-stage parameter counts and GFLOPs.
    Inspect {
        /// Input side length; defaults to the model input size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Writes per-level heatmaps and a pose overlay for one image.
    Plot {
        image: PathBuf,
        /// Comma-separated keypoint types; all when absent.
        #[arg(long, value_delimiter = ',')]
        keypoints: Vec<usize>,
    },
}

fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.training.seed = seed;
        cfg.data.scene.seed = seed;
    }
    if let Some(scales) = &g.scales {
        cfg.inference.scales = scales.clone();
    }
    if g.no_flip {
        cfg.inference.flip = false;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("POSEPYR_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("POSEPYR_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let g = &cli.global;
    let cfg = load_config(g)?;
    let out = g.out.as_deref();
    let default_out = cfg.paths.output_dir.clone();
    let out_or_default = || {
        out.map(Path::to_path_buf)
            .unwrap_or_else(|| default_out.clone())
    };
    match cli.command {
        Command::GenData => {
            let (t, v) = commands::gen_data(&cfg, out)?;
            println!("wrote {} and {}", t.display(), v.display());
        }
        Command::Train => {
            let o = commands::cmd_train(&cfg, g.checkpoint.as_deref(), out)?;
            if let Some(last) = o.history.last() {
                println!(
                    "epoch {} step {}: total loss {:.6}",
                    last.epoch, last.step, last.total_loss
                );
            }
            println!(
                "log {}\ncheckpoint {}",
                o.log_path.display(),
                o.checkpoint_path.display()
            );
        }
        Command::Eval { flip_both } => {
            let ckpt = commands::checkpoint_path(&cfg, g.checkpoint.as_deref());
            for o in commands::cmd_eval(&cfg, &ckpt, &out_or_default(), flip_both)? {
                print!("{}", format_metrics(&o));
            }
        }
        Command::Infer { images } => {
            let ckpt = commands::checkpoint_path(&cfg, g.checkpoint.as_deref());
            let r = commands::cmd_infer(&cfg, &ckpt, &images, &out_or_default())?;
            println!(
                "{} poses written to {}",
                r.len(),
                out_or_default().join("results.json").display()
            );
        }
        Command::Inspect { size } => {
            let r = commands::cmd_inspect(&cfg, size)?;
            print!("{}", format_inspect(&r));
            if let Some(o) = out {
                std::fs::create_dir_all(o)?;
                commands::write_json(&o.join("inspect.json"), &r)?;
            }
        }
        Command::Plot { image, keypoints } => {
            let ckpt = commands::checkpoint_path(&cfg, g.checkpoint.as_deref());
            let files = commands::cmd_plot(&cfg, &ckpt, &image, &keypoints, &out_or_default())?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
