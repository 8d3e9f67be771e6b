//! `tdn`: synthesize datasets, train and evaluate temporal dependency
//! network models, and export learned segmentations and adjacency images.
//!
//! Exit codes: 0 on success, 1 on input/validation errors, 2 on internal
//! invariant failures. Diagnostics go to stderr, results to stdout.

mod pgm;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tdn_core::{
    evaluate_gap, load_checkpoint, load_dataset, read_features, save_checkpoint, synth_generate,
    train, write_synth_dataset, AdamParams, SyntheticSpec, TDNConfig, TDNModel, TdnError,
    TrainOptions,
};

#[derive(Parser)]
#[command(name = "tdn", version, about = "Temporal dependency networks for sequence classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted segment structure.
    Synth {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        videos: usize,
        /// Frames per video.
        #[arg(long, default_value_t = 64)]
        frames: usize,
        /// Feature dimension.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        /// Segments per video (each takes a distinct class).
        #[arg(long, default_value_t = 4)]
        segments: usize,
        /// Gaussian noise scale.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        /// Defaults to $TDN_SEED, then 42.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset directory and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        /// Videos per gradient step.
        #[arg(long, default_value_t = 8)]
        batch: usize,
        /// Defaults to $TDN_SEED, then 42.
        #[arg(long)]
        seed: Option<u64>,
        /// Fraction of videos held out for validation, split by id hash.
        #[arg(long, default_value_t = 0.2)]
        val_frac: f64,
    },
    /// Print the global average precision of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Predictions per video (clamped to the class count).
        #[arg(long, default_value_t = 20)]
        topk: usize,
    },
    /// Print learned cut indices, one line per layer.
    Segment {
        /// A single feature file.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Print layers 1..=LAYER.
        #[arg(long, default_value_t = 1)]
        layer: usize,
    },
    /// Export a layer's adjacency matrix as a grayscale PGM image.
    Viz {
        /// A single feature file.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 1)]
        layer: usize,
        /// Affinities before or after cross-segment masking.
        #[arg(long, value_enum)]
        stage: Stage,
        /// Output PGM path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    Raw,
    Refined,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                TdnError::Contract(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

/// `--seed` flag, else $TDN_SEED, else 42.
fn resolve_seed(flag: Option<u64>) -> Result<u64, TdnError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("TDN_SEED") {
        Ok(text) => text
            .parse()
            .map_err(|_| TdnError::Input(format!("TDN_SEED is not a valid seed: {text:?}"))),
        Err(_) => Ok(42),
    }
}

fn load_model_for(features_path: &Path, ckpt: &Path, layer: usize) -> Result<(TDNModel, tdn_core::ForwardTrace), TdnError> {
    let feature = read_features(features_path)?;
    let model = load_checkpoint(ckpt)?;
    if layer == 0 || layer > model.config.num_layers {
        return Err(TdnError::Input(format!(
            "layer {layer} out of range: model has {} layers",
            model.config.num_layers
        )));
    }
    if feature.dim != model.config.feature_dim {
        return Err(TdnError::Input(format!(
            "feature width {} does not match model feature_dim {}",
            feature.dim, model.config.feature_dim
        )));
    }
    let trace = model.run(&feature.to_matrix()?)?;
    Ok((model, trace))
}

fn run(command: Command) -> Result<(), TdnError> {
    match command {
        Command::Synth { out, videos, frames, dim, classes, segments, noise, seed } => {
            let spec = SyntheticSpec {
                videos,
                frames_min: frames,
                frames_max: frames,
                dim,
                classes,
                segments,
                noise,
                seed: resolve_seed(seed)?,
            };
            let generated = synth_generate(&spec)?;
            write_synth_dataset(&out, &generated)?;
            println!(
                "wrote {} videos ({} frames x dim {}, {} classes, {} segments/video) to {}",
                generated.videos.len(),
                frames,
                dim,
                classes,
                segments,
                out.display()
            );
            Ok(())
        }
        Command::Train { data, ckpt, epochs, lr, layers, batch, seed, val_frac } => {
            let dataset = load_dataset(&data)?;
            let first = dataset
                .items
                .first()
                .ok_or_else(|| TdnError::Input("empty dataset".into()))?;
            let config = TDNConfig {
                feature_dim: first.features.cols(),
                num_layers: layers,
                num_classes: dataset.classes,
                optimizer: AdamParams { lr, ..AdamParams::default() },
                seed: resolve_seed(seed)?,
                batch_size: batch,
            };
            let (model, logs) = train(&dataset, &config, &TrainOptions { epochs, val_frac })?;
            for log in &logs {
                match log.val_gap {
                    Some(gap) => println!(
                        "epoch={} train_loss={:.6} val_gap={:.6}",
                        log.epoch, log.train_loss, gap
                    ),
                    None => println!(
                        "epoch={} train_loss={:.6} val_gap=n/a",
                        log.epoch, log.train_loss
                    ),
                }
            }
            save_checkpoint(&model, &ckpt)?;
            println!("checkpoint written: {}", ckpt.display());
            Ok(())
        }
        Command::Eval { data, ckpt, topk } => {
            if topk == 0 {
                return Err(TdnError::Input("topk must be >= 1".into()));
            }
            let dataset = load_dataset(&data)?;
            let model = load_checkpoint(&ckpt)?;
            if dataset.classes != model.config.num_classes {
                return Err(TdnError::Input(format!(
                    "dataset has {} classes, checkpoint expects {}",
                    dataset.classes, model.config.num_classes
                )));
            }
            if let Some(item) = dataset.items.first() {
                if item.features.cols() != model.config.feature_dim {
                    return Err(TdnError::Input(format!(
                        "dataset feature width {} does not match model feature_dim {}",
                        item.features.cols(),
                        model.config.feature_dim
                    )));
                }
            }
            let indices: Vec<usize> = (0..dataset.items.len()).collect();
            let gap = evaluate_gap(&model, &dataset, &indices, topk)?;
            println!("GAP: {gap:.6}");
            Ok(())
        }
        Command::Segment { features, ckpt, layer } => {
            let (_, trace) = load_model_for(&features, &ckpt, layer)?;
            for l in 0..layer {
                let cuts: Vec<String> =
                    trace.layers[l].partition.cuts().iter().map(|c| c.to_string()).collect();
                println!("{}", cuts.join(","));
            }
            Ok(())
        }
        Command::Viz { features, ckpt, layer, stage, out } => {
            let (_, trace) = load_model_for(&features, &ckpt, layer)?;
            let matrix = match stage {
                Stage::Raw => &trace.layers[layer - 1].adjacency,
                Stage::Refined => &trace.layers[layer - 1].refined,
            };
            pgm::write_pgm(&out, matrix)?;
            Ok(())
        }
    }
}
