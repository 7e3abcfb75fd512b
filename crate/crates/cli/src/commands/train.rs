use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use wsed_core::losses::LossVariant;
use wsed_core::nn::{train, Checkpoint, TrainConfig, TrainingBag};
use wsed_core::synthdata::SynthBag;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{config_error, data_error, CliResult};
use crate::files::{load_dataset, write_json};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint path; the loss trace goes next to it as <stem>.trace.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides `loss.variant` (fsl, mil_max, mil_mmm, mil_max_cos).
    #[arg(long)]
    pub variant: Option<String>,
    /// Overrides `loss.alpha`.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Serialize)]
struct TraceFile {
    schema_version: u32,
    variant: LossVariant,
    alpha: f64,
    seed: u64,
    epochs: usize,
    loss: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    validation_loss: Vec<f64>,
    stopped_at: Option<usize>,
}

fn as_training(bags: &[SynthBag]) -> Vec<TrainingBag<'_>> {
    bags.iter()
        .map(|b| TrainingBag {
            features: &b.features,
            labels: &b.weak,
        })
        .collect()
}

pub fn trace_path(checkpoint: &std::path::Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    checkpoint.with_file_name(format!("{stem}.trace.json"))
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(v) = &args.variant {
        cfg.loss.variant = v.parse()?;
    }
    if let Some(a) = args.alpha {
        cfg.loss.alpha = a;
    }
    cfg.validate()?;

    let train_path = cfg
        .data
        .train
        .clone()
        .ok_or_else(|| config_error("data.train is required for training"))?;
    let (bags, class_names) = load_dataset(&train_path)?;
    let first = bags
        .first()
        .ok_or_else(|| data_error(format!("{} holds no bags", train_path.display())))?;
    let validation = match &cfg.data.validation {
        Some(p) => Some(load_dataset(p)?.0),
        None => None,
    };

    let spec = cfg.model.spec(first.features.dim(), class_names.len());
    let data = as_training(&bags);
    let val = validation.as_deref().map(as_training);
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.training.batch_size,
        adam: cfg.training.adam,
        early_stopping: cfg.early_stopping(),
    };
    let outcome = train(spec, &data, val.as_deref(), &cfg.loss, &train_cfg, cfg.seed)?;

    Checkpoint::from_params(&outcome.params, class_names).save(&args.out)?;
    let trace = TraceFile {
        schema_version: SCHEMA_VERSION,
        variant: cfg.loss.variant,
        alpha: cfg.loss.alpha,
        seed: cfg.seed,
        epochs: outcome.loss_trace.len(),
        loss: outcome.loss_trace,
        validation_loss: outcome.validation_trace,
        stopped_at: outcome.stopped_at,
    };
    write_json(&trace_path(&args.out), &trace)?;
    eprintln!(
        "trained {} epochs, final loss {:.6}",
        trace.epochs,
        trace.loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}
