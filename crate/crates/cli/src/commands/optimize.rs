use std::path::PathBuf;

use clap::Args;
use wsed_core::threshold_opt::optimize;

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{data_error, CliResult};
use crate::files::{load_pooled, write_json, TagFile, ThresholdFile};

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// pooled.json, or a directory of score files.
    #[arg(long)]
    pub scores: PathBuf,
    /// Reference clip tags for the same bags (a tags.json, e.g. from `infer --tags oracle`).
    #[arg(long)]
    pub tags: PathBuf,
    /// Experiment config; only the [search] section is read.
    #[arg(long)]
    pub config: PathBuf,
    /// Threshold file, usable as `infer --thresholds`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: OptimizeArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let pooled = load_pooled(&args.scores)?;
    let tags = TagFile::load(&args.tags)?;
    if pooled.class_names != tags.class_names {
        return Err(data_error("score and tag files disagree on class names"));
    }
    let mut scores = Vec::with_capacity(pooled.pooled.len());
    let mut truth = Vec::with_capacity(pooled.pooled.len());
    for (bag, p) in &pooled.pooled {
        scores.push(p.clone());
        truth.push(tags.get(bag)?.clone());
    }
    let result = optimize(&scores, &truth, &cfg.search)?;
    println!(
        "macro tagging F {:.2} (0.5 baseline {:.2}) after {} generations",
        result.fitness,
        result.baseline_fitness,
        result.trace.len() - 1
    );
    write_json(
        &args.out,
        &ThresholdFile {
            schema_version: SCHEMA_VERSION,
            class_names: pooled.class_names,
            thresholds: result.thresholds,
            fitness: result.fitness,
            baseline_fitness: result.baseline_fitness,
            trace: result.trace,
        },
    )
}
