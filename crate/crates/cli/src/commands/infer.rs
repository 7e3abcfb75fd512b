use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use wsed_core::nn::{forward, Checkpoint};
use wsed_core::synthdata::SynthBag;
use wsed_core::threshold_opt::apply_thresholds;
use wsed_core::ScoreMatrix;

use crate::config::SCHEMA_VERSION;
use crate::error::{config_error, data_error, CliError, CliResult};
use crate::files::{
    load_dataset, write_json, PooledFile, ScoreFile, TagFile, ThresholdFile, POOLED_FILE,
    SCORES_SUFFIX, TAGS_FILE,
};

/// Where the clip tags used for masking come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TagSource {
    /// Max-pooled model scores above per-class thresholds.
    Model,
    /// A tags file from an earlier run.
    File(PathBuf),
    /// Ground-truth weak labels stored in the dataset.
    Oracle,
}

impl FromStr for TagSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "model" => Ok(Self::Model),
            "oracle" => Ok(Self::Oracle),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(Self::File(PathBuf::from(p))),
                _ => Err(format!("expected model, oracle or file:PATH, got {s:?}")),
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset in bag JSONL format.
    #[arg(long)]
    pub data: PathBuf,
    /// model | oracle | file:PATH
    #[arg(long, default_value = "model")]
    pub tags: TagSource,
    /// Directory receiving <bag_id>.scores.json, tags.json and pooled.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-class thresholds for `--tags model` (default 0.5 everywhere).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value = "1")]
    pub jobs: NonZeroUsize,
}

fn score_all(
    params: &wsed_core::nn::ModelParams,
    bags: &[SynthBag],
    jobs: usize,
) -> CliResult<Vec<ScoreMatrix>> {
    let chunk = bags.len().div_ceil(jobs).max(1);
    let parts: Vec<wsed_core::Result<Vec<ScoreMatrix>>> = std::thread::scope(|s| {
        let handles: Vec<_> = bags
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|b| forward(params, &b.features)).collect())
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(bags.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn run(args: InferArgs) -> CliResult<()> {
    if args.thresholds.is_some() && args.tags != TagSource::Model {
        return Err(config_error("--thresholds only applies to --tags model"));
    }
    let checkpoint = Checkpoint::load(&args.checkpoint).map_err(|e| {
        CliError::from(e).context(format!("loading checkpoint {}", args.checkpoint.display()))
    })?;
    let (bags, data_names) = load_dataset(&args.data)?;
    let class_names = if checkpoint.class_names.is_empty() {
        data_names.clone()
    } else {
        checkpoint.class_names.clone()
    };
    if !data_names.is_empty() && data_names != class_names {
        return Err(data_error(
            "dataset class names differ from the checkpoint's",
        ));
    }
    let params = checkpoint.into_params()?;
    if let Some(b) = bags
        .iter()
        .find(|b| b.features.dim() != params.spec().input_dim)
    {
        return Err(data_error(format!(
            "bag {} has feature dimension {} but the model expects {}",
            b.bag_id,
            b.features.dim(),
            params.spec().input_dim
        )));
    }

    let thresholds = match &args.thresholds {
        Some(p) => {
            let f = ThresholdFile::load(p)?;
            if f.class_names != class_names {
                return Err(data_error(format!(
                    "{}: class names differ from the checkpoint's",
                    p.display()
                )));
            }
            f.thresholds
        }
        None => vec![0.5; class_names.len()],
    };
    let external = match &args.tags {
        TagSource::File(p) => Some(TagFile::load(p)?),
        _ => None,
    };

    let scores = score_all(&params, &bags, args.jobs.get())?;
    let mut tags = BTreeMap::new();
    let mut pooled = BTreeMap::new();
    let mut files = Vec::with_capacity(bags.len());
    for (bag, s) in bags.iter().zip(&scores) {
        let p = s.max_pooled();
        let t = match &args.tags {
            TagSource::Model => apply_thresholds(&p, &thresholds),
            TagSource::Oracle => bag.weak.clone(),
            TagSource::File(_) => external
                .as_ref()
                .expect("loaded above")
                .get(&bag.bag_id)?
                .clone(),
        };
        if t.len() != class_names.len() {
            return Err(data_error(format!(
                "bag {}: {} tags for {} classes",
                bag.bag_id,
                t.len(),
                class_names.len()
            )));
        }
        tags.insert(bag.bag_id.clone(), t);
        pooled.insert(bag.bag_id.clone(), p);
        files.push(ScoreFile::new(&bag.bag_id, s, &class_names));
    }

    for f in &files {
        write_json(&args.out.join(format!("{}{SCORES_SUFFIX}", f.bag_id)), f)?;
    }
    let source = match &args.tags {
        TagSource::Model => "model",
        TagSource::Oracle => "oracle",
        TagSource::File(_) => "file",
    };
    let tag_file = TagFile {
        schema_version: SCHEMA_VERSION,
        source: source.into(),
        class_names: class_names.clone(),
        thresholds: (args.tags == TagSource::Model).then_some(thresholds),
        tags,
    };
    write_json(&args.out.join(TAGS_FILE), &tag_file)?;
    write_json(
        &args.out.join(POOLED_FILE),
        &PooledFile {
            schema_version: SCHEMA_VERSION,
            class_names,
            pooled,
        },
    )?;
    eprintln!("scored {} bags into {}", files.len(), args.out.display());
    Ok(())
}
