use std::path::PathBuf;

use clap::Args;
use wsed_core::postprocess::{pipeline, write_tsv};
use wsed_core::Annotations;

use crate::config::ExperimentConfig;
use crate::error::{data_error, CliResult};
use crate::files::{read_score_dir, TagFile};

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Directory of <bag_id>.scores.json files.
    #[arg(long)]
    pub scores: PathBuf,
    /// tags.json used to mask classes absent from each clip.
    #[arg(long)]
    pub tags: PathBuf,
    /// Experiment config; only the [postprocess] section is read.
    #[arg(long)]
    pub config: PathBuf,
    /// Event TSV (filename, onset, offset, event_label).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: PostprocessArgs) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let scores = read_score_dir(&args.scores)?;
    let tags = TagFile::load(&args.tags)?;
    let names = &scores[0].class_names;
    if &tags.class_names != names {
        return Err(data_error(
            "tag file class names differ from the score files'",
        ));
    }
    let mut events = Annotations::new();
    for s in &scores {
        let list = pipeline(&s.matrix()?, tags.get(&s.bag_id)?, &cfg.postprocess)?;
        events.insert(s.bag_id.clone(), list);
    }
    let tsv = write_tsv(&events, names)?;
    wsed_core::io::write_atomic(&args.out, tsv.as_bytes())?;
    let n: usize = events.values().map(|l| l.events().len()).sum();
    eprintln!(
        "wrote {n} events for {} bags to {}",
        events.len(),
        args.out.display()
    );
    Ok(())
}
