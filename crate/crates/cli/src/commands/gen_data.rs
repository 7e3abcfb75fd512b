use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use wsed_core::postprocess::write_tsv;
use wsed_core::synthdata::{confound_spec, export_jsonl, generate_dataset, DatasetSpec, Manifest};
use wsed_core::Annotations;

use crate::config::SCHEMA_VERSION;
use crate::error::{config_error, CliResult, Coded};
use crate::files::write_json;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Four classes with a short class confounded by a full-length one.
    Confound,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset spec (TOML or JSON); optional with --preset.
    #[arg(long, required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// Output directory; receives <split>.jsonl, <split>.manifest.json and <split>.ref.tsv.
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds prototypes and every split.
    #[arg(long)]
    pub seed: u64,
    /// Built-in scenario; a --spec given as well is ignored.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    schema_version: u32,
    split: &'a str,
    #[serde(flatten)]
    manifest: Manifest,
}

fn load_spec(path: &Path) -> CliResult<DatasetSpec> {
    let text =
        std::fs::read_to_string(path).config(format!("reading dataset spec {}", path.display()))?;
    let spec: DatasetSpec = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).config(format!("parsing dataset spec {}", path.display()))?
    } else {
        toml::from_str(&text).config(format!("parsing dataset spec {}", path.display()))?
    };
    Ok(spec)
}

pub fn run(args: GenDataArgs) -> CliResult<()> {
    let spec = match (args.preset, &args.spec) {
        (Some(Preset::Confound), _) => confound_spec(),
        (None, Some(p)) => load_spec(p)?,
        (None, None) => return Err(config_error("either --spec or --preset is required")),
    };
    let dataset = generate_dataset(&spec, args.seed)?;
    let names = dataset.spec.class_names();

    // render everything before touching the output directory
    let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
    for (split, bags) in &dataset.splits {
        outputs.push((
            format!("{split}.jsonl"),
            export_jsonl(bags, &names)?.into_bytes(),
        ));
        let manifest = ManifestFile {
            schema_version: SCHEMA_VERSION,
            split,
            manifest: Manifest::from_bags(bags, &names, args.seed),
        };
        let mut json = serde_json::to_string_pretty(&manifest).config("serialising manifest")?;
        json.push('\n');
        outputs.push((format!("{split}.manifest.json"), json.into_bytes()));
        let reference: Annotations = bags
            .iter()
            .map(|b| (b.bag_id.clone(), b.strong.clone()))
            .collect();
        outputs.push((
            format!("{split}.ref.tsv"),
            write_tsv(&reference, &names)?.into_bytes(),
        ));
    }
    let resolved = serde_json::json!({ "schema_version": SCHEMA_VERSION, "seed": args.seed, "spec": dataset.spec });
    for (name, bytes) in outputs {
        wsed_core::io::write_atomic(&args.out.join(&name), &bytes)?;
        eprintln!("wrote {}", args.out.join(name).display());
    }
    write_json(&args.out.join("spec.resolved.json"), &resolved)?;
    Ok(())
}
