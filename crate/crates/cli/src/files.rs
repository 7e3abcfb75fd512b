//! JSON artifacts exchanged between subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wsed_core::synthdata::{import_jsonl, SynthBag};
use wsed_core::{Matrix, ScoreMatrix, WeakLabels};

use crate::config::SCHEMA_VERSION;
use crate::error::{data_error, CliError, CliResult, Coded};

pub const SCORES_SUFFIX: &str = ".scores.json";
pub const TAGS_FILE: &str = "tags.json";
pub const POOLED_FILE: &str = "pooled.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).data("serialising output")?;
    text.push('\n');
    wsed_core::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).data(format!("reading {}", path.display()))?;
    let value: T = serde_json::from_str(&text).data(format!("parsing {}", path.display()))?;
    Ok(value)
}

fn check_schema(found: u32, path: &Path) -> CliResult<()> {
    if found != SCHEMA_VERSION {
        return Err(data_error(format!(
            "{}: schema_version {found} is not supported (expected {SCHEMA_VERSION})",
            path.display()
        )));
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> CliResult<(Vec<SynthBag>, Vec<String>)> {
    let text = std::fs::read_to_string(path).data(format!("reading dataset {}", path.display()))?;
    import_jsonl(&text)
        .map_err(|e| CliError::from(e).context(format!("reading dataset {}", path.display())))
}

/// Frame scores of one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFile {
    pub schema_version: u32,
    pub bag_id: String,
    pub hop_s: f64,
    pub class_names: Vec<String>,
    /// `frames x classes`.
    pub scores: Vec<Vec<f64>>,
}

impl ScoreFile {
    pub fn new(bag_id: &str, scores: &ScoreMatrix, class_names: &[String]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            bag_id: bag_id.to_string(),
            hop_s: scores.hop_s(),
            class_names: class_names.to_vec(),
            scores: scores.matrix().to_rows(),
        }
    }

    pub fn matrix(&self) -> CliResult<ScoreMatrix> {
        let m = Matrix::from_rows(&self.scores)?;
        if m.cols() != self.class_names.len() {
            return Err(data_error(format!(
                "{}: {} score columns for {} classes",
                self.bag_id,
                m.cols(),
                self.class_names.len()
            )));
        }
        Ok(ScoreMatrix::new(m, self.hop_s)?)
    }
}

/// Every `*.scores.json` in `dir`, ordered by bag id.
pub fn read_score_dir(dir: &Path) -> CliResult<Vec<ScoreFile>> {
    let entries =
        std::fs::read_dir(dir).data(format!("reading score directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(SCORES_SUFFIX))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(data_error(format!(
            "no *{SCORES_SUFFIX} files in {}",
            dir.display()
        )));
    }
    let mut files = Vec::with_capacity(paths.len());
    for p in paths {
        let f: ScoreFile = read_json(&p)?;
        check_schema(f.schema_version, &p)?;
        files.push(f);
    }
    let names = &files[0].class_names;
    if let Some(bad) = files.iter().find(|f| &f.class_names != names) {
        return Err(data_error(format!(
            "{}: class names differ from {}",
            bad.bag_id, files[0].bag_id
        )));
    }
    files.sort_by(|a, b| a.bag_id.cmp(&b.bag_id));
    Ok(files)
}

/// Clip-level tags per bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagFile {
    pub schema_version: u32,
    /// `model`, `oracle` or `file`.
    pub source: String,
    pub class_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    pub tags: BTreeMap<String, WeakLabels>,
}

impl TagFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let f: TagFile = read_json(path)?;
        check_schema(f.schema_version, path)?;
        if let Some((bag, t)) = f.tags.iter().find(|(_, t)| t.len() != f.class_names.len()) {
            return Err(data_error(format!(
                "{}: bag {bag} has {} tags for {} classes",
                path.display(),
                t.len(),
                f.class_names.len()
            )));
        }
        Ok(f)
    }

    pub fn get(&self, bag_id: &str) -> CliResult<&WeakLabels> {
        self.tags
            .get(bag_id)
            .ok_or_else(|| data_error(format!("no tags for bag {bag_id}")))
    }
}

/// Max-pooled clip scores per bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PooledFile {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub pooled: BTreeMap<String, Vec<f64>>,
}

/// Thresholds written by `optimize-thresholds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdFile {
    pub schema_version: u32,
    pub class_names: Vec<String>,
    pub thresholds: Vec<f64>,
    pub fitness: f64,
    pub baseline_fitness: f64,
    pub trace: Vec<f64>,
}

impl ThresholdFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let f: ThresholdFile = read_json(path)?;
        check_schema(f.schema_version, path)?;
        if f.thresholds.len() != f.class_names.len()
            || f.thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0))
        {
            return Err(data_error(format!(
                "{}: thresholds must be one value in (0, 1) per class",
                path.display()
            )));
        }
        Ok(f)
    }
}

/// Pooled scores from `path`: a `pooled.json`, or a score directory
/// (its `pooled.json` if present, otherwise recomputed from the score files).
pub fn load_pooled(path: &Path) -> CliResult<PooledFile> {
    let file = if path.is_dir() {
        path.join(POOLED_FILE)
    } else {
        path.to_path_buf()
    };
    if file.is_file() {
        let f: PooledFile = read_json(&file)?;
        check_schema(f.schema_version, &file)?;
        return Ok(f);
    }
    let scores = read_score_dir(path)?;
    let mut pooled = BTreeMap::new();
    for s in &scores {
        pooled.insert(s.bag_id.clone(), s.matrix()?.max_pooled());
    }
    Ok(PooledFile {
        schema_version: SCHEMA_VERSION,
        class_names: scores[0].class_names.clone(),
        pooled,
    })
}
