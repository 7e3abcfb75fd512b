use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wsed_core::eval::{match_events, Counts, EvalReport, MatchConfig};
use wsed_core::postprocess::{read_tsv, records_to_annotations, TsvRecord};
use wsed_core::{Annotations, EventList};

use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{data_error, CliError, CliResult, Coded};
use crate::files::{read_score_dir, write_json, ScoreFile};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference event TSV.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Predicted event TSV.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory receiving one `<class>.csv` activity curve per class,
    /// plus class_scores.tsv and per_file.tsv.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
    /// Score directory; adds the raw score to the curves and sets their time grid.
    #[arg(long, requires = "plot_data")]
    pub scores: Option<PathBuf>,
    /// Time step of the curves when no scores are given.
    #[arg(long, default_value = "0.05")]
    pub plot_hop: f64,
    /// Experiment config; only the [matching] section is read.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-file matching; results do not depend on this.
    #[arg(long, default_value = "1")]
    pub jobs: NonZeroUsize,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    matching: &'a MatchConfig,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn read_records(path: &Path) -> CliResult<Vec<TsvRecord>> {
    let text = std::fs::read_to_string(path).data(format!("reading {}", path.display()))?;
    read_tsv(&text).map_err(|e| CliError::from(e).context(format!("parsing {}", path.display())))
}

/// Labels seen in either file, sorted.
fn label_set(a: &[TsvRecord], b: &[TsvRecord]) -> Vec<String> {
    let labels: BTreeSet<&String> = a
        .iter()
        .chain(b)
        .filter_map(|r| r.event.as_ref().map(|e| &e.2))
        .collect();
    labels.into_iter().cloned().collect()
}

/// Per-file, per-class counts in file order.
fn per_file_counts(
    files: &[&String],
    reference: &Annotations,
    pred: &Annotations,
    classes: usize,
    cfg: &MatchConfig,
    jobs: usize,
) -> Vec<Vec<Counts>> {
    let empty = EventList::default();
    let count = |f: &String| {
        let mut k = vec![Counts::default(); classes];
        for (c, n) in match_events(
            reference.get(f).unwrap_or(&empty),
            pred.get(f).unwrap_or(&empty),
            cfg,
        ) {
            k[c].add(n);
        }
        k
    };
    let chunk = files.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = files
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|f| count(f)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("eval worker panicked"))
            .collect()
    })
}

fn class_rows(report: &EvalReport) -> String {
    let mut out = String::from("class\ttp\tfp\tfn\tprecision\trecall\tf_score\n");
    for c in &report.classes {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            c.name, c.counts.tp, c.counts.fp, c.counts.fn_, c.precision, c.recall, c.f_score
        );
    }
    out
}

fn per_file_rows(files: &[&String], counts: &[Vec<Counts>], names: &[String]) -> String {
    let mut out = String::from("file\ttp\tfp\tfn\tmacro_f_score\tmicro_f_score\n");
    for (f, k) in files.iter().zip(counts) {
        let r = EvalReport::from_counts(k, names);
        let mut total = Counts::default();
        k.iter().for_each(|c| total.add(*c));
        let _ = writeln!(
            out,
            "{f}\t{}\t{}\t{}\t{:.4}\t{:.4}",
            total.tp, total.fp, total.fn_, r.macro_f_score, r.micro_f_score
        );
    }
    out
}

fn active(list: Option<&EventList>, class: usize, t: f64) -> u8 {
    list.is_some_and(|l| l.of_class(class).any(|e| e.onset <= t && t < e.offset)) as u8
}

/// One CSV per class: `file,time_s,reference,predicted[,score]`, sampled at frame centres.
fn curve_csvs(
    files: &[&String],
    reference: &Annotations,
    pred: &Annotations,
    names: &[String],
    scores: Option<&[ScoreFile]>,
    hop: f64,
) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::with_capacity(names.len());
    for (c, name) in names.iter().enumerate() {
        let score_col =
            match scores {
                Some(s) => Some(s[0].class_names.iter().position(|n| n == name).ok_or_else(
                    || data_error(format!("class {name} missing from the score files")),
                )?),
                None => None,
            };
        let mut csv = String::from(if score_col.is_some() {
            "file,time_s,reference,predicted,score\n"
        } else {
            "file,time_s,reference,predicted\n"
        });
        for f in files {
            let (r, p) = (reference.get(*f), pred.get(*f));
            let file_scores = scores.and_then(|s| s.iter().find(|s| &s.bag_id == *f));
            let (step, frames) = match file_scores {
                Some(s) => (s.hop_s, s.scores.len()),
                None => {
                    let end = r
                        .into_iter()
                        .chain(p)
                        .flat_map(|l| l.events())
                        .map(|e| e.offset)
                        .fold(0.0, f64::max);
                    (hop, (end / hop).ceil() as usize)
                }
            };
            for i in 0..frames {
                let t = (i as f64 + 0.5) * step;
                let _ = write!(csv, "{f},{t:.4},{},{}", active(r, c, t), active(p, c, t));
                if let (Some(col), Some(s)) = (score_col, file_scores) {
                    let _ = write!(csv, ",{:.6}", s.scores[i][col]);
                }
                csv.push('\n');
            }
        }
        out.push((format!("{name}.csv"), csv));
    }
    Ok(out)
}

pub fn run(args: EvalArgs) -> CliResult<()> {
    if !(args.plot_hop > 0.0 && args.plot_hop.is_finite()) {
        return Err(crate::error::config_error("--plot-hop must be > 0"));
    }
    let matching = match &args.config {
        Some(p) => ExperimentConfig::load(p)?.matching,
        None => MatchConfig::default(),
    };
    let ref_records = read_records(&args.reference)?;
    let pred_records = read_records(&args.pred)?;
    let names = label_set(&ref_records, &pred_records);
    let reference = records_to_annotations(&ref_records, &names)?;
    let pred = records_to_annotations(&pred_records, &names)?;
    let files: Vec<&String> = reference
        .keys()
        .chain(pred.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let counts = per_file_counts(
        &files,
        &reference,
        &pred,
        names.len(),
        &matching,
        args.jobs.get(),
    );
    let mut totals = vec![Counts::default(); names.len()];
    for k in &counts {
        totals.iter_mut().zip(k).for_each(|(t, c)| t.add(*c));
    }
    let report = EvalReport::from_counts(&totals, &names);
    print!("{}", report.to_table());

    if let Some(dir) = &args.plot_data {
        let scores = args.scores.as_deref().map(read_score_dir).transpose()?;
        let mut outputs = curve_csvs(
            &files,
            &reference,
            &pred,
            &names,
            scores.as_deref(),
            args.plot_hop,
        )?;
        outputs.push(("class_scores.tsv".into(), class_rows(&report)));
        outputs.push((
            "per_file.tsv".into(),
            per_file_rows(&files, &counts, &names),
        ));
        for (name, text) in outputs {
            wsed_core::io::write_atomic(&dir.join(name), text.as_bytes())?;
        }
    }
    if let Some(out) = &args.out {
        let file = ReportFile {
            schema_version: SCHEMA_VERSION,
            matching: &matching,
            report: &report,
        };
        write_json(out, &file)?;
    }
    Ok(())
}
