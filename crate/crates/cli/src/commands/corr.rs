use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use wsed_core::eval::{correlation_matrix, mean_positive_correlation};

use crate::config::SCHEMA_VERSION;
use crate::error::CliResult;
use crate::files::{read_score_dir, write_json};

#[derive(Debug, Args)]
pub struct CorrArgs {
    /// Directory of <bag_id>.scores.json files.
    #[arg(long)]
    pub scores: PathBuf,
    /// Also print the mean of the strictly positive off-diagonal entries.
    #[arg(long)]
    pub mean_positive: bool,
    /// JSON output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CorrFile {
    schema_version: u32,
    class_names: Vec<String>,
    matrix: Vec<Vec<f64>>,
    /// Classes whose concatenated curve is constant (correlations set to 0).
    constant: Vec<bool>,
    mean_positive: f64,
}

pub fn run(args: CorrArgs) -> CliResult<()> {
    let files = read_score_dir(&args.scores)?;
    let scores = files
        .iter()
        .map(|f| f.matrix())
        .collect::<CliResult<Vec<_>>>()?;
    let m = correlation_matrix(&scores)?;
    let names = files[0].class_names.clone();

    let mut table = String::from("class");
    for n in &names {
        let _ = write!(table, "\t{n}");
    }
    table.push('\n');
    for (i, n) in names.iter().enumerate() {
        table.push_str(n);
        for j in 0..m.classes() {
            let _ = write!(table, "\t{:+.4}", m.get(i, j));
        }
        table.push('\n');
    }
    print!("{table}");
    for (n, _) in names.iter().zip(&m.constant).filter(|(_, c)| **c) {
        eprintln!(
            "warning: class {n} has a constant score curve; its correlations are reported as 0"
        );
    }

    let mean_positive = mean_positive_correlation(&m);
    if args.mean_positive {
        println!("mean_positive_correlation\t{mean_positive:.6}");
    }
    if let Some(out) = &args.out {
        let file = CorrFile {
            schema_version: SCHEMA_VERSION,
            class_names: names,
            matrix: m.values.to_rows(),
            constant: m.constant.clone(),
            mean_positive,
        };
        write_json(out, &file)?;
    }
    Ok(())
}
