//! Tab-separated event lists: `filename  onset  offset  event_label`, no
//! header on output, a leading `filename...` header tolerated on input. A
//! line holding only a file name declares a clip without events.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::types::{Annotations, Event};

#[derive(Debug, Clone, PartialEq)]
pub struct TsvRecord {
    pub file: String,
    pub event: Option<(f64, f64, String)>,
}

/// Renders annotations with 3-decimal times.
pub fn write_tsv(annotations: &Annotations, class_names: &[String]) -> Result<String> {
    let mut out = String::new();
    for (file, events) in annotations {
        if events.is_empty() {
            writeln!(out, "{file}").expect("string write");
            continue;
        }
        for e in events.events() {
            let label = class_names
                .get(e.class)
                .ok_or_else(|| Error::Data(format!("class index {} has no name", e.class)))?;
            writeln!(out, "{file}\t{:.3}\t{:.3}\t{label}", e.onset, e.offset)
                .expect("string write");
        }
    }
    Ok(out)
}

pub fn read_tsv(text: &str) -> Result<Vec<TsvRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || (i == 0 && line.starts_with("filename")) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid {what} {s:?}"),
            })
        };
        match fields.as_slice() {
            [file] => out.push(TsvRecord {
                file: file.to_string(),
                event: None,
            }),
            [file, on, off, label] => {
                let (on, off) = (parse(on, "onset")?, parse(off, "offset")?);
                if !(on >= 0.0 && off > on) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("invalid segment ({on}, {off})"),
                    });
                }
                out.push(TsvRecord {
                    file: file.to_string(),
                    event: Some((on, off, label.to_string())),
                });
            }
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 1 or 4 tab-separated fields, got {}", fields.len()),
                })
            }
        }
    }
    Ok(out)
}

/// Resolves labels against `class_names`; unknown labels are an error.
pub fn records_to_annotations(
    records: &[TsvRecord],
    class_names: &[String],
) -> Result<Annotations> {
    let mut ann = Annotations::new();
    for r in records {
        let entry = ann.entry(r.file.clone()).or_default();
        if let Some((on, off, label)) = &r.event {
            let class = class_names
                .iter()
                .position(|n| n == label)
                .ok_or_else(|| Error::Data(format!("unknown event label {label:?}")))?;
            entry.push(Event::new(*on, *off, class));
        }
    }
    Ok(ann)
}
