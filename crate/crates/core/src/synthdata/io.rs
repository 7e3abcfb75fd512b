//! Line-delimited JSON: a header line, then one record per bag.

use serde::{Deserialize, Serialize};

use super::SynthBag;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{Event, EventList, FrameFeatures, WeakLabels};

pub const DATASET_FORMAT: &str = "wsed-bags";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    bags: usize,
    class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    bag_id: String,
    frames: usize,
    dim: usize,
    hop_s: f64,
    features: Vec<Vec<f64>>,
    weak: WeakLabels,
    events: Vec<Event>,
}

/// An empty bag list exports to an empty string.
pub fn export_jsonl(bags: &[SynthBag], class_names: &[String]) -> Result<String> {
    if bags.is_empty() {
        return Ok(String::new());
    }
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        bags: bags.len(),
        class_names: class_names.to_vec(),
    };
    let mut out = serde_json::to_string(&header).map_err(|e| Error::Data(e.to_string()))?;
    out.push('\n');
    for b in bags {
        let rec = Record {
            bag_id: b.bag_id.clone(),
            frames: b.features.frames(),
            dim: b.features.dim(),
            hop_s: b.features.hop_s(),
            features: b.features.values().to_rows(),
            weak: b.weak.clone(),
            events: b.strong.events().to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Inverse of [`export_jsonl`]; returns the bags and the class names.
pub fn import_jsonl(text: &str) -> Result<(Vec<SynthBag>, Vec<String>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((hl, header)) = lines.next() else {
        return Ok((Vec::new(), Vec::new()));
    };
    let header: Header =
        serde_json::from_str(header).map_err(|e| parse_err(hl + 1, e.to_string()))?;
    if header.format != DATASET_FORMAT {
        return Err(parse_err(
            hl + 1,
            format!("unexpected format {:?}", header.format),
        ));
    }
    if header.version != DATASET_VERSION {
        return Err(parse_err(
            hl + 1,
            format!("unsupported version {}", header.version),
        ));
    }
    let classes = header.class_names.len();
    let mut bags = Vec::with_capacity(header.bags);
    let mut last_line = hl + 1;
    for (i, line) in lines {
        let n = i + 1;
        last_line = n;
        let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(n, e.to_string()))?;
        if rec.features.len() != rec.frames || rec.features.iter().any(|r| r.len() != rec.dim) {
            return Err(parse_err(
                n,
                format!("features are not {}x{}", rec.frames, rec.dim),
            ));
        }
        if rec.weak.len() != classes {
            return Err(parse_err(
                n,
                format!(
                    "weak labels have {} entries, expected {classes}",
                    rec.weak.len()
                ),
            ));
        }
        let values = Matrix::from_rows(&rec.features).map_err(|e| parse_err(n, e.to_string()))?;
        let features =
            FrameFeatures::new(values, rec.hop_s).map_err(|e| parse_err(n, e.to_string()))?;
        let strong = EventList::new(rec.events);
        strong
            .validate(features.duration_s())
            .map_err(|e| parse_err(n, e.to_string()))?;
        if strong.events().iter().any(|e| e.class >= classes) {
            return Err(parse_err(n, "event class out of range"));
        }
        bags.push(SynthBag {
            bag_id: rec.bag_id,
            features,
            weak: rec.weak,
            strong,
        });
    }
    if bags.len() != header.bags {
        return Err(parse_err(
            last_line + 1,
            format!(
                "expected {} bags, found {} (truncated file?)",
                header.bags,
                bags.len()
            ),
        ));
    }
    Ok((bags, header.class_names))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{confound_spec, generate};

    fn sample() -> (Vec<SynthBag>, Vec<String>) {
        let spec = confound_spec();
        (generate(&spec, 5, 1).unwrap(), spec.class_names())
    }

    #[test]
    fn round_trip() {
        let (bags, names) = sample();
        let text = export_jsonl(&bags, &names).unwrap();
        let (back, back_names) = import_jsonl(&text).unwrap();
        assert_eq!(back, bags);
        assert_eq!(back_names, names);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (bags, names) = sample();
        let text = export_jsonl(&bags, &names).unwrap();
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        match import_jsonl(&cut) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        // a line cut mid-record
        let half = &text[..text.len() - 40];
        assert!(matches!(
            import_jsonl(half),
            Err(Error::Parse { line: 6, .. })
        ));
    }

    #[test]
    fn empty_list() {
        let text = export_jsonl(&[], &[]).unwrap();
        assert!(text.is_empty());
        assert!(import_jsonl(&text).unwrap().0.is_empty());
    }

    #[test]
    fn malformed_line_reports_number() {
        let (bags, names) = sample();
        let mut lines: Vec<String> = export_jsonl(&bags, &names)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[2] = "{not json".into();
        assert!(matches!(
            import_jsonl(&lines.join("\n")),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
