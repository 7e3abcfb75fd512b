//! Event-based and tagging F-scores, Pearson correlation between class score
//! curves, and overlap-duration accounting.

mod correlation;
mod matching;
mod overlap;

pub use correlation::{correlation_matrix, mean_positive_correlation, pearson, CorrelationMatrix};
pub use matching::{match_class, match_events, MatchConfig, MatchStrategy};
pub use overlap::{overlap_duration, total_overlap_duration};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotations, EventList, WeakLabels};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Precision, recall and F in percent; all zero when there is no true positive.
    pub fn scores(&self) -> (f64, f64, f64) {
        if self.tp == 0 {
            return (0.0, 0.0, 0.0);
        }
        let p = self.tp as f64 / (self.tp + self.fp) as f64;
        let r = self.tp as f64 / (self.tp + self.fn_) as f64;
        (100.0 * p, 100.0 * r, 100.0 * 2.0 * p * r / (p + r))
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: usize,
    pub name: String,
    #[serde(flatten)]
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Per-class and macro scores. Percentages throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassScore>,
    /// Unweighted mean over classes that occur in the reference or the predictions.
    pub macro_f_score: f64,
    pub micro_f_score: f64,
}

impl EvalReport {
    /// Scores from per-class counts; `counts[c]` belongs to `class_names[c]`.
    pub fn from_counts(counts: &[Counts], class_names: &[String]) -> Self {
        let mut classes = Vec::with_capacity(counts.len());
        let mut total = Counts::default();
        let mut sum = 0.0;
        let mut n = 0usize;
        for (c, k) in counts.iter().enumerate() {
            let (p, r, f) = k.scores();
            total.add(*k);
            if !k.is_empty() {
                sum += f;
                n += 1;
            }
            classes.push(ClassScore {
                class: c,
                name: class_names.get(c).cloned().unwrap_or_else(|| c.to_string()),
                counts: *k,
                precision: p,
                recall: r,
                f_score: f,
            });
        }
        Self {
            classes,
            macro_f_score: if n == 0 { 0.0 } else { sum / n as f64 },
            micro_f_score: total.scores().2,
        }
    }

    pub fn class(&self, c: usize) -> &ClassScore {
        &self.classes[c]
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = format!(
            "{:<width$}  {:>5} {:>5} {:>5}  {:>7} {:>7} {:>7}\n",
            "class", "TP", "FP", "FN", "P(%)", "R(%)", "F(%)"
        );
        for c in &self.classes {
            s.push_str(&format!(
                "{:<width$}  {:>5} {:>5} {:>5}  {:>7.2} {:>7.2} {:>7.2}\n",
                c.name, c.counts.tp, c.counts.fp, c.counts.fn_, c.precision, c.recall, c.f_score
            ));
        }
        s.push_str(&format!(
            "{:<width$}  {:>41.2}\n",
            "macro F", self.macro_f_score
        ));
        s.push_str(&format!(
            "{:<width$}  {:>41.2}\n",
            "micro F", self.micro_f_score
        ));
        s
    }
}

fn class_count(class_names: &[String], lists: &[&EventList]) -> usize {
    let max_seen = lists
        .iter()
        .flat_map(|l| l.events().iter().map(|e| e.class + 1))
        .max()
        .unwrap_or(0);
    class_names.len().max(max_seen)
}

/// Event-based scores accumulated over all clips of `reference` and `predicted`.
pub fn event_f_score(
    reference: &Annotations,
    predicted: &Annotations,
    class_names: &[String],
    cfg: &MatchConfig,
) -> EvalReport {
    let empty = EventList::default();
    let lists: Vec<&EventList> = reference.values().chain(predicted.values()).collect();
    let n = class_count(class_names, &lists);
    let mut counts = vec![Counts::default(); n];
    let files: std::collections::BTreeSet<&String> =
        reference.keys().chain(predicted.keys()).collect();
    for f in files {
        let r = reference.get(f).unwrap_or(&empty);
        let p = predicted.get(f).unwrap_or(&empty);
        for (c, k) in match_events(r, p, cfg) {
            counts[c].add(k);
        }
    }
    EvalReport::from_counts(&counts, class_names)
}

/// Event-based scores for a single clip.
pub fn event_f_score_clip(
    reference: &EventList,
    predicted: &EventList,
    class_names: &[String],
    cfg: &MatchConfig,
) -> EvalReport {
    let n = class_count(class_names, &[reference, predicted]);
    let mut counts = vec![Counts::default(); n];
    for (c, k) in match_events(reference, predicted, cfg) {
        counts[c].add(k);
    }
    EvalReport::from_counts(&counts, class_names)
}

/// Multi-label tagging scores over files.
pub fn tagging_f_score(
    reference: &[WeakLabels],
    predicted: &[WeakLabels],
    class_names: &[String],
) -> Result<EvalReport> {
    if reference.len() != predicted.len() {
        return Err(Error::shape(
            "tagging_f_score",
            reference.len(),
            predicted.len(),
        ));
    }
    let n = reference.first().map_or(class_names.len(), WeakLabels::len);
    let mut counts = vec![Counts::default(); n];
    for (r, p) in reference.iter().zip(predicted) {
        if r.len() != n || p.len() != n {
            return Err(Error::shape(
                "tagging_f_score",
                n,
                format!("{}/{}", r.len(), p.len()),
            ));
        }
        for (c, k) in counts.iter_mut().enumerate() {
            match (r.get(c), p.get(c)) {
                (true, true) => k.tp += 1,
                (false, true) => k.fp += 1,
                (true, false) => k.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(EvalReport::from_counts(&counts, class_names))
}
