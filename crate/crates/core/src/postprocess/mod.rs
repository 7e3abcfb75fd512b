//! Score matrix to event list: tag masking, per-curve rescaling to `[0, 1]`,
//! centred moving-average smoothing, thresholding and gap merging.

mod tsv;

pub use tsv::{read_tsv, records_to_annotations, write_tsv, TsvRecord};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Event, EventList, ScoreMatrix, WeakLabels};

/// Slack for comparing frame-derived times against the merge gap.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocessConfig {
    #[serde(default = "PostprocessConfig::default_window")]
    pub smooth_window: usize,
    #[serde(default = "PostprocessConfig::default_threshold")]
    pub binarize_threshold: f64,
    #[serde(default = "PostprocessConfig::default_gap")]
    pub merge_gap_s: f64,
    /// Frame hop override; when unset the score matrix's own hop is used.
    #[serde(default)]
    pub hop_s: Option<f64>,
}

impl PostprocessConfig {
    /// Frame hop of a 10 s clip analysed into 431 frames.
    pub const REFERENCE_HOP_S: f64 = 10.0 / 431.0;

    fn default_window() -> usize {
        19
    }
    fn default_threshold() -> f64 {
        0.03
    }
    fn default_gap() -> f64 {
        0.2
    }

    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "postprocess.smooth_window must be odd and >= 1, got {}",
                self.smooth_window
            )));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config(format!(
                "postprocess.binarize_threshold must be in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        if !(self.merge_gap_s >= 0.0) {
            return Err(Error::Config("postprocess.merge_gap_s must be >= 0".into()));
        }
        if let Some(h) = self.hop_s {
            if !(h > 0.0) {
                return Err(Error::Config("postprocess.hop_s must be > 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            smooth_window: Self::default_window(),
            binarize_threshold: Self::default_threshold(),
            merge_gap_s: Self::default_gap(),
            hop_s: None,
        }
    }
}

/// Zeroes the columns of classes whose tag is 0.
pub fn mask_by_tags(scores: &ScoreMatrix, tags: &WeakLabels) -> Result<ScoreMatrix> {
    if tags.len() != scores.classes() {
        return Err(Error::shape("mask_by_tags", scores.classes(), tags.len()));
    }
    let mut m = scores.matrix().clone();
    for c in (0..tags.len()).filter(|&c| !tags.get(c)) {
        for t in 0..m.rows() {
            m.set(t, c, 0.0);
        }
    }
    ScoreMatrix::new(m, scores.hop_s())
}

/// Min-max rescaling to `[0, 1]`. A constant curve maps to all zeros.
pub fn rescale(curve: &[f64]) -> Vec<f64> {
    let lo = curve.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; curve.len()];
    }
    curve.iter().map(|v| (v - lo) / span).collect()
}

/// Centred moving average; near the edges only the in-range part of the
/// window is averaged.
pub fn smooth(curve: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "smoothing window must be odd and >= 1, got {window}"
        )));
    }
    let half = window / 2;
    let n = curve.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(n - 1);
            // mean as offset from the window minimum keeps constant runs exact
            let win = &curve[lo..=hi];
            let base = win.iter().copied().fold(f64::INFINITY, f64::min);
            let dev: f64 = win.iter().map(|v| v - base).sum();
            base + dev / (hi - lo + 1) as f64
        })
        .collect())
}

/// Maximal runs of frames with value strictly above `threshold`, as
/// `(first * hop, (last + 1) * hop)` segments.
pub fn binarize_and_segment(curve: &[f64], threshold: f64, hop_s: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &v) in curve.iter().enumerate() {
        match (v > threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s as f64 * hop_s, t as f64 * hop_s));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s as f64 * hop_s, curve.len() as f64 * hop_s));
    }
    out
}

/// Fuses neighbours separated by less than `gap_s`. Input must be sorted by onset.
pub fn merge_gaps(segments: &[(f64, f64)], gap_s: f64) -> Result<Vec<(f64, f64)>> {
    for (i, w) in segments.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            return Err(Error::Data(format!(
                "segments not sorted by onset at index {}: {} after {}",
                i + 1,
                w[1].0,
                w[0].0
            )));
        }
    }
    if let Some((on, off)) = segments.iter().find(|(on, off)| !(on <= off)) {
        return Err(Error::Data(format!(
            "segment ({on}, {off}) has onset after offset"
        )));
    }
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(segments.len());
    for &(on, off) in segments {
        match out.last_mut() {
            Some(last) if on - last.1 < gap_s - TIME_EPS => last.1 = last.1.max(off),
            _ => out.push((on, off)),
        }
    }
    Ok(out)
}

/// Full chain for one clip.
pub fn pipeline(
    scores: &ScoreMatrix,
    tags: &WeakLabels,
    cfg: &PostprocessConfig,
) -> Result<EventList> {
    cfg.validate()?;
    let masked = mask_by_tags(scores, tags)?;
    let hop = cfg.hop_s.unwrap_or(scores.hop_s());
    let duration = scores.frames() as f64 * hop;
    let mut events = Vec::new();
    for c in 0..masked.classes() {
        if !tags.get(c) {
            continue;
        }
        let curve = smooth(&rescale(&masked.curve(c)), cfg.smooth_window)?;
        let segs = binarize_and_segment(&curve, cfg.binarize_threshold, hop);
        for (on, off) in merge_gaps(&segs, cfg.merge_gap_s)? {
            events.push(Event::new(on.max(0.0), off.min(duration), c));
        }
    }
    Ok(EventList::new(events))
}
