//! Domain types shared across the pipeline: bags of frame features, frame
//! score matrices, weak (clip-level) labels and strong (timed) events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A bag: `T` frames of `F`-dimensional features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    values: Matrix,
    frame_hop_s: f64,
}

impl FrameFeatures {
    pub fn new(values: Matrix, frame_hop_s: f64) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Data(format!(
                "bag must have T >= 1 and F >= 1, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !(frame_hop_s > 0.0 && frame_hop_s.is_finite()) {
            return Err(Error::Data(format!(
                "frame hop must be > 0, got {frame_hop_s}"
            )));
        }
        if !values.is_finite() {
            return Err(Error::Data("bag contains non-finite feature values".into()));
        }
        Ok(Self {
            values,
            frame_hop_s,
        })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 * self.frame_hop_s
    }
}

/// `T x C` per-frame class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    scores: Matrix,
    frame_hop_s: f64,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, frame_hop_s: f64) -> Result<Self> {
        if let Some(v) = scores.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("score {v} outside [0, 1]")));
        }
        if !(frame_hop_s > 0.0 && frame_hop_s.is_finite()) {
            return Err(Error::Data(format!(
                "frame hop must be > 0, got {frame_hop_s}"
            )));
        }
        Ok(Self {
            scores,
            frame_hop_s,
        })
    }

    pub(crate) fn new_unchecked(scores: Matrix, frame_hop_s: f64) -> Self {
        Self {
            scores,
            frame_hop_s,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.scores
    }

    pub fn into_matrix(self) -> Matrix {
        self.scores
    }

    pub fn frames(&self) -> usize {
        self.scores.rows()
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }

    pub fn hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn curve(&self, class: usize) -> Vec<f64> {
        self.scores.column(class)
    }

    /// Clip-level scores by max pooling over frames.
    pub fn max_pooled(&self) -> Vec<f64> {
        (0..self.classes())
            .map(|c| {
                (0..self.frames())
                    .map(|t| self.scores.get(t, c))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }
}

/// Clip-level binary tags, one per class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct WeakLabels(Vec<bool>);

impl WeakLabels {
    pub fn new(tags: Vec<bool>) -> Self {
        Self(tags)
    }

    pub fn zeros(classes: usize) -> Self {
        Self(vec![false; classes])
    }

    pub fn ones(classes: usize) -> Self {
        Self(vec![true; classes])
    }

    pub fn from_slice(tags: &[u8]) -> Result<Self> {
        tags.iter()
            .map(|&t| match t {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Data(format!(
                    "weak label entry must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, class: usize) -> bool {
        self.0[class]
    }

    #[inline]
    pub fn value(&self, class: usize) -> f64 {
        if self.0[class] {
            1.0
        } else {
            0.0
        }
    }

    pub fn set(&mut self, class: usize, on: bool) {
        self.0[class] = on;
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(c, _)| c)
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&t| t).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

impl TryFrom<Vec<u8>> for WeakLabels {
    type Error = Error;

    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::from_slice(&v)
    }
}

impl From<WeakLabels> for Vec<u8> {
    fn from(w: WeakLabels) -> Self {
        w.0.into_iter().map(u8::from).collect()
    }
}

/// A timed event of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub onset: f64,
    pub offset: f64,
    pub class: usize,
}

impl Event {
    pub fn new(onset: f64, offset: f64, class: usize) -> Self {
        Self {
            onset,
            offset,
            class,
        }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Events of a single clip, kept sorted by `(class, onset)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    events: Vec<Event>,
}

impl EventList {
    pub fn new(mut events: Vec<Event>) -> Self {
        sort_events(&mut events);
        Self { events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
        sort_events(&mut self.events);
    }

    pub fn extend(&mut self, events: impl IntoIterator<Item = Event>) {
        self.events.extend(events);
        sort_events(&mut self.events);
    }

    pub fn of_class(&self, class: usize) -> impl Iterator<Item = &Event> + '_ {
        self.events.iter().filter(move |e| e.class == class)
    }

    pub fn classes(&self) -> std::collections::BTreeSet<usize> {
        self.events.iter().map(|e| e.class).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.events.iter().map(Event::duration).sum()
    }

    /// Checks `0 <= onset < offset <= clip_duration` for every event.
    pub fn validate(&self, clip_duration: f64) -> Result<()> {
        for e in &self.events {
            if !(e.onset >= 0.0 && e.onset < e.offset && e.offset <= clip_duration + 1e-9) {
                return Err(Error::Data(format!(
                    "event ({}, {}, class {}) outside [0, {clip_duration}] or empty",
                    e.onset, e.offset, e.class
                )));
            }
        }
        Ok(())
    }
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.class
            .cmp(&b.class)
            .then(a.onset.total_cmp(&b.onset))
            .then(a.offset.total_cmp(&b.offset))
    });
}

/// Event lists keyed by clip name.
pub type Annotations = BTreeMap<String, EventList>;
