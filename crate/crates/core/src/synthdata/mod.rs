//! Seeded synthetic bags with controllable class co-occurrence.
//!
//! Each bag is `frames` feature vectors. Active event frames carry the sum of
//! `amplitude * prototype` over the classes active there; every frame carries
//! isotropic Gaussian noise. Weak labels are derived from the placed events.

mod io;

pub use io::{export_jsonl, import_jsonl, DATASET_FORMAT, DATASET_VERSION};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::types::{Event, EventList, FrameFeatures, WeakLabels};

/// Shortest event a short class may produce.
pub const MIN_SHORT_FRAMES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationModel {
    /// 1 to `max_events` events, each lasting a uniform fraction of the clip.
    Short {
        min_fraction: f64,
        max_fraction: f64,
        #[serde(default = "default_max_events")]
        max_events: usize,
    },
    /// One event covering the whole clip.
    FullLength,
}

fn default_max_events() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Drawn at random from `{-1, +1}^F` when absent.
    #[serde(default)]
    pub prototype: Option<Vec<f64>>,
    pub duration: DurationModel,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Probability the class is drawn before co-occurrence is applied.
    pub base_rate: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

/// `p[a][b]`: probability that `b` is added once `a` has been drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CooccurrenceSpec(pub Vec<Vec<f64>>);

impl CooccurrenceSpec {
    pub fn zeros(classes: usize) -> Self {
        Self(vec![vec![0.0; classes]; classes])
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.0[a][b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub classes: Vec<ClassSpec>,
    pub cooccurrence: CooccurrenceSpec,
    pub frames: usize,
    pub hop_s: f64,
    pub feature_dim: usize,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    /// Named splits and their bag counts.
    #[serde(default)]
    pub splits: Vec<Split>,
}

fn default_sigma() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub name: String,
    pub bags: usize,
}

impl DatasetSpec {
    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.classes.len();
        if c == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if self.frames == 0 || self.feature_dim == 0 {
            return Err(Error::Config("frames and feature_dim must be >= 1".into()));
        }
        if !(self.hop_s > 0.0 && self.hop_s.is_finite()) {
            return Err(Error::Config(format!(
                "hop_s must be > 0, got {}",
                self.hop_s
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if self.cooccurrence.0.len() != c || self.cooccurrence.0.iter().any(|r| r.len() != c) {
            return Err(Error::Config(format!("cooccurrence must be {c}x{c}")));
        }
        if self
            .cooccurrence
            .0
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config(
                "cooccurrence entries must lie in [0, 1]".into(),
            ));
        }
        let mut names = std::collections::BTreeSet::new();
        for cls in &self.classes {
            if !names.insert(cls.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate class name {:?}",
                    cls.name
                )));
            }
            if !(0.0..=1.0).contains(&cls.base_rate) {
                return Err(Error::Config(format!(
                    "{}: base_rate must lie in [0, 1]",
                    cls.name
                )));
            }
            if !cls.amplitude.is_finite() {
                return Err(Error::Config(format!(
                    "{}: amplitude must be finite",
                    cls.name
                )));
            }
            if let Some(p) = &cls.prototype {
                if p.is_empty() {
                    return Err(Error::Config(format!("{}: empty prototype", cls.name)));
                }
                if p.len() != self.feature_dim {
                    return Err(Error::Config(format!(
                        "{}: prototype has {} entries, feature_dim is {}",
                        cls.name,
                        p.len(),
                        self.feature_dim
                    )));
                }
            }
            if let DurationModel::Short {
                min_fraction,
                max_fraction,
                max_events,
            } = cls.duration
            {
                if !(min_fraction > 0.0 && min_fraction <= max_fraction && max_fraction <= 1.0) {
                    return Err(Error::Config(format!(
                        "{}: need 0 < min_fraction <= max_fraction <= 1",
                        cls.name
                    )));
                }
                if max_events == 0 {
                    return Err(Error::Config(format!(
                        "{}: max_events must be >= 1",
                        cls.name
                    )));
                }
            }
        }
        if self.feature_dim < c {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {c} linearly independent prototypes",
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Spec with every prototype filled in; fails if they are linearly dependent.
    pub fn resolve(&self, seed: u64) -> Result<DatasetSpec> {
        self.validate()?;
        let mut out = self.clone();
        let mut rng = rng::stream(seed, &[0x9207]);
        for _attempt in 0..64 {
            for (c, cls) in out.classes.iter_mut().enumerate() {
                if self.classes[c].prototype.is_none() {
                    cls.prototype = Some(
                        (0..self.feature_dim)
                            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                            .collect(),
                    );
                }
            }
            if rank(&out.prototypes()) == out.classes.len() {
                return Ok(out);
            }
            if self.classes.iter().all(|c| c.prototype.is_some()) {
                break;
            }
        }
        Err(Error::Config(
            "class prototypes are not linearly independent".into(),
        ))
    }

    fn prototypes(&self) -> Vec<Vec<f64>> {
        self.classes
            .iter()
            .map(|c| c.prototype.clone().unwrap_or_default())
            .collect()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames as f64 * self.hop_s
    }
}

/// Row rank by Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
pub fn rank(rows: &[Vec<f64>]) -> usize {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let cols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for col in 0..cols {
        if r == m.len() {
            break;
        }
        let pivot = (r..m.len())
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        if m[pivot][col].abs() < 1e-9 {
            continue;
        }
        m.swap(r, pivot);
        for i in r + 1..m.len() {
            let f = m[i][col] / m[r][col];
            for j in col..cols {
                m[i][j] -= f * m[r][j];
            }
        }
        r += 1;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBag {
    pub bag_id: String,
    pub features: FrameFeatures,
    pub weak: WeakLabels,
    pub strong: EventList,
}

impl SynthBag {
    /// Frame-level ground truth: `frames x classes` of 0/1.
    pub fn frame_targets(&self, classes: usize) -> Matrix {
        let hop = self.features.hop_s();
        let mut m = Matrix::zeros(self.features.frames(), classes);
        for e in self.strong.events() {
            let a = (e.onset / hop).round() as usize;
            let b = ((e.offset / hop).round() as usize).min(m.rows());
            for t in a..b {
                m.set(t, e.class, 1.0);
            }
        }
        m
    }
}

/// Realized label statistics of a generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub bags: usize,
    pub class_names: Vec<String>,
    /// Bags containing each class.
    pub class_counts: Vec<usize>,
    /// Bags containing both classes.
    pub pair_counts: Vec<Vec<usize>>,
    /// `cooccurrence[a][b]` = P(b present | a present); 0 when `a` never occurs.
    pub cooccurrence: Vec<Vec<f64>>,
    pub events: usize,
}

impl Manifest {
    pub fn from_bags(bags: &[SynthBag], class_names: &[String], seed: u64) -> Self {
        let c = class_names.len();
        let mut class_counts = vec![0; c];
        let mut pair_counts = vec![vec![0; c]; c];
        for b in bags {
            for a in b.weak.positives() {
                class_counts[a] += 1;
                for o in b.weak.positives() {
                    pair_counts[a][o] += 1;
                }
            }
        }
        let cooccurrence = (0..c)
            .map(|a| {
                (0..c)
                    .map(|o| {
                        if class_counts[a] == 0 {
                            0.0
                        } else {
                            pair_counts[a][o] as f64 / class_counts[a] as f64
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            format: "wsed-manifest".into(),
            version: 1,
            seed,
            bags: bags.len(),
            class_names: class_names.to_vec(),
            class_counts,
            pair_counts,
            cooccurrence,
            events: bags.iter().map(|b| b.strong.len()).sum(),
        }
    }
}

/// `m` bags named `{prefix}{index:05}`; bag `i` depends only on `(seed, i)`.
pub fn generate(spec: &DatasetSpec, m: usize, seed: u64) -> Result<Vec<SynthBag>> {
    generate_named(spec, m, seed, "bag")
}

pub fn generate_named(
    spec: &DatasetSpec,
    m: usize,
    seed: u64,
    prefix: &str,
) -> Result<Vec<SynthBag>> {
    if m == 0 {
        return Err(Error::Config("bag count must be >= 1".into()));
    }
    let spec = spec.resolve(seed)?;
    (0..m)
        .map(|i| {
            generate_bag(
                &spec,
                format!("{prefix}{i:05}"),
                &mut rng::stream(seed, &[1, i as u64]),
            )
        })
        .collect()
}

fn draw_classes(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let c = spec.classes.len();
    let mut base: Vec<bool> = spec
        .classes
        .iter()
        .map(|k| rng.random::<f64>() < k.base_rate)
        .collect();
    if !base.iter().any(|b| *b) {
        let total: f64 = spec.classes.iter().map(|k| k.base_rate).sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut k = c - 1;
            for (i, cls) in spec.classes.iter().enumerate() {
                if u < cls.base_rate {
                    k = i;
                    break;
                }
                u -= cls.base_rate;
            }
            k
        } else {
            *(0..c).collect::<Vec<_>>().choose(rng).unwrap()
        };
        base[pick] = true;
    }
    let mut present = base.clone();
    for (a, &drawn) in base.iter().enumerate() {
        if !drawn {
            continue;
        }
        for (b, on) in present.iter_mut().enumerate() {
            // one draw per ordered pair keeps the stream layout independent of outcomes
            let u = rng.random::<f64>();
            if b != a && u < spec.cooccurrence.get(a, b) {
                *on = true;
            }
        }
    }
    present
}

fn place_events(spec: &DatasetSpec, class: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let t = spec.frames;
    match spec.classes[class].duration {
        DurationModel::FullLength => vec![(0, t)],
        DurationModel::Short {
            min_fraction,
            max_fraction,
            max_events,
        } => {
            let n = rng.random_range(1..=max_events);
            let mut spans: Vec<(usize, usize)> = Vec::with_capacity(n);
            for _ in 0..n {
                for _try in 0..50 {
                    let frac = rng.random_range(min_fraction..=max_fraction);
                    let len =
                        ((frac * t as f64).round() as usize).clamp(MIN_SHORT_FRAMES.min(t), t);
                    let start = rng.random_range(0..=t - len);
                    let end = start + len;
                    // at least one silent frame between events of the same class
                    if spans.iter().all(|&(a, b)| end < a || start > b) {
                        spans.push((start, end));
                        break;
                    }
                }
            }
            spans.sort_unstable();
            spans
        }
    }
}

fn generate_bag(spec: &DatasetSpec, bag_id: String, rng: &mut ChaCha8Rng) -> Result<SynthBag> {
    let c = spec.classes.len();
    let present = draw_classes(spec, rng);
    let mut values = Matrix::zeros(spec.frames, spec.feature_dim);
    let mut events = Vec::new();
    for (k, on) in present.iter().enumerate() {
        if !on {
            continue;
        }
        let cls = &spec.classes[k];
        let proto = cls.prototype.as_ref().expect("resolved spec");
        for (a, b) in place_events(spec, k, rng) {
            for t in a..b {
                for (v, p) in values.row_mut(t).iter_mut().zip(proto) {
                    *v += cls.amplitude * p;
                }
            }
            events.push(Event::new(a as f64 * spec.hop_s, b as f64 * spec.hop_s, k));
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        for v in values.as_mut_slice() {
            *v += noise.sample(rng);
        }
    }
    let strong = EventList::new(events);
    let mut weak = WeakLabels::zeros(c);
    for k in strong.classes() {
        weak.set(k, true);
    }
    Ok(SynthBag {
        bag_id,
        features: FrameFeatures::new(values, spec.hop_s)?,
        weak,
        strong,
    })
}

/// A generated dataset with its splits in spec order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub splits: Vec<(String, Vec<SynthBag>)>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[SynthBag]> {
        self.splits
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    pub fn manifest(&self, name: &str, seed: u64) -> Option<Manifest> {
        self.split(name)
            .map(|b| Manifest::from_bags(b, &self.spec.class_names(), seed))
    }
}

/// Generates every split of `spec`; split `i` uses a seed derived from `(seed, i)`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    if spec.splits.is_empty() {
        return Err(Error::Config("dataset spec has no splits".into()));
    }
    let resolved = spec.resolve(seed)?;
    let mut splits = Vec::with_capacity(spec.splits.len());
    for (i, s) in spec.splits.iter().enumerate() {
        let split_seed = rng::derive(seed, &[2, i as u64]);
        let bags = generate_named(&resolved, s.bags, split_seed, &format!("{}_", s.name))?;
        splits.push((s.name.clone(), bags));
    }
    Ok(Dataset {
        spec: resolved,
        splits,
    })
}

/// Sylvester Hadamard matrix of order `n` (a power of two).
fn hadamard(n: usize) -> Vec<Vec<f64>> {
    let mut h = vec![vec![1.0]];
    while h.len() < n {
        let k = h.len();
        let mut next = vec![vec![0.0; 2 * k]; 2 * k];
        for i in 0..k {
            for j in 0..k {
                next[i][j] = h[i][j];
                next[i][j + k] = h[i][j];
                next[i + k][j] = h[i][j];
                next[i + k][j + k] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

pub const CONFOUND_SHORT: usize = 0;
pub const CONFOUND_LONG: usize = 1;
pub const CONFOUND_SPEECH: usize = 2;
pub const CONFOUND_INDEPENDENT: usize = 3;

/// Four classes: a short class almost always accompanied by a full-length
/// class, a broadly co-occurring speech-like class and an independent class.
/// Prototypes are orthogonal rows of an 8x8 Hadamard matrix.
pub fn confound_spec() -> DatasetSpec {
    let h = hadamard(8);
    let short = |name: &str, row: usize, base_rate: f64| ClassSpec {
        name: name.into(),
        prototype: Some(h[row].clone()),
        duration: DurationModel::Short {
            min_fraction: 0.03,
            max_fraction: 0.08,
            max_events: 3,
        },
        amplitude: 1.0,
        base_rate,
    };
    let classes = vec![
        short("short_a", 1, 0.35),
        ClassSpec {
            name: "long_b".into(),
            prototype: Some(h[2].clone()),
            duration: DurationModel::FullLength,
            amplitude: 1.0,
            base_rate: 0.1,
        },
        ClassSpec {
            name: "speech_s".into(),
            prototype: Some(h[3].clone()),
            duration: DurationModel::Short {
                min_fraction: 0.1,
                max_fraction: 0.3,
                max_events: 3,
            },
            amplitude: 1.0,
            base_rate: 0.4,
        },
        short("indep_d", 4, 0.3),
    ];
    let mut p = CooccurrenceSpec::zeros(4);
    p.0[CONFOUND_SHORT][CONFOUND_LONG] = 0.9;
    for a in [CONFOUND_SHORT, CONFOUND_LONG, CONFOUND_INDEPENDENT] {
        p.0[a][CONFOUND_SPEECH] = 0.5;
    }
    DatasetSpec {
        classes,
        cooccurrence: p,
        frames: 100,
        hop_s: 0.1,
        feature_dim: 8,
        noise_sigma: 0.3,
        splits: vec![
            Split {
                name: "train".into(),
                bags: 400,
            },
            Split {
                name: "test".into(),
                bags: 100,
            },
        ],
    }
}

pub fn confound_scenario(seed: u64) -> Dataset {
    generate_dataset(&confound_spec(), seed).expect("built-in scenario is valid")
}
