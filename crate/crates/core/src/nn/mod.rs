//! Frame-scoring network: a per-frame dense stack (ReLU or GLU), one gated
//! recurrent layer (optionally bidirectional) and a time-distributed sigmoid
//! head producing a `T x C` score matrix.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] maps named blocks
//! onto it so the optimizer, gradient checker and checkpoint code can treat
//! the model as a plain parameter vector.

mod adam;
mod checkpoint;
mod glu;
mod gradcheck;
mod network;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use glu::{glu_activation, glu_backward};
pub use gradcheck::{
    grad_check, grad_check_objective, BlockCheck, GradCheckConfig, GradCheckReport, ModelObjective,
    Objective,
};
pub use network::{backward, backward_cached, forward, forward_cached, DropoutMasks, ForwardCache};
pub use train::{mean_loss, train, EarlyStopping, TrainConfig, TrainOutcome, TrainingBag};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Glu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "glu" => Ok(Activation::Glu),
            other => Err(Error::Config(format!(
                "activation: unknown value {other:?} (expected relu|glu)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub dense_widths: Vec<usize>,
    pub activation: Activation,
    pub recurrent_width: usize,
    pub bidirectional: bool,
    pub classes: usize,
    /// Inverted dropout on the recurrent layer input (training only).
    #[serde(default)]
    pub recurrent_dropout: f64,
    /// Inverted dropout on the output layer input (training only).
    #[serde(default)]
    pub output_dropout: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model.input_dim must be >= 1".into()));
        }
        if self.classes == 0 {
            return Err(Error::Config("model.classes must be >= 1".into()));
        }
        if self.recurrent_width == 0 {
            return Err(Error::Config("model.recurrent_width must be >= 1".into()));
        }
        if self.dense_widths.contains(&0) {
            return Err(Error::Config(
                "model.dense_widths entries must be >= 1".into(),
            ));
        }
        for (name, p) in [
            ("recurrent_dropout", self.recurrent_dropout),
            ("output_dropout", self.output_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "model.{name} must be in [0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    /// Width of the representation fed to the recurrent layer.
    pub fn rnn_input_dim(&self) -> usize {
        self.dense_widths.last().copied().unwrap_or(self.input_dim)
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }
}

/// A contiguous `rows x cols` slice of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseBlocks {
    pub weight: Block,
    pub bias: Block,
    pub gate: Option<(Block, Block)>,
}

#[derive(Debug, Clone)]
pub(crate) struct CellBlocks {
    pub update_in: Block,
    pub update_rec: Block,
    pub update_bias: Block,
    pub cand_in: Block,
    pub cand_rec: Block,
    pub cand_bias: Block,
}

/// Named parameter blocks of a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Layout {
    pub(crate) dense: Vec<DenseBlocks>,
    pub(crate) cells: Vec<CellBlocks>,
    pub(crate) out_weight: Block,
    pub(crate) out_bias: Block,
    names: Vec<(String, Block, usize)>,
    total: usize,
}

impl Layout {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut names = Vec::new();
        let mut offset = 0;
        // (rows, cols, fan_in)
        let mut alloc = |name: String, rows: usize, cols: usize, fan_in: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            names.push((name, b, fan_in));
            b
        };

        let mut dense = Vec::new();
        let mut in_dim = spec.input_dim;
        for (i, &w) in spec.dense_widths.iter().enumerate() {
            let weight = alloc(format!("dense{i}.weight"), w, in_dim, in_dim);
            let bias = alloc(format!("dense{i}.bias"), w, 1, in_dim);
            let gate = match spec.activation {
                Activation::Relu => None,
                Activation::Glu => Some((
                    alloc(format!("dense{i}.gate_weight"), w, in_dim, in_dim),
                    alloc(format!("dense{i}.gate_bias"), w, 1, in_dim),
                )),
            };
            dense.push(DenseBlocks { weight, bias, gate });
            in_dim = w;
        }

        let r = spec.recurrent_width;
        let cells = ["fwd", "bwd"][..spec.directions()]
            .iter()
            .map(|dir| CellBlocks {
                update_in: alloc(format!("rnn_{dir}.update_in"), r, in_dim, in_dim),
                update_rec: alloc(format!("rnn_{dir}.update_rec"), r, r, r),
                update_bias: alloc(format!("rnn_{dir}.update_bias"), r, 1, in_dim),
                cand_in: alloc(format!("rnn_{dir}.cand_in"), r, in_dim, in_dim),
                cand_rec: alloc(format!("rnn_{dir}.cand_rec"), r, r, r),
                cand_bias: alloc(format!("rnn_{dir}.cand_bias"), r, 1, in_dim),
            })
            .collect();

        let out_weight = alloc("out.weight".into(), spec.classes, r, r);
        let out_bias = alloc("out.bias".into(), spec.classes, 1, r);

        Self {
            dense,
            cells,
            out_weight,
            out_bias,
            names,
            total: offset,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(name, block)` pairs in storage order.
    pub fn blocks(&self) -> impl Iterator<Item = (&str, Block)> + '_ {
        self.names.iter().map(|(n, b, _)| (n.as_str(), *b))
    }

    /// Name of the block containing flat index `idx`.
    pub fn block_of(&self, idx: usize) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, b, _)| b.range().contains(&idx))
            .map(|(n, _, _)| n.as_str())
    }
}

/// Model parameters with their architecture and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    seed: u64,
    values: Vec<f64>,
}

impl ModelParams {
    /// Seeded uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::new(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.total()];
        for (_, block, fan_in) in &layout.names {
            let limit = 1.0 / (*fan_in as f64).sqrt();
            for v in &mut values[block.range()] {
                *v = rng.random_range(-limit..=limit);
            }
        }
        Ok(Self { spec, seed, values })
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let n = Layout::new(&spec).total();
        Ok(Self {
            spec,
            seed: 0,
            values: vec![0.0; n],
        })
    }

    pub fn from_values(spec: ModelSpec, seed: u64, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let n = Layout::new(&spec).total();
        if values.len() != n {
            return Err(Error::shape("ModelParams::from_values", n, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("parameters", "non-finite parameter value"));
        }
        Ok(Self { spec, seed, values })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.spec)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }
}
