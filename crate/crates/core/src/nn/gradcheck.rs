//! Central finite-difference verification of analytic gradients.
//!
//! Parameters whose `±h` perturbation changes a discrete branch of the
//! objective (a MIL argmax, a ReLU sign, an active penalty clamp) sit on a
//! non-differentiable point; they are reported as unstable instead of failed.

use serde::Serialize;

use super::network::{backward_cached, forward_cached, DropoutMasks};
use super::{Layout, ModelParams, ModelSpec};
use crate::error::Result;
use crate::losses::{self, LossConfig};
use crate::types::{FrameFeatures, WeakLabels};

/// A scalar function of a flat parameter vector with an analytic gradient.
pub trait Objective {
    fn num_params(&self) -> usize;

    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, params: &[f64]) -> Result<f64> {
        self.value_and_grad(params).map(|(v, _)| v)
    }

    /// Discrete branch choices at `params`; empty for smooth objectives.
    fn signature(&self, _params: &[f64]) -> Result<Vec<u64>> {
        Ok(Vec::new())
    }

    fn block_name(&self, _index: usize) -> String {
        "params".to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that two near-zero
    /// gradients are compared absolutely.
    pub abs_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub unstable: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub max_rel_error: f64,
    /// Flat indices whose perturbation crossed a branch boundary.
    pub unstable: Vec<usize>,
    /// Flat indices exceeding the tolerance at a stable point.
    pub failed: Vec<usize>,
    /// True when no perturbation changed a branch.
    pub argmax_stable: bool,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every parameter of `objective` at `params`.
pub fn grad_check_objective<O: Objective + ?Sized>(
    objective: &O,
    params: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let (_, analytic) = objective.value_and_grad(params)?;
    let base_sig = objective.signature(params)?;
    let mut work = params.to_vec();
    let mut blocks: Vec<BlockCheck> = Vec::new();
    let mut unstable = Vec::new();
    let mut failed = Vec::new();
    let mut max_rel: f64 = 0.0;

    for i in 0..objective.num_params() {
        let name = objective.block_name(i);
        if blocks.last().is_none_or(|b| b.name != name) {
            blocks.push(BlockCheck {
                name,
                max_rel_error: 0.0,
                checked: 0,
                unstable: 0,
            });
        }
        let entry = blocks.last_mut().expect("block");

        let orig = work[i];
        work[i] = orig + cfg.step;
        let plus = objective.value(&work)?;
        let sig_plus = objective.signature(&work)?;
        work[i] = orig - cfg.step;
        let minus = objective.value(&work)?;
        let sig_minus = objective.signature(&work)?;
        work[i] = orig;

        if sig_plus != base_sig || sig_minus != base_sig {
            unstable.push(i);
            entry.unstable += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let rel = relative_error(analytic[i], numeric, cfg.abs_floor);
        entry.checked += 1;
        entry.max_rel_error = entry.max_rel_error.max(rel);
        max_rel = max_rel.max(rel);
        if rel >= cfg.tolerance || !rel.is_finite() {
            failed.push(i);
        }
    }

    Ok(GradCheckReport {
        blocks,
        max_rel_error: max_rel,
        argmax_stable: unstable.is_empty(),
        unstable,
        passed: failed.is_empty(),
        failed,
    })
}

/// Full model + loss on one bag, as an [`Objective`] over the flat parameters.
pub struct ModelObjective<'a> {
    spec: &'a ModelSpec,
    layout: Layout,
    bag: &'a FrameFeatures,
    labels: &'a WeakLabels,
    loss: LossConfig,
}

impl<'a> ModelObjective<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        bag: &'a FrameFeatures,
        labels: &'a WeakLabels,
        loss: LossConfig,
    ) -> Self {
        Self {
            spec,
            layout: Layout::new(spec),
            bag,
            labels,
            loss,
        }
    }

    fn params(&self, values: &[f64]) -> Result<ModelParams> {
        ModelParams::from_values(self.spec.clone(), 0, values.to_vec())
    }
}

impl Objective for ModelObjective<'_> {
    fn num_params(&self) -> usize {
        self.layout.total()
    }

    fn value_and_grad(&self, values: &[f64]) -> Result<(f64, Vec<f64>)> {
        let params = self.params(values)?;
        let cache = forward_cached(&params, self.bag, &DropoutMasks::none())?;
        let loss = losses::evaluate(&self.loss, cache.score_matrix(), self.labels)?;
        let grad = backward_cached(&params, &cache, &loss.grad)?;
        Ok((loss.value, grad))
    }

    fn value(&self, values: &[f64]) -> Result<f64> {
        let params = self.params(values)?;
        let cache = forward_cached(&params, self.bag, &DropoutMasks::none())?;
        Ok(losses::evaluate(&self.loss, cache.score_matrix(), self.labels)?.value)
    }

    fn signature(&self, values: &[f64]) -> Result<Vec<u64>> {
        let params = self.params(values)?;
        let cache = forward_cached(&params, self.bag, &DropoutMasks::none())?;
        let mut sig = losses::branch_signature(&self.loss, cache.score_matrix(), self.labels);
        sig.extend(cache.relu_pattern().into_iter().map(u64::from));
        Ok(sig)
    }

    fn block_name(&self, index: usize) -> String {
        self.layout.block_of(index).unwrap_or("?").to_string()
    }
}

/// Gradient check of the whole model + loss pipeline on one bag.
pub fn grad_check(
    params: &ModelParams,
    bag: &FrameFeatures,
    labels: &WeakLabels,
    loss: &LossConfig,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let objective = ModelObjective::new(params.spec(), bag, labels, *loss);
    grad_check_objective(&objective, params.values(), cfg)
}
