//! Gated linear unit: `linear ⊙ sigmoid(gate)`.

use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Element-wise `linear * sigmoid(gate)`. Both branches must have the same length.
pub fn glu_activation(linear: &[f64], gate: &[f64]) -> Result<Vec<f64>> {
    if linear.len() != gate.len() {
        return Err(Error::shape("glu_activation", linear.len(), gate.len()));
    }
    Ok(linear
        .iter()
        .zip(gate)
        .map(|(&l, &g)| l * sigmoid(g))
        .collect())
}

/// Gradients of the GLU output with respect to both branches.
pub fn glu_backward(
    linear: &[f64],
    gate: &[f64],
    grad_out: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if linear.len() != gate.len() || linear.len() != grad_out.len() {
        return Err(Error::shape(
            "glu_backward",
            linear.len(),
            format!("{}/{}", gate.len(), grad_out.len()),
        ));
    }
    let mut d_lin = Vec::with_capacity(linear.len());
    let mut d_gate = Vec::with_capacity(linear.len());
    for ((&l, &g), &d) in linear.iter().zip(gate).zip(grad_out) {
        let s = sigmoid(g);
        d_lin.push(d * s);
        d_gate.push(d * l * s * (1.0 - s));
    }
    Ok((d_lin, d_gate))
}
