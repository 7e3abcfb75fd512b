use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::ScoreMatrix;

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    /// Symmetric, unit diagonal for non-constant curves.
    pub values: Matrix,
    /// Classes whose concatenated curve is constant; their rows and columns are 0.
    pub constant: Vec<bool>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn classes(&self) -> usize {
        self.constant.len()
    }
}

/// Class-by-class correlation of score curves concatenated over all bags.
pub fn correlation_matrix(scores: &[ScoreMatrix]) -> Result<CorrelationMatrix> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Data("correlation needs at least one score matrix".into()))?;
    let c = first.classes();
    let mut curves = vec![Vec::new(); c];
    for s in scores {
        if s.classes() != c {
            return Err(Error::shape("correlation_matrix classes", c, s.classes()));
        }
        for (k, curve) in curves.iter_mut().enumerate() {
            curve.extend(s.curve(k));
        }
    }
    let constant: Vec<bool> = curves
        .iter()
        .map(|v| v.iter().all(|x| *x == v[0]))
        .collect();
    let mut values = Matrix::zeros(c, c);
    for i in 0..c {
        if !constant[i] {
            values.set(i, i, 1.0);
        }
        for j in i + 1..c {
            let r = pearson(&curves[i], &curves[j]).unwrap_or(0.0);
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix { values, constant })
}

/// Mean of the strictly positive off-diagonal entries, 0 when there are none.
pub fn mean_positive_correlation(m: &CorrelationMatrix) -> f64 {
    let c = m.classes();
    let pos: Vec<f64> = (0..c)
        .flat_map(|i| (i + 1..c).map(move |j| (i, j)))
        .map(|(i, j)| m.get(i, j))
        .filter(|r| *r > 0.0)
        .collect();
    if pos.is_empty() {
        0.0
    } else {
        pos.iter().sum::<f64>() / pos.len() as f64
    }
}
