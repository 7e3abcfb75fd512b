//! Training objectives on a `T x C` score matrix with exact gradients.
//!
//! Every loss here is a per-bag quantity summed over classes (FSL is the
//! exception: it averages over frames and classes). Batch reduction is the
//! caller's job.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::WeakLabels;

/// Default clamp for probabilities inside logarithms.
pub const LOG_EPS: f64 = 1e-7;
/// Norm floor below which a curve counts as zero for cosine similarity.
pub const COS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Every frame of a positive bag is a positive target.
    Fsl,
    /// Binary cross-entropy on the per-class frame maximum.
    MilMax,
    /// Max, mean and min terms per class.
    MilMmm,
    /// `MilMax` plus the cosine-similarity penalty between positive classes.
    MilMaxCos,
}

impl std::str::FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fsl" => Ok(Self::Fsl),
            "mil_max" => Ok(Self::MilMax),
            "mil_mmm" => Ok(Self::MilMmm),
            "mil_max_cos" => Ok(Self::MilMaxCos),
            other => Err(Error::Config(format!(
                "loss.variant: unknown value {other:?} (expected fsl|mil_max|mil_mmm|mil_max_cos)"
            ))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fsl => "fsl",
            Self::MilMax => "mil_max",
            Self::MilMmm => "mil_mmm",
            Self::MilMaxCos => "mil_max_cos",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Penalty weight; only used by `mil_max_cos`.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_eps() -> f64 {
    LOG_EPS
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        Self {
            variant,
            alpha: 0.0,
            epsilon: LOG_EPS,
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "loss.alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "loss.epsilon must be in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Loss value with its gradient with respect to the score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

/// `-[y log p + (1-y) log(1-p)]` with `p` clamped to `[eps, 1-eps]`.
///
/// Returns the value and `d/dp`; the derivative is zero where the clamp is active.
/// `y` may be fractional (the MMM mean term uses 0.5).
pub fn bin_ce(y: f64, p: f64, eps: f64) -> (f64, f64) {
    let pc = p.clamp(eps, 1.0 - eps);
    let value = -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln());
    let grad = if p < eps || p > 1.0 - eps {
        0.0
    } else {
        -y / pc + (1.0 - y) / (1.0 - pc)
    };
    (value, grad)
}

fn check_shapes(scores: &Matrix, y: &WeakLabels) -> Result<()> {
    if scores.cols() != y.len() {
        return Err(Error::shape(
            "loss",
            format!("{} classes", y.len()),
            scores.cols(),
        ));
    }
    if scores.rows() == 0 {
        return Err(Error::Data("score matrix has no frames".into()));
    }
    Ok(())
}

/// Index of the first maximum of column `c`.
pub(crate) fn argmax(scores: &Matrix, c: usize) -> usize {
    let mut best = 0;
    for t in 1..scores.rows() {
        if scores.get(t, c) > scores.get(best, c) {
            best = t;
        }
    }
    best
}

/// Index of the first minimum of column `c`.
pub(crate) fn argmin(scores: &Matrix, c: usize) -> usize {
    let mut best = 0;
    for t in 1..scores.rows() {
        if scores.get(t, c) < scores.get(best, c) {
            best = t;
        }
    }
    best
}

/// False strong labeling: mean over frames and classes of `bin_ce(y_c, s_tc)`.
pub fn fsl_loss(scores: &Matrix, y: &WeakLabels, eps: f64) -> Result<LossValue> {
    check_shapes(scores, y)?;
    let n = (scores.rows() * scores.cols()) as f64;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let mut value = 0.0;
    for t in 0..scores.rows() {
        for c in 0..scores.cols() {
            let (v, g) = bin_ce(y.value(c), scores.get(t, c), eps);
            value += v;
            grad.set(t, c, g / n);
        }
    }
    Ok(LossValue {
        value: value / n,
        grad,
    })
}

/// `sum_c bin_ce(y_c, max_t s_tc)`; the gradient reaches only each class's argmax frame.
pub fn mil_max_loss(scores: &Matrix, y: &WeakLabels, eps: f64) -> Result<LossValue> {
    check_shapes(scores, y)?;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let mut value = 0.0;
    for c in 0..scores.cols() {
        let t = argmax(scores, c);
        let (v, g) = bin_ce(y.value(c), scores.get(t, c), eps);
        value += v;
        grad.set(t, c, g);
    }
    Ok(LossValue { value, grad })
}

/// Max/mean/min loss.
///
/// Positive class: `bin_ce(1, max) + bin_ce(0, min) + bin_ce(0.5, mean)`.
/// Negative class: `bin_ce(0, max)`. The mean term is minimised (at `ln 2`)
/// when the column mean is 0.5.
pub fn mmm_loss(scores: &Matrix, y: &WeakLabels, eps: f64) -> Result<LossValue> {
    check_shapes(scores, y)?;
    let frames = scores.rows();
    let mut grad = Matrix::zeros(frames, scores.cols());
    let mut value = 0.0;
    for c in 0..scores.cols() {
        let t_max = argmax(scores, c);
        if y.get(c) {
            let (v_max, g_max) = bin_ce(1.0, scores.get(t_max, c), eps);
            let t_min = argmin(scores, c);
            let (v_min, g_min) = bin_ce(0.0, scores.get(t_min, c), eps);
            let mean = (0..frames).map(|t| scores.get(t, c)).sum::<f64>() / frames as f64;
            let (v_mean, g_mean) = bin_ce(0.5, mean, eps);
            value += v_max + v_min + v_mean;
            for t in 0..frames {
                grad.set(t, c, g_mean / frames as f64);
            }
            grad.set(t_max, c, grad.get(t_max, c) + g_max);
            grad.set(t_min, c, grad.get(t_min, c) + g_min);
        } else {
            let (v, g) = bin_ce(0.0, scores.get(t_max, c), eps);
            value += v;
            grad.set(t_max, c, g);
        }
    }
    Ok(LossValue { value, grad })
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity `a·b / (|a||b|)`, defined as 0 when either norm is below [`COS_EPS`].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    cosine_sim_grad(a, b).0
}

/// Cosine similarity and its gradients with respect to `a` and `b`.
pub fn cosine_sim_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(a.len(), b.len());
    let (na, nb) = (norm(a), norm(b));
    if na < COS_EPS || nb < COS_EPS {
        return (0.0, vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let cos = dot / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - cos * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - cos * y / (nb * nb))
        .collect();
    (cos, ga, gb)
}

/// `alpha * sum_c y_c sum_{l != c} y_l max(0, cos(s_:l, s_:c))`.
///
/// Ordered pairs: each unordered pair of positive classes contributes twice.
pub fn cos_penalty(scores: &Matrix, y: &WeakLabels, alpha: f64) -> Result<LossValue> {
    check_shapes(scores, y)?;
    let mut grad = Matrix::zeros(scores.rows(), scores.cols());
    let positives: Vec<usize> = y.positives().collect();
    let mut value = 0.0;
    if alpha == 0.0 || positives.len() < 2 {
        return Ok(LossValue { value, grad });
    }
    let curves: Vec<Vec<f64>> = (0..scores.cols()).map(|c| scores.column(c)).collect();
    for (i, &c) in positives.iter().enumerate() {
        for &l in &positives[i + 1..] {
            let (cos, gc, gl) = cosine_sim_grad(&curves[c], &curves[l]);
            if cos > 0.0 {
                value += 2.0 * alpha * cos;
                for t in 0..scores.rows() {
                    grad.set(t, c, grad.get(t, c) + 2.0 * alpha * gc[t]);
                    grad.set(t, l, grad.get(t, l) + 2.0 * alpha * gl[t]);
                }
            }
        }
    }
    Ok(LossValue { value, grad })
}

/// Max-MIL loss plus the cosine penalty.
pub fn mil_max_cos_loss(scores: &Matrix, y: &WeakLabels, config: &LossConfig) -> Result<LossValue> {
    let mut base = mil_max_loss(scores, y, config.epsilon)?;
    if config.alpha == 0.0 {
        return Ok(base);
    }
    let pen = cos_penalty(scores, y, config.alpha)?;
    base.value += pen.value;
    for (g, p) in base.grad.as_mut_slice().iter_mut().zip(pen.grad.as_slice()) {
        *g += p;
    }
    Ok(base)
}

/// Dispatches on `config.variant`.
pub fn evaluate(config: &LossConfig, scores: &Matrix, y: &WeakLabels) -> Result<LossValue> {
    match config.variant {
        LossVariant::Fsl => fsl_loss(scores, y, config.epsilon),
        LossVariant::MilMax => mil_max_loss(scores, y, config.epsilon),
        LossVariant::MilMmm => mmm_loss(scores, y, config.epsilon),
        LossVariant::MilMaxCos => mil_max_cos_loss(scores, y, config),
    }
}

/// Per-class contributions whose sum is the loss value.
pub fn per_class(config: &LossConfig, scores: &Matrix, y: &WeakLabels) -> Result<Vec<f64>> {
    check_shapes(scores, y)?;
    let eps = config.epsilon;
    let frames = scores.rows();
    let classes = scores.cols();
    let out = (0..classes)
        .map(|c| match config.variant {
            LossVariant::Fsl => {
                (0..frames)
                    .map(|t| bin_ce(y.value(c), scores.get(t, c), eps).0)
                    .sum::<f64>()
                    / (frames * classes) as f64
            }
            LossVariant::MilMax | LossVariant::MilMaxCos => {
                let mut v = bin_ce(y.value(c), scores.get(argmax(scores, c), c), eps).0;
                if config.variant == LossVariant::MilMaxCos && y.get(c) {
                    let a = scores.column(c);
                    v += config.alpha
                        * y.positives()
                            .filter(|&l| l != c)
                            .map(|l| cosine_sim(&scores.column(l), &a).max(0.0))
                            .sum::<f64>();
                }
                v
            }
            LossVariant::MilMmm => {
                let single = WeakLabels::new(vec![y.get(c)]);
                let col = Matrix::from_vec(frames, 1, scores.column(c)).expect("column");
                mmm_loss(&col, &single, eps)
                    .map(|l| l.value)
                    .unwrap_or(f64::NAN)
            }
        })
        .collect();
    Ok(out)
}

/// Discrete choices made while evaluating the loss (argmax/argmin frames,
/// clamp activity, active penalty pairs). Two points with equal signatures
/// lie on the same smooth piece of the loss.
pub fn branch_signature(config: &LossConfig, scores: &Matrix, y: &WeakLabels) -> Vec<u64> {
    let eps = config.epsilon;
    let clamped = |p: f64| u64::from(p < eps || p > 1.0 - eps);
    let mut sig = Vec::new();
    match config.variant {
        LossVariant::Fsl => {
            sig.extend(scores.as_slice().iter().map(|&p| clamped(p)));
        }
        LossVariant::MilMax | LossVariant::MilMaxCos | LossVariant::MilMmm => {
            for c in 0..scores.cols() {
                let t = argmax(scores, c);
                sig.push(t as u64);
                sig.push(clamped(scores.get(t, c)));
                if config.variant == LossVariant::MilMmm && y.get(c) {
                    let m = argmin(scores, c);
                    sig.push(m as u64);
                    sig.push(clamped(scores.get(m, c)));
                }
            }
            if config.variant == LossVariant::MilMaxCos && config.alpha > 0.0 {
                let pos: Vec<usize> = y.positives().collect();
                for (i, &c) in pos.iter().enumerate() {
                    for &l in &pos[i + 1..] {
                        sig.push(u64::from(
                            cosine_sim(&scores.column(c), &scores.column(l)) > 0.0,
                        ));
                    }
                }
            }
        }
    }
    sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = LOG_EPS;

    fn random_scores(frames: usize, classes: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * classes)
            .map(|_| rng.random_range(0.05..0.95))
            .collect();
        Matrix::from_vec(frames, classes, data).unwrap()
    }

    fn labels(v: &[u8]) -> WeakLabels {
        WeakLabels::from_slice(v).unwrap()
    }

    #[test]
    fn bin_ce_reference_values() {
        let (v, _) = bin_ce(1.0, 1.0, EPS);
        assert!(v >= 0.0 && v <= -(1.0 - EPS).ln() + 1e-18);
        let (v, _) = bin_ce(1.0, 0.5, EPS);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        let (v, g) = bin_ce(0.0, 0.5, EPS);
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fsl_examples() {
        let s = Matrix::filled(3, 2, EPS);
        assert!(fsl_loss(&s, &labels(&[0, 0]), EPS).unwrap().value < 1e-6);
        let s = Matrix::filled(5, 1, 0.5);
        let v = fsl_loss(&s, &labels(&[1]), EPS).unwrap().value;
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn fsl_matches_direct_summation() {
        let s = random_scores(4, 2, 11);
        let y = labels(&[1, 0]);
        let mut expected = 0.0;
        for t in 0..4 {
            expected += -(s.get(t, 0)).ln();
            expected += -(1.0 - s.get(t, 1)).ln();
        }
        expected /= 8.0;
        let got = fsl_loss(&s, &y, EPS).unwrap().value;
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn mil_max_examples() {
        let s = Matrix::from_rows(&[vec![1.0 - EPS, EPS], vec![0.2, EPS]]).unwrap();
        assert!(mil_max_loss(&s, &labels(&[1, 0]), EPS).unwrap().value < 1e-6);
        let s = Matrix::filled(4, 1, 0.5);
        let v = mil_max_loss(&s, &labels(&[1]), EPS).unwrap().value;
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn mil_max_matches_brute_force() {
        let s = random_scores(5, 3, 3);
        let y = labels(&[1, 0, 1]);
        let mut expected = 0.0;
        for c in 0..3 {
            let mut m = f64::MIN;
            for t in 0..5 {
                m = m.max(s.get(t, c));
            }
            expected += if y.get(c) { -m.ln() } else { -(1.0 - m).ln() };
        }
        let got = mil_max_loss(&s, &y, EPS).unwrap();
        assert!((got.value - expected).abs() < 1e-14);
        // gradient only on argmax frames
        for c in 0..3 {
            let nz = (0..5).filter(|&t| got.grad.get(t, c) != 0.0).count();
            assert_eq!(nz, 1);
        }
    }

    #[test]
    fn max_ties_route_to_earliest_frame() {
        let s = Matrix::from_rows(&[vec![0.3], vec![0.7], vec![0.7]]).unwrap();
        let l = mil_max_loss(&s, &labels(&[1]), EPS).unwrap();
        assert!(l.grad.get(1, 0) != 0.0 && l.grad.get(2, 0) == 0.0);
    }

    #[test]
    fn mmm_examples() {
        let col = vec![1.0 - EPS, EPS, 0.5, 0.5];
        let s = Matrix::from_vec(4, 1, col).unwrap();
        let v = mmm_loss(&s, &labels(&[1]), EPS).unwrap().value;
        // max and min terms vanish, the mean term sits at its minimum ln 2
        assert!((v - std::f64::consts::LN_2).abs() < 1e-6);
        let s = Matrix::filled(4, 2, EPS);
        assert!(mmm_loss(&s, &labels(&[0, 0]), EPS).unwrap().value < 1e-6);
    }

    #[test]
    fn mmm_matches_term_by_term() {
        let s = random_scores(6, 2, 8);
        let y = labels(&[1, 0]);
        let c0 = s.column(0);
        let max0 = c0.iter().cloned().fold(f64::MIN, f64::max);
        let min0 = c0.iter().cloned().fold(f64::MAX, f64::min);
        let mean0 = c0.iter().sum::<f64>() / 6.0;
        let max1 = s.column(1).into_iter().fold(f64::MIN, f64::max);
        let expected = -max0.ln()
            - (1.0 - min0).ln()
            - 0.5 * mean0.ln()
            - 0.5 * (1.0 - mean0).ln()
            - (1.0 - max1).ln();
        let got = mmm_loss(&s, &y, EPS).unwrap().value;
        assert!((got - expected).abs() < 1e-13);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_sim(&[0.3, 0.4], &[0.3, 0.4]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((cosine_sim(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn penalty_examples() {
        let s = random_scores(5, 3, 1);
        assert_eq!(
            cos_penalty(&s, &labels(&[0, 1, 0]), 0.1).unwrap().value,
            0.0
        );

        let col = vec![0.2, 0.9, 0.4];
        let mut s = Matrix::zeros(3, 2);
        s.set_column(0, &col);
        s.set_column(1, &col);
        let v = cos_penalty(&s, &labels(&[1, 1]), 0.1).unwrap().value;
        assert!((v - 0.2).abs() < 1e-12);

        // centred curves with opposite signs give cos < 0
        let mut s = Matrix::zeros(2, 2);
        s.set_column(0, &[1.0, -1.0]);
        s.set_column(1, &[-1.0, 1.0]);
        let p = cos_penalty(&s, &labels(&[1, 1]), 0.1).unwrap();
        assert_eq!(p.value, 0.0);
        assert!(p.grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn all_negative_bag_has_no_penalty() {
        let s = random_scores(6, 3, 2);
        let y = labels(&[0, 0, 0]);
        let cfg = LossConfig::new(LossVariant::MilMaxCos).with_alpha(0.1);
        let l = mil_max_cos_loss(&s, &y, &cfg).unwrap();
        let expected: f64 = (0..3)
            .map(|c| bin_ce(0.0, s.get(argmax(&s, c), c), EPS).0)
            .sum();
        assert_eq!(l.value, expected);
    }

    #[test]
    fn alpha_zero_reduces_to_mil_max() {
        let s = random_scores(6, 3, 5);
        let y = labels(&[1, 1, 0]);
        let a = mil_max_cos_loss(&s, &y, &LossConfig::new(LossVariant::MilMaxCos)).unwrap();
        let b = mil_max_loss(&s, &y, EPS).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn penalized_gradient_matches_finite_differences() {
        let s = random_scores(6, 3, 17);
        let y = labels(&[1, 1, 1]);
        let cfg = LossConfig::new(LossVariant::MilMaxCos).with_alpha(0.1);
        let l = mil_max_cos_loss(&s, &y, &cfg).unwrap();
        let sig = branch_signature(&cfg, &s, &y);
        let h = 1e-5;
        for i in 0..s.as_slice().len() {
            let mut sp = s.clone();
            sp.as_mut_slice()[i] += h;
            let mut sm = s.clone();
            sm.as_mut_slice()[i] -= h;
            if branch_signature(&cfg, &sp, &y) != sig || branch_signature(&cfg, &sm, &y) != sig {
                continue;
            }
            let fd = (mil_max_cos_loss(&sp, &y, &cfg).unwrap().value
                - mil_max_cos_loss(&sm, &y, &cfg).unwrap().value)
                / (2.0 * h);
            let a = l.grad.as_slice()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(
            "mil_max_cos".parse::<LossVariant>().unwrap(),
            LossVariant::MilMaxCos
        );
        let err = "max".parse::<LossVariant>().unwrap_err().to_string();
        assert!(err.contains("loss.variant"));
    }
}
