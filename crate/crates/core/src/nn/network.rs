//! Forward pass and exact reverse-mode gradients.
//!
//! Recurrent cell (per direction, state `s`, input `u`):
//!
//! ```text
//! z_t = sigmoid(W_z u_t + U_z s_prev + b_z)
//! c_t = tanh(W_c u_t + U_c s_prev + b_c)
//! s_t = (1 - z_t) ⊙ s_prev + z_t ⊙ c_t
//! ```
//!
//! `s_prev` is the state of frame `t-1` for the forward direction and of frame
//! `t+1` for the backward direction, zero at the sequence boundary. With the
//! bidirectional flag the two direction states are summed per frame.

use rand::Rng;

use super::glu::sigmoid;
use super::{Block, CellBlocks, Layout, ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{FrameFeatures, ScoreMatrix};

/// Inverted-dropout masks for one forward pass. Entries are `0` or `1/(1-p)`.
#[derive(Debug, Clone, Default)]
pub struct DropoutMasks {
    pub rnn_input: Option<Matrix>,
    pub output_input: Option<Matrix>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng + ?Sized>(spec: &ModelSpec, frames: usize, rng: &mut R) -> Self {
        let mut mask = |p: f64, width: usize| {
            (p > 0.0).then(|| {
                let keep = 1.0 / (1.0 - p);
                let data = (0..frames * width)
                    .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect();
                Matrix::from_vec(frames, width, data).expect("mask dims")
            })
        };
        Self {
            rnn_input: mask(spec.recurrent_dropout, spec.rnn_input_dim()),
            output_input: mask(spec.output_dropout, spec.recurrent_width),
        }
    }
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Matrix,
    pre: Matrix,
    gate_pre: Option<Matrix>,
}

#[derive(Debug, Clone)]
struct CellCache {
    reverse: bool,
    state: Matrix,
    update: Matrix,
    cand: Matrix,
}

/// Intermediate values of one forward pass, consumed by [`backward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dense: Vec<DenseCache>,
    rnn_in: Matrix,
    cells: Vec<CellCache>,
    head_in: Matrix,
    scores: Matrix,
    masks: DropoutMasks,
    hop_s: f64,
}

impl ForwardCache {
    pub fn scores(&self) -> ScoreMatrix {
        ScoreMatrix::new_unchecked(self.scores.clone(), self.hop_s)
    }

    pub fn score_matrix(&self) -> &Matrix {
        &self.scores
    }

    /// Sign pattern of every ReLU pre-activation; changes mark non-smooth points.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.dense
            .iter()
            .filter(|d| d.gate_pre.is_none())
            .flat_map(|d| d.pre.as_slice().iter().map(|&v| v > 0.0))
            .collect()
    }
}

#[inline]
fn block<'a>(values: &'a [f64], b: &Block) -> &'a [f64] {
    &values[b.range()]
}

/// `out = W x + b`
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// `out += W x`
#[inline]
fn add_matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// `out += W^T d`
#[inline]
fn add_matvec_t(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * dr;
        }
    }
}

/// `g += d x^T`
#[inline]
fn add_outer(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += dr * xi;
        }
    }
}

fn check_finite(m: &Matrix, stage: impl FnOnce() -> String) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(stage(), "non-finite activation"))
    }
}

fn apply_mask(m: &mut Matrix, mask: Option<&Matrix>) {
    if let Some(mask) = mask {
        for (v, k) in m.as_mut_slice().iter_mut().zip(mask.as_slice()) {
            *v *= k;
        }
    }
}

/// Scores for `bag` with dropout disabled.
pub fn forward(params: &ModelParams, bag: &FrameFeatures) -> Result<ScoreMatrix> {
    forward_cached(params, bag, &DropoutMasks::none()).map(|c| c.scores())
}

/// Forward pass keeping every intermediate needed by the backward pass.
pub fn forward_cached(
    params: &ModelParams,
    bag: &FrameFeatures,
    masks: &DropoutMasks,
) -> Result<ForwardCache> {
    let spec = params.spec();
    if bag.dim() != spec.input_dim {
        return Err(Error::Config(format!(
            "bag feature dimension {} does not match model input_dim {}",
            bag.dim(),
            spec.input_dim
        )));
    }
    let layout = Layout::new(spec);
    let values = params.values();
    let frames = bag.frames();

    let mut dense = Vec::with_capacity(layout.dense.len());
    let mut x = bag.values().clone();
    for (i, db) in layout.dense.iter().enumerate() {
        let width = db.weight.rows;
        let mut pre = Matrix::zeros(frames, width);
        let w = block(values, &db.weight);
        let b = block(values, &db.bias);
        for t in 0..frames {
            affine(w, b, x.row(t), pre.row_mut(t));
        }
        let mut out = pre.clone();
        let gate_pre = match db.gate {
            None => {
                for v in out.as_mut_slice() {
                    *v = v.max(0.0);
                }
                None
            }
            Some((gw, gb)) => {
                let mut gp = Matrix::zeros(frames, width);
                let gw = block(values, &gw);
                let gb = block(values, &gb);
                for t in 0..frames {
                    affine(gw, gb, x.row(t), gp.row_mut(t));
                }
                for (o, g) in out.as_mut_slice().iter_mut().zip(gp.as_slice()) {
                    *o *= sigmoid(*g);
                }
                Some(gp)
            }
        };
        check_finite(&out, || format!("layer {i} (dense)"))?;
        dense.push(DenseCache {
            input: x,
            pre,
            gate_pre,
        });
        x = out;
    }

    let mut rnn_in = x;
    apply_mask(&mut rnn_in, masks.rnn_input.as_ref());

    let r = spec.recurrent_width;
    let mut cells = Vec::with_capacity(layout.cells.len());
    let mut summed = Matrix::zeros(frames, r);
    for (d, cb) in layout.cells.iter().enumerate() {
        let cell = run_cell(values, cb, &rnn_in, d == 1);
        check_finite(&cell.state, || {
            format!("layer {} (recurrent, direction {d})", layout.dense.len())
        })?;
        for (o, s) in summed.as_mut_slice().iter_mut().zip(cell.state.as_slice()) {
            *o += s;
        }
        cells.push(cell);
    }

    let mut head_in = summed;
    apply_mask(&mut head_in, masks.output_input.as_ref());

    let mut scores = Matrix::zeros(frames, spec.classes);
    let ow = block(values, &layout.out_weight);
    let ob = block(values, &layout.out_bias);
    for t in 0..frames {
        let row = scores.row_mut(t);
        affine(ow, ob, head_in.row(t), row);
        for v in row.iter_mut() {
            *v = sigmoid(*v);
        }
    }
    check_finite(&scores, || {
        format!("layer {} (output)", layout.dense.len() + 1)
    })?;

    Ok(ForwardCache {
        dense,
        rnn_in,
        cells,
        head_in,
        scores,
        masks: masks.clone(),
        hop_s: bag.hop_s(),
    })
}

fn frame_order(frames: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..frames).rev())
    } else {
        Box::new(0..frames)
    }
}

fn prev_index(t: usize, frames: usize, reverse: bool) -> Option<usize> {
    if reverse {
        (t + 1 < frames).then_some(t + 1)
    } else {
        t.checked_sub(1)
    }
}

fn run_cell(values: &[f64], cb: &CellBlocks, input: &Matrix, reverse: bool) -> CellCache {
    let frames = input.rows();
    let r = cb.update_bias.rows;
    let mut state = Matrix::zeros(frames, r);
    let mut update = Matrix::zeros(frames, r);
    let mut cand = Matrix::zeros(frames, r);
    let zero = vec![0.0; r];
    let (wz, uz, bz) = (
        block(values, &cb.update_in),
        block(values, &cb.update_rec),
        block(values, &cb.update_bias),
    );
    let (wc, uc, bc) = (
        block(values, &cb.cand_in),
        block(values, &cb.cand_rec),
        block(values, &cb.cand_bias),
    );
    let mut az = vec![0.0; r];
    let mut ac = vec![0.0; r];
    for t in frame_order(frames, reverse) {
        let prev = prev_index(t, frames, reverse).map_or(zero.clone(), |p| state.row(p).to_vec());
        let u = input.row(t);
        affine(wz, bz, u, &mut az);
        add_matvec(uz, &prev, &mut az);
        affine(wc, bc, u, &mut ac);
        add_matvec(uc, &prev, &mut ac);
        for k in 0..r {
            let z = sigmoid(az[k]);
            let c = ac[k].tanh();
            update.set(t, k, z);
            cand.set(t, k, c);
            state.set(t, k, prev[k] + z * (c - prev[k]));
        }
    }
    CellCache {
        reverse,
        state,
        update,
        cand,
    }
}

/// Recomputes the forward pass (dropout off) and returns `d loss / d params`.
pub fn backward(params: &ModelParams, bag: &FrameFeatures, loss_grad: &Matrix) -> Result<Vec<f64>> {
    let cache = forward_cached(params, bag, &DropoutMasks::none())?;
    backward_cached(params, &cache, loss_grad)
}

/// Exact gradient of `sum(loss_grad ⊙ scores)` with respect to every parameter.
pub fn backward_cached(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grad: &Matrix,
) -> Result<Vec<f64>> {
    if !loss_grad.same_shape(&cache.scores) {
        return Err(Error::shape(
            "backward",
            format!("{}x{}", cache.scores.rows(), cache.scores.cols()),
            format!("{}x{}", loss_grad.rows(), loss_grad.cols()),
        ));
    }
    if !loss_grad.is_finite() {
        return Err(Error::numeric("backward", "non-finite loss gradient"));
    }
    let spec = params.spec();
    let layout = Layout::new(spec);
    let values = params.values();
    let mut grad = vec![0.0; layout.total()];
    let frames = cache.scores.rows();
    let r = spec.recurrent_width;

    // output head
    let mut d_head_in = Matrix::zeros(frames, r);
    {
        let ow = block(values, &layout.out_weight);
        let mut da = vec![0.0; spec.classes];
        for t in 0..frames {
            for (c, d) in da.iter_mut().enumerate() {
                let y = cache.scores.get(t, c);
                *d = loss_grad.get(t, c) * y * (1.0 - y);
            }
            add_outer(
                &mut grad[layout.out_weight.range()],
                &da,
                cache.head_in.row(t),
            );
            for (g, d) in grad[layout.out_bias.range()].iter_mut().zip(&da) {
                *g += d;
            }
            add_matvec_t(ow, &da, d_head_in.row_mut(t));
        }
    }
    apply_mask(&mut d_head_in, cache.masks.output_input.as_ref());

    // recurrent layer: each direction's state receives d_head_in directly
    let mut d_rnn_in = Matrix::zeros(frames, cache.rnn_in.cols());
    for (cb, cell) in layout.cells.iter().zip(&cache.cells) {
        cell_backward(
            values,
            cb,
            cell,
            &cache.rnn_in,
            &d_head_in,
            &mut d_rnn_in,
            &mut grad,
        );
    }
    apply_mask(&mut d_rnn_in, cache.masks.rnn_input.as_ref());

    // dense stack
    let mut d_out = d_rnn_in;
    for (i, (db, dc)) in layout.dense.iter().zip(&cache.dense).enumerate().rev() {
        let width = db.weight.rows;
        let in_dim = db.weight.cols;
        let mut d_pre = Matrix::zeros(frames, width);
        let mut d_gate = dc.gate_pre.as_ref().map(|_| Matrix::zeros(frames, width));
        match (&dc.gate_pre, d_gate.as_mut()) {
            (None, _) => {
                for ((dp, &d), &p) in d_pre
                    .as_mut_slice()
                    .iter_mut()
                    .zip(d_out.as_slice())
                    .zip(dc.pre.as_slice())
                {
                    *dp = if p > 0.0 { d } else { 0.0 };
                }
            }
            (Some(gp), Some(dg)) => {
                let (dl, dgv) =
                    super::glu_backward(dc.pre.as_slice(), gp.as_slice(), d_out.as_slice())?;
                d_pre.as_mut_slice().copy_from_slice(&dl);
                dg.as_mut_slice().copy_from_slice(&dgv);
            }
            (Some(_), None) => unreachable!(),
        }
        let need_input_grad = i > 0;
        let mut d_in = Matrix::zeros(frames, in_dim);
        let w = block(values, &db.weight);
        for t in 0..frames {
            let x = dc.input.row(t);
            add_outer(&mut grad[db.weight.range()], d_pre.row(t), x);
            for (g, d) in grad[db.bias.range()].iter_mut().zip(d_pre.row(t)) {
                *g += d;
            }
            if need_input_grad {
                add_matvec_t(w, d_pre.row(t), d_in.row_mut(t));
            }
        }
        if let (Some((gw, gb)), Some(dg)) = (db.gate, d_gate.as_ref()) {
            let gwv = block(values, &gw);
            for t in 0..frames {
                let x = dc.input.row(t);
                add_outer(&mut grad[gw.range()], dg.row(t), x);
                for (g, d) in grad[gb.range()].iter_mut().zip(dg.row(t)) {
                    *g += d;
                }
                if need_input_grad {
                    add_matvec_t(gwv, dg.row(t), d_in.row_mut(t));
                }
            }
        }
        d_out = d_in;
    }

    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("backward", "non-finite parameter gradient"));
    }
    Ok(grad)
}

fn cell_backward(
    values: &[f64],
    cb: &CellBlocks,
    cell: &CellCache,
    input: &Matrix,
    d_state_out: &Matrix,
    d_input: &mut Matrix,
    grad: &mut [f64],
) {
    let frames = input.rows();
    let r = cb.update_bias.rows;
    let zero = vec![0.0; r];
    let (wz, uz) = (block(values, &cb.update_in), block(values, &cb.update_rec));
    let (wc, uc) = (block(values, &cb.cand_in), block(values, &cb.cand_rec));
    let mut carry = vec![0.0; r];
    let mut daz = vec![0.0; r];
    let mut dac = vec![0.0; r];
    // walk frames opposite to the processing order
    for t in frame_order(frames, !cell.reverse) {
        let prev = prev_index(t, frames, cell.reverse).map_or(&zero[..], |p| cell.state.row(p));
        let mut d_prev = vec![0.0; r];
        for k in 0..r {
            let ds = d_state_out.get(t, k) + carry[k];
            let z = cell.update.get(t, k);
            let c = cell.cand.get(t, k);
            d_prev[k] = ds * (1.0 - z);
            daz[k] = ds * (c - prev[k]) * z * (1.0 - z);
            dac[k] = ds * z * (1.0 - c * c);
        }
        let u = input.row(t);
        add_outer(&mut grad[cb.update_in.range()], &daz, u);
        add_outer(&mut grad[cb.update_rec.range()], &daz, prev);
        add_outer(&mut grad[cb.cand_in.range()], &dac, u);
        add_outer(&mut grad[cb.cand_rec.range()], &dac, prev);
        for k in 0..r {
            grad[cb.update_bias.offset + k] += daz[k];
            grad[cb.cand_bias.offset + k] += dac[k];
        }
        let du = d_input.row_mut(t);
        add_matvec_t(wz, &daz, du);
        add_matvec_t(wc, &dac, du);
        add_matvec_t(uz, &daz, &mut d_prev);
        add_matvec_t(uc, &dac, &mut d_prev);
        carry = d_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tests::spec;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_bag(frames: usize, dim: usize, seed: u64) -> FrameFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        FrameFeatures::new(Matrix::from_vec(frames, dim, data).unwrap(), 0.1).unwrap()
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let p = ModelParams::zeros(spec(Activation::Glu, true)).unwrap();
        let s = forward(&p, &random_bag(7, 4, 1)).unwrap();
        assert_eq!(s.frames(), 7);
        assert!(s.matrix().as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_frame_bag() {
        let p = ModelParams::init(spec(Activation::Relu, true), 3).unwrap();
        let s = forward(&p, &random_bag(1, 4, 2)).unwrap();
        assert_eq!((s.frames(), s.classes()), (1, 3));
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let p = ModelParams::init(spec(Activation::Relu, true), 3).unwrap();
        let err = forward(&p, &random_bag(3, 5, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let mut p = ModelParams::init(spec(Activation::Relu, true), 3).unwrap();
        p.values_mut()[0] = f64::MAX;
        let mut bag = random_bag(3, 4, 2);
        let mut m = bag.values().clone();
        m.set(0, 0, 1e308);
        bag = FrameFeatures::new(m, 0.1).unwrap();
        match forward(&p, &bag) {
            Err(Error::Numeric { stage, .. }) => assert!(stage.contains("layer 0")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn zero_loss_gradient_gives_zero_parameter_gradient() {
        let p = ModelParams::init(spec(Activation::Glu, true), 9).unwrap();
        let bag = random_bag(6, 4, 5);
        let g = backward(&p, &bag, &Matrix::zeros(6, 3)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_shape() {
        let p = ModelParams::init(spec(Activation::Glu, true), 9).unwrap();
        let bag = random_bag(6, 4, 5);
        assert!(backward(&p, &bag, &Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn output_bias_gradient_with_zero_weights() {
        // All weights zero: scores are sigmoid(out.bias), so
        // d/d bias_c of sum(g ⊙ scores) = y(1-y) * sum_t g_tc.
        let p = ModelParams::zeros(spec(Activation::Relu, false)).unwrap();
        let bag = random_bag(4, 4, 5);
        let g = Matrix::filled(4, 3, 1.0);
        let grad = backward(&p, &bag, &g).unwrap();
        let layout = p.layout();
        for v in &grad[layout.out_bias.range()] {
            assert!((v - 4.0 * 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn dropout_masks_scale_kept_units() {
        let mut s = spec(Activation::Relu, true);
        s.recurrent_dropout = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = DropoutMasks::sample(&s, 50, &mut rng);
        let mask = m.rnn_input.unwrap();
        assert!(mask.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(m.output_input.is_none());
    }
}
