//! A single-direction LSTM layer with a hand-derived backward pass.
//!
//! Gate pre-activations are `a = W·[x; h_prev] + b` with rows laid out as
//! input, forget, output and candidate blocks of `hidden` rows each.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numkernel::{sigmoid, Matrix};

pub(crate) const GATES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `4·hidden × (input + hidden)`
    pub w: Matrix,
    /// `1 × 4·hidden`
    pub b: Matrix,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            w: Matrix::zeros(GATES * hidden, input + hidden),
            b: Matrix::zeros(1, GATES * hidden),
        }
    }

    /// Uniform weights in `[-scale, scale]`; forget-gate bias set to `forget_bias`.
    pub fn random<R: Rng>(input: usize, hidden: usize, scale: f64, forget_bias: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for v in p.w.as_mut_slice() {
            *v = rng.random_range(-scale..=scale);
        }
        for v in p.b.as_mut_slice() {
            *v = rng.random_range(-scale..=scale);
        }
        for v in &mut p.b.as_mut_slice()[hidden..2 * hidden] {
            *v = forget_bias;
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w.rows() / GATES
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.hidden()
    }

    /// Runs the layer over `inputs` (one row per step). When `reverse` is set
    /// the sequence is consumed from the last row to the first; outputs are
    /// always indexed by input position.
    pub fn forward(&self, inputs: &Matrix, reverse: bool) -> (Matrix, LstmTrace) {
        let n = inputs.rows();
        let hid = self.hidden();
        let inp = self.input();
        debug_assert_eq!(inputs.cols(), inp);

        let mut out = Matrix::zeros(n, hid);
        let mut trace = LstmTrace {
            reverse,
            xh: Matrix::zeros(n, inp + hid),
            act: Matrix::zeros(n, GATES * hid),
            c: Matrix::zeros(n, hid),
            c_prev: Matrix::zeros(n, hid),
            tanh_c: Matrix::zeros(n, hid),
        };
        let mut h = vec![0.0; hid];
        let mut c = vec![0.0; hid];
        let mut a = vec![0.0; GATES * hid];
        for s in 0..n {
            let t = if reverse { n - 1 - s } else { s };
            let xh = trace.xh.row_mut(s);
            xh[..inp].copy_from_slice(inputs.row(t));
            xh[inp..].copy_from_slice(&h);
            self.w.affine_into(trace.xh.row(s), self.b.as_slice(), &mut a);

            trace.c_prev.row_mut(s).copy_from_slice(&c);
            let act = trace.act.row_mut(s);
            for k in 0..hid {
                let i = sigmoid(a[k]);
                let f = sigmoid(a[hid + k]);
                let o = sigmoid(a[2 * hid + k]);
                let g = a[3 * hid + k].tanh();
                act[k] = i;
                act[hid + k] = f;
                act[2 * hid + k] = o;
                act[3 * hid + k] = g;
                c[k] = f * c[k] + i * g;
                h[k] = o * c[k].tanh();
            }
            trace.c.row_mut(s).copy_from_slice(&c);
            for (tc, ck) in trace.tanh_c.row_mut(s).iter_mut().zip(&c) {
                *tc = ck.tanh();
            }
            out.row_mut(t).copy_from_slice(&h);
        }
        (out, trace)
    }

    /// Backpropagates `d_out` (gradient w.r.t. every output row) through the
    /// sequence, accumulating parameter gradients into `grad` and input
    /// gradients into `d_in`.
    pub fn backward(&self, trace: &LstmTrace, d_out: &Matrix, grad: &mut LstmParams, d_in: &mut Matrix) {
        let n = d_out.rows();
        let hid = self.hidden();
        let inp = self.input();
        let mut dh_next = vec![0.0; hid];
        let mut dc_next = vec![0.0; hid];
        let mut da = vec![0.0; GATES * hid];
        let mut dxh = vec![0.0; inp + hid];
        for s in (0..n).rev() {
            let t = if trace.reverse { n - 1 - s } else { s };
            let act = trace.act.row(s);
            let tanh_c = trace.tanh_c.row(s);
            let c_prev = trace.c_prev.row(s);
            let d_row = d_out.row(t);
            for k in 0..hid {
                let (i, f, o, g) = (act[k], act[hid + k], act[2 * hid + k], act[3 * hid + k]);
                let dh = d_row[k] + dh_next[k];
                let tc = tanh_c[k];
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                da[k] = dc * g * i * (1.0 - i);
                da[hid + k] = dc * c_prev[k] * f * (1.0 - f);
                da[2 * hid + k] = dh * tc * o * (1.0 - o);
                da[3 * hid + k] = dc * i * (1.0 - g * g);
                dc_next[k] = dc * f;
            }
            grad.w.add_outer(&da, trace.xh.row(s));
            for (gb, d) in grad.b.as_mut_slice().iter_mut().zip(&da) {
                *gb += d;
            }
            dxh.iter_mut().for_each(|v| *v = 0.0);
            self.w.add_transpose_mul(&da, &mut dxh);
            for (di, dx) in d_in.row_mut(t).iter_mut().zip(&dxh[..inp]) {
                *di += dx;
            }
            dh_next.copy_from_slice(&dxh[inp..]);
        }
    }
}

/// Per-step activations kept from the forward pass, indexed by processing step.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    reverse: bool,
    xh: Matrix,
    act: Matrix,
    c: Matrix,
    c_prev: Matrix,
    tanh_c: Matrix,
}
