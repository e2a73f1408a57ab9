//! Dense row-major matrices, the loss functions used by the model heads, and a
//! central-difference gradient checker for the hand-derived backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to this value before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("matrix contains a non-finite value"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::arg("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `out = self · x + bias` where `bias` has length `rows`.
    pub fn affine_into(&self, x: &[f64], bias: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for ((o, row), b) in out.iter_mut().zip(self.iter_rows()).zip(bias) {
            *o = dot(row, x) + b;
        }
    }

    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.affine_into(x, bias, &mut out);
        out
    }

    /// `out += selfᵀ · v`.
    pub fn add_transpose_mul(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &s) in self.iter_rows().zip(v) {
            if s != 0.0 {
                axpy(s, row, out);
            }
        }
    }

    /// `self += u ⊗ v`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        let cols = self.cols;
        for (row, &s) in self.data.chunks_mut(cols.max(1)).zip(u) {
            if s != 0.0 {
                axpy(s, v, row);
            }
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

/// Per-dimension `(x - mean) / std` with its inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population statistics over `rows`; near-constant columns keep unit scale.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            n += 1;
            for ((s, q), v) in sum.iter_mut().zip(&mut sq).zip(row) {
                *s += v;
                *q += v * v;
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var.sqrt() < 1e-8 {
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect();
        Normalizer { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("softmax input is not finite"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Negative log probability of `target`, with the probability floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::arg(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::arg(format!("probabilities sum to {total}, not 1")));
    }
    Ok(cross_entropy_unchecked(probs, target))
}

#[inline]
pub(crate) fn cross_entropy_unchecked(probs: &[f64], target: usize) -> f64 {
    // max(.., 0.0) keeps -ln(1.0) from printing as -0
    (-probs[target].max(PROB_FLOOR).ln()).max(0.0)
}

pub fn mse(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::arg(format!(
            "mse length mismatch: {} vs {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::arg("mse of empty vectors"));
    }
    Ok(mse_unchecked(prediction, target))
}

#[inline]
pub(crate) fn mse_unchecked(prediction: &[f64], target: &[f64]) -> f64 {
    let sum: f64 = prediction.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    sum / prediction.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index over all parameter blocks, in block order.
    pub worst_parameter_index: usize,
    pub passed: bool,
    /// Largest relative error within each block.
    pub per_block: Vec<f64>,
    pub tolerance: f64,
}

/// Compares the analytic gradient returned by `loss` against central finite
/// differences for every scalar in `params`.
///
/// `loss` maps a parameter list to `(value, gradient)` where the gradient has
/// one matrix per parameter block with matching shapes.
pub fn grad_check<F>(loss: F, params: &[Matrix], epsilon: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Matrix]) -> (f64, Vec<Matrix>),
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::arg(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (f0, analytic) = loss(params);
    let (f1, analytic_again) = loss(params);
    if f0.to_bits() != f1.to_bits() || analytic != analytic_again {
        return Err(Error::Contract(
            "loss function returned different results for identical inputs".into(),
        ));
    }
    if analytic.len() != params.len() || analytic.iter().zip(params).any(|(g, p)| g.shape() != p.shape()) {
        return Err(Error::Contract("gradient blocks do not match parameter shapes".into()));
    }

    let mut work = params.to_vec();
    let mut worst = 0.0_f64;
    let mut worst_idx = 0;
    let mut per_block = Vec::with_capacity(params.len());
    let mut flat = 0;
    for b in 0..params.len() {
        let mut block_worst = 0.0_f64;
        for k in 0..params[b].len() {
            let orig = params[b].as_slice()[k];
            work[b].as_mut_slice()[k] = orig + epsilon;
            let plus = loss(&work).0;
            work[b].as_mut_slice()[k] = orig - epsilon;
            let minus = loss(&work).0;
            work[b].as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let ga = analytic[b].as_slice()[k];
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
            block_worst = block_worst.max(rel);
            if rel > worst {
                worst = rel;
                worst_idx = flat;
            }
            flat += 1;
        }
        per_block.push(block_worst);
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        worst_parameter_index: worst_idx,
        passed: worst <= tolerance,
        per_block,
        tolerance,
    })
}
