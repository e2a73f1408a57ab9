//! One-vs-rest linear SVMs, balanced train/test splits and repeated-split
//! accuracy estimates.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, Matrix, Normalizer};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmOptions {
    /// Hinge-loss weight in `½‖w‖² + C·Σ max(0, 1 − y(w·x + b))`.
    pub c: f64,
    /// Full-batch sub-gradient iterations per binary problem.
    pub iterations: usize,
}

impl Default for SvmOptions {
    fn default() -> Self {
        SvmOptions {
            c: DEFAULT_C,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// One row per class.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub c: f64,
    /// Column standardization fitted on the training features.
    pub scaler: Normalizer,
}

impl SvmModel {
    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Decision values `w_c·x + b_c` for one raw (unstandardized) row.
    pub fn decision_values(&self, row: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(row);
        self.weights.affine(&z, &self.bias)
    }
}

/// Per-class objective `½‖w‖² + C·Σ hinge` on standardized rows.
pub fn svm_objective(z: &[&[f64]], y: &[f64], w: &[f64], b: f64, c: f64) -> f64 {
    let hinge: f64 = z
        .iter()
        .zip(y)
        .map(|(x, yi)| (1.0 - yi * (dot(w, x) + b)).max(0.0))
        .sum();
    0.5 * dot(w, w) + c * hinge
}

/// A sub-gradient of [`svm_objective`]; exact wherever no margin equals 1.
pub fn svm_subgradient(z: &[&[f64]], y: &[f64], w: &[f64], b: f64, c: f64) -> (Vec<f64>, f64) {
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (x, &yi) in z.iter().zip(y) {
        if yi * (dot(w, x) + b) < 1.0 {
            for (g, xi) in gw.iter_mut().zip(x.iter()) {
                *g -= c * yi * xi;
            }
            gb -= c * yi;
        }
    }
    (gw, gb)
}

fn check_features(features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::arg(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    if !features.is_finite() {
        return Err(Error::data("features contain NaN or infinite values"));
    }
    Ok(())
}

pub fn svm_train(features: &Matrix, labels: &[usize], c: f64) -> Result<SvmModel> {
    svm_train_with(
        features,
        labels,
        &SvmOptions {
            c,
            ..SvmOptions::default()
        },
    )
}

/// Fits one binary separator per class (classes `0..=max label`) by
/// deterministic full-batch sub-gradient descent.
///
/// The objective is rescaled by `1/(C·n)` so steps follow the strongly convex
/// schedule `η_t = 1/(λ(t+1))` with `λ = 1/(C·n)`; iterates are projected onto
/// the ball that must contain the optimum, and the better of the last iterate
/// and the second-half average is kept.
pub fn svm_train_with(features: &Matrix, labels: &[usize], opts: &SvmOptions) -> Result<SvmModel> {
    check_features(features, labels)?;
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::arg("svm_train needs at least two distinct labels"));
    }
    if !(opts.c > 0.0 && opts.c.is_finite()) || opts.iterations == 0 {
        return Err(Error::arg("C and iterations must be positive"));
    }
    let n_classes = distinct[distinct.len() - 1] + 1;
    let dim = features.cols();
    let n = features.rows();

    let scaler = Normalizer::fit(features.iter_rows(), dim);
    let z: Vec<Vec<f64>> = features.iter_rows().map(|r| scaler.apply(r)).collect();
    let zr: Vec<&[f64]> = z.iter().map(Vec::as_slice).collect();

    let lambda = 1.0 / (opts.c * n as f64);
    let radius = 1.0 / lambda.sqrt();
    let avg_from = opts.iterations / 2;

    let mut weights = Matrix::zeros(n_classes, dim);
    let mut bias = vec![0.0; n_classes];
    let fits: Vec<(Vec<f64>, f64)> = (0..n_classes)
        .into_par_iter()
        .map(|class| {
            let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { -1.0 }).collect();
            let mut w = vec![0.0; dim];
            let mut b = 0.0;
            let mut w_avg = vec![0.0; dim];
            let mut b_avg = 0.0;
            let mut n_avg = 0usize;
            let mut push = vec![0.0; dim];
            for t in 1..=opts.iterations {
                push.iter_mut().for_each(|v| *v = 0.0);
                let mut push_b = 0.0;
                for (x, &yi) in zr.iter().zip(&y) {
                    if yi * (dot(&w, x) + b) < 1.0 {
                        for (p, xi) in push.iter_mut().zip(x.iter()) {
                            *p += yi * xi;
                        }
                        push_b += yi;
                    }
                }
                let eta = 1.0 / (lambda * (t + 1) as f64);
                let shrink = 1.0 - eta * lambda;
                let step = eta / n as f64;
                for (wi, p) in w.iter_mut().zip(&push) {
                    *wi = shrink * *wi + step * p;
                }
                b += step * push_b;
                let norm = dot(&w, &w).sqrt();
                if norm > radius {
                    let s = radius / norm;
                    w.iter_mut().for_each(|v| *v *= s);
                }
                if t > avg_from {
                    n_avg += 1;
                    let k = 1.0 / n_avg as f64;
                    for (a, wi) in w_avg.iter_mut().zip(&w) {
                        *a += (wi - *a) * k;
                    }
                    b_avg += (b - b_avg) * k;
                }
            }
            if n_avg > 0 && svm_objective(&zr, &y, &w_avg, b_avg, opts.c) < svm_objective(&zr, &y, &w, b, opts.c) {
                (w_avg, b_avg)
            } else {
                (w, b)
            }
        })
        .collect();
    for (class, (w, b)) in fits.into_iter().enumerate() {
        weights.row_mut(class).copy_from_slice(&w);
        bias[class] = b;
    }
    Ok(SvmModel {
        weights,
        bias,
        c: opts.c,
        scaler,
    })
}

/// Argmax of the decision values per row; ties go to the lowest class index.
pub fn svm_predict(model: &SvmModel, features: &Matrix) -> Result<Vec<usize>> {
    if features.cols() != model.dim() {
        return Err(Error::arg(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            model.dim()
        )));
    }
    Ok(features
        .iter_rows()
        .map(|row| argmax(&model.decision_values(row)))
        .collect())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub per_class_test: usize,
    pub n_repeats: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            per_class_test: 2,
            n_repeats: 30,
            seed: 0,
        }
    }
}

/// Test set with exactly `per_class_test` examples of every class, drawn
/// from a generator keyed by `(seed, repeat_index)`. Both index lists are sorted.
pub fn balanced_split(labels: &[usize], spec: &SplitSpec, repeat_index: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if spec.per_class_test == 0 {
        return Err(Error::arg("per_class_test must be at least 1"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() <= spec.per_class_test) {
        return Err(Error::data(format!(
            "class {class} has {} examples; need more than {} for a balanced split",
            members.len(),
            spec.per_class_test
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(repeat_index as u64);
    let mut is_test = vec![false; labels.len()];
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        for &i in &members[..spec.per_class_test] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| is_test[i]);
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub mean: f64,
    /// Half-width of the central 90% (5th to 95th percentile) interval.
    pub ci_half_width: f64,
    /// Accuracy of each repeat, indexed by repeat.
    pub accuracies: Vec<f64>,
}

impl AccuracyReport {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let mean = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
        let ci_half_width = if accuracies.len() < 2 {
            0.0
        } else {
            (percentile(&accuracies, 0.95) - percentile(&accuracies, 0.05)) / 2.0
        };
        AccuracyReport {
            mean,
            ci_half_width,
            accuracies,
        }
    }

    pub fn n_repeats(&self) -> usize {
        self.accuracies.len()
    }
}

/// Linear-interpolation percentile, `q` in [0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite accuracies"));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// Trains on `train` rows and returns accuracy on `test` rows.
pub fn split_accuracy(
    features: &Matrix,
    labels: &[usize],
    train: &[usize],
    test: &[usize],
    opts: &SvmOptions,
) -> Result<f64> {
    let train_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let model = svm_train_with(&rows(features, train), &train_labels, opts)?;
    let predicted = svm_predict(&model, &rows(features, test))?;
    let correct = predicted.iter().zip(test).filter(|(p, &i)| **p == labels[i]).count();
    Ok(correct as f64 / test.len() as f64)
}

pub fn evaluate_accuracy_ci(features: &Matrix, labels: &[usize], spec: &SplitSpec, c: f64) -> Result<AccuracyReport> {
    evaluate_accuracy_ci_with(
        features,
        labels,
        spec,
        &SvmOptions {
            c,
            ..SvmOptions::default()
        },
    )
}

pub fn evaluate_accuracy_ci_with(
    features: &Matrix,
    labels: &[usize],
    spec: &SplitSpec,
    opts: &SvmOptions,
) -> Result<AccuracyReport> {
    check_features(features, labels)?;
    evaluate_refit(labels, spec, opts, |_, _| Ok(std::borrow::Cow::Borrowed(features)))
}

/// Repeated balanced-split evaluation where the feature matrix may depend on
/// the split (e.g. features from a model fitted on the training rows only).
/// `features_for(repeat, train)` must return one row per label.
pub fn evaluate_refit<'a, F>(
    labels: &[usize],
    spec: &SplitSpec,
    opts: &SvmOptions,
    features_for: F,
) -> Result<AccuracyReport>
where
    F: Fn(usize, &[usize]) -> Result<std::borrow::Cow<'a, Matrix>> + Sync,
{
    if spec.n_repeats == 0 {
        return Err(Error::arg("n_repeats must be at least 1"));
    }
    let accuracies = (0..spec.n_repeats)
        .into_par_iter()
        .map(|r| {
            let (train, test) = balanced_split(labels, spec, r)?;
            let features = features_for(r, &train)?;
            check_features(&features, labels)?;
            split_accuracy(&features, labels, &train, &test, opts)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AccuracyReport::from_accuracies(accuracies))
}

/// One line of a Table 1 style report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub condition: String,
    pub report: AccuracyReport,
}

pub fn format_accuracy_table(rows: &[AccuracyRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<16}  {:>6}  {:>6}  {:>9}",
        "model", "condition", "mean", "ci", "n_repeats"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:<16}  {:>6.3}  {:>6.3}  {:>9}",
            r.model,
            r.condition,
            r.report.mean,
            r.report.ci_half_width,
            r.report.n_repeats()
        );
    }
    out
}
