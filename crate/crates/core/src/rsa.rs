//! Representational dissimilarity matrices over emotion categories, Kendall
//! rank correlation between them, and group-level comparison against
//! per-subject neural RDMs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::Matrix;

pub const RDM_FORMAT: &str = "rdm v1";
pub const TOM_REGION: &str = "ToM";

/// Symmetric, zero-diagonal, nonnegative dissimilarity matrix with labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    labels: Vec<String>,
    matrix: Matrix,
}

impl Rdm {
    pub fn new(labels: Vec<String>, matrix: Matrix) -> Result<Self> {
        let k = labels.len();
        if matrix.shape() != (k, k) {
            return Err(Error::data(format!(
                "RDM matrix is {}x{} but there are {k} labels",
                matrix.rows(),
                matrix.cols()
            )));
        }
        for i in 0..k {
            if matrix.get(i, i).abs() > 1e-12 {
                return Err(Error::data(format!("RDM diagonal entry {i} is not zero")));
            }
            for j in 0..k {
                let (a, b) = (matrix.get(i, j), matrix.get(j, i));
                if a < 0.0 {
                    return Err(Error::data(format!("RDM entry ({i},{j}) is negative")));
                }
                if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
                    return Err(Error::data(format!("RDM is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Rdm { labels, matrix })
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    /// Entries above the diagonal in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let k = self.k();
        let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                out.push(self.matrix.get(i, j));
            }
        }
        out
    }

    /// File form: `# rdm v1 K=<k>`, a comma-separated label line, then K rows.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("# {RDM_FORMAT} K={}\n{}\n", self.k(), self.labels.join(","));
        for row in self.matrix.iter_rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses the file form; `source` names the input in error messages.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::data(format!("{source}:{line}: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| err(1, "empty RDM file".into()))?;
        let k: usize = header
            .trim()
            .strip_prefix(&format!("# {RDM_FORMAT} K="))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(1, format!("expected header `# {RDM_FORMAT} K=<k>`")))?;
        let labels: Vec<String> = lines
            .next()
            .ok_or_else(|| err(2, "missing label line".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if labels.len() != k {
            return Err(err(2, format!("{} labels, header says K={k}", labels.len())));
        }
        let mut data = Vec::with_capacity(k * k);
        for r in 0..k {
            let line_no = r + 3;
            let line = lines
                .next()
                .ok_or_else(|| err(line_no, format!("expected {k} matrix rows")))?;
            let row: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| err(line_no, format!("bad number: {e}")))?;
            if row.len() != k || row.iter().any(|v| !v.is_finite()) {
                return Err(err(line_no, format!("expected {k} finite values")));
            }
            data.extend(row);
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(err(k + 3, "trailing content after matrix".into()));
        }
        let matrix = Matrix::from_vec(k, k, data)?;
        Rdm::new(labels, matrix).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{source}: {msg}")),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Per-subject RDMs for one brain region, sharing one label order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralRdmSet {
    pub region: String,
    /// `(subject id, rdm)` pairs.
    pub subjects: Vec<(String, Rdm)>,
}

impl NeuralRdmSet {
    pub fn new(region: impl Into<String>, subjects: Vec<(String, Rdm)>) -> Result<Self> {
        if let Some((_, first)) = subjects.first() {
            if let Some((id, _)) = subjects.iter().find(|(_, r)| r.labels() != first.labels()) {
                return Err(Error::data(format!(
                    "subject {id} has a different label order from subject {}",
                    subjects[0].0
                )));
            }
        }
        Ok(NeuralRdmSet {
            region: region.into(),
            subjects,
        })
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.subjects.first().map(|(_, r)| r.labels())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaResult {
    pub region: String,
    pub mean_tau: f64,
    pub per_subject: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    /// Ties count as neither concordant nor discordant; divide by all pairs.
    #[default]
    A,
    /// Tie-corrected denominator.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// Mean of the per-subject taus.
    #[default]
    MeanOfSubjects,
    /// Tau against the entrywise mean of the subject RDMs.
    SubjectMeanRdm,
}

/// Row `e` is the mean feature vector of the rows labelled `e`.
pub fn emotion_centroids(features: &Matrix, labels: &[usize], n_classes: usize) -> Result<Matrix> {
    if features.rows() != labels.len() {
        return Err(Error::arg("features and labels have different lengths"));
    }
    let mut sums = Matrix::zeros(n_classes, features.cols());
    let mut counts = vec![0usize; n_classes];
    for (row, &l) in features.iter_rows().zip(labels) {
        if l >= n_classes {
            return Err(Error::data(format!("label {l} is not below {n_classes}")));
        }
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(row) {
            *s += v;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::data(format!("emotion class {missing} has no examples")));
    }
    for (c, &n) in counts.iter().enumerate() {
        sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(sums)
}

/// Pairwise Euclidean distances between centroid rows.
pub fn compute_rdm(centroids: &Matrix, labels: &[String]) -> Result<Rdm> {
    let k = centroids.rows();
    if k != labels.len() || k < 2 {
        return Err(Error::arg(format!(
            "need at least 2 centroids with one label each (got {k} rows, {} labels)",
            labels.len()
        )));
    }
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let d = centroids
                .row(i)
                .iter()
                .zip(centroids.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            m.set(i, j, d);
            m.set(j, i, d);
        }
    }
    Rdm::new(labels.to_vec(), m)
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

fn tied_pairs<T: PartialEq>(sorted: &[T]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Merge sort on the second coordinate, returning the number of strict inversions.
fn sort_counting_swaps(v: &mut [(f64, f64)], buf: &mut Vec<(f64, f64)>) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], buf) + sort_counting_swaps(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if cmp(v[j].1, v[i].1) == Ordering::Less {
            swaps += (mid - i) as i64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// `(concordant − discordant, total pairs, pairs tied in x, pairs tied in y)`
/// in O(n log n).
pub fn kendall_counts(x: &[f64], y: &[f64]) -> (i64, i64, i64, i64) {
    let n = x.len() as i64;
    let n0 = n * (n - 1) / 2;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| cmp(a.0, b.0).then(cmp(a.1, b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);
    let mut buf = Vec::with_capacity(pairs.len());
    let swaps = sort_counting_swaps(&mut pairs, &mut buf);
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let n2 = tied_pairs(&ys);
    (n0 - n1 - n2 + n3 - 2 * swaps, n0, n1, n2)
}

pub fn kendall_tau_values(x: &[f64], y: &[f64], variant: TauVariant) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg("tau inputs have different lengths"));
    }
    if x.len() < 2 {
        return Err(Error::arg("tau needs at least two values"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::arg("tau inputs must be finite"));
    }
    let (s, n0, n1, n2) = kendall_counts(x, y);
    Ok(match variant {
        TauVariant::A => s as f64 / n0 as f64,
        TauVariant::B => {
            let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
            if denom == 0.0 {
                0.0
            } else {
                s as f64 / denom
            }
        }
    })
}

fn check_labels(a: &Rdm, b: &Rdm) -> Result<()> {
    if a.labels() != b.labels() {
        return Err(Error::arg("RDM label orders differ"));
    }
    Ok(())
}

/// Kendall's tau-a between the upper triangles of two RDMs.
pub fn kendall_tau(a: &Rdm, b: &Rdm) -> Result<f64> {
    kendall_tau_with(a, b, TauVariant::A)
}

pub fn kendall_tau_with(a: &Rdm, b: &Rdm, variant: TauVariant) -> Result<f64> {
    check_labels(a, b)?;
    kendall_tau_values(&a.upper_triangle(), &b.upper_triangle(), variant)
}

pub fn group_level_rsa(feature_rdm: &Rdm, neural: &NeuralRdmSet) -> Result<RsaResult> {
    group_level_rsa_with(feature_rdm, neural, TauVariant::A, GroupMode::MeanOfSubjects)
}

pub fn group_level_rsa_with(
    feature_rdm: &Rdm,
    neural: &NeuralRdmSet,
    variant: TauVariant,
    mode: GroupMode,
) -> Result<RsaResult> {
    if neural.subjects.is_empty() {
        return Err(Error::arg(format!("region {} has no subjects", neural.region)));
    }
    let per_subject = neural
        .subjects
        .par_iter()
        .map(|(_, rdm)| kendall_tau_with(feature_rdm, rdm, variant))
        .collect::<Result<Vec<f64>>>()?;
    let mean_tau = match mode {
        GroupMode::MeanOfSubjects => per_subject.iter().sum::<f64>() / per_subject.len() as f64,
        GroupMode::SubjectMeanRdm => {
            let mean = mean_rdm(neural.subjects.iter().map(|(_, r)| r))?;
            kendall_tau_with(feature_rdm, &mean, variant)?
        }
    };
    Ok(RsaResult {
        region: neural.region.clone(),
        mean_tau,
        per_subject,
    })
}

/// Entrywise mean of RDMs sharing one label order.
pub fn mean_rdm<'a, I: IntoIterator<Item = &'a Rdm>>(rdms: I) -> Result<Rdm> {
    let mut iter = rdms.into_iter();
    let first = iter.next().ok_or_else(|| Error::arg("mean of no RDMs"))?;
    let mut sum = first.matrix().clone();
    let mut n = 1.0;
    for r in iter {
        check_labels(first, r)?;
        sum.add_scaled(1.0, r.matrix());
        n += 1.0;
    }
    sum.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    Rdm::new(first.labels().to_vec(), sum)
}

/// Adds a `ToM` region whose subject RDMs are the entrywise mean of each
/// subject's available region RDMs, unless a `ToM` region already exists.
/// Returns whether the aggregate was computed.
pub fn add_tom_aggregate(sets: &mut Vec<NeuralRdmSet>) -> Result<bool> {
    if sets.is_empty() || sets.iter().any(|s| s.region == TOM_REGION) {
        return Ok(false);
    }
    let mut by_subject: BTreeMap<&str, Vec<&Rdm>> = BTreeMap::new();
    for set in sets.iter() {
        for (id, rdm) in &set.subjects {
            by_subject.entry(id.as_str()).or_default().push(rdm);
        }
    }
    let subjects = by_subject
        .into_iter()
        .map(|(id, rdms)| Ok((id.to_string(), mean_rdm(rdms)?)))
        .collect::<Result<Vec<_>>>()?;
    let tom = NeuralRdmSet::new(TOM_REGION, subjects)?;
    sets.push(tom);
    Ok(true)
}

/// Labeled text grid with row and column headers.
pub fn rdm_render_text(rdm: &Rdm) -> String {
    let w = rdm.labels().iter().map(String::len).max().unwrap_or(0).max(12);
    let mut out = String::new();
    let _ = write!(out, "{:<w$}", "");
    for l in rdm.labels() {
        let _ = write!(out, " {l:>w$}");
    }
    out.push('\n');
    for (i, l) in rdm.labels().iter().enumerate() {
        let _ = write!(out, "{l:<w$}");
        for j in 0..rdm.k() {
            let _ = write!(out, " {:>w$.8}", rdm.get(i, j));
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`rdm_render_text`].
pub fn parse_rendered_text(text: &str) -> Result<Rdm> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let labels: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::data("empty RDM table"))?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let k = labels.len();
    let mut data = Vec::with_capacity(k * k);
    for (i, line) in lines.enumerate() {
        let mut cells = line.split_whitespace();
        if cells.next() != labels.get(i).map(String::as_str) {
            return Err(Error::data(format!("row {i} label does not match header")));
        }
        for c in cells {
            data.push(c.parse::<f64>().map_err(|e| Error::data(format!("row {i}: {e}")))?);
        }
    }
    let matrix = Matrix::from_vec(k, k, data)?;
    Rdm::new(labels, matrix)
}

/// Binary PPM (P6) heat map, min-max normalized, `cell` pixels per entry.
pub fn rdm_render_ppm(rdm: &Rdm, cell: usize) -> Vec<u8> {
    let k = rdm.k();
    let cell = cell.max(1);
    let side = k * cell;
    let values = rdm.matrix().as_slice();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for py in 0..side {
        for px in 0..side {
            let v = rdm.get(py / cell, px / cell);
            let t = if span > 0.0 { (v - lo) / span } else { 0.0 };
            out.extend_from_slice(&heat_color(t));
        }
    }
    out
}

fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    [r, g, b]
}
