//! Embedding layer, two bidirectional LSTM layers with embedding skip
//! connections into the second layer, and mean pooling into the Concat
//! representation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::lstm::{LstmParams, LstmTrace};
use crate::error::{Error, Result};
use crate::numkernel::{axpy, Matrix};
use crate::textproc::{EncodedText, PAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `vocab_size × embed_dim`
    pub embedding: Matrix,
    pub lstm1_fwd: LstmParams,
    pub lstm1_bwd: LstmParams,
    /// Input is `[embedding_t ‖ lstm1_t]`, i.e. `embed_dim + 2·hidden` wide.
    pub lstm2_fwd: LstmParams,
    pub lstm2_bwd: LstmParams,
}

impl EncoderParams {
    pub const BLOCK_NAMES: [&'static str; 9] = [
        "embedding",
        "lstm1_fwd.w",
        "lstm1_fwd.b",
        "lstm1_bwd.w",
        "lstm1_bwd.b",
        "lstm2_fwd.w",
        "lstm2_fwd.b",
        "lstm2_bwd.w",
        "lstm2_bwd.b",
    ];

    pub fn zeros(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        let l2_in = embed_dim + 2 * hidden;
        EncoderParams {
            embedding: Matrix::zeros(vocab_size, embed_dim),
            lstm1_fwd: LstmParams::zeros(embed_dim, hidden),
            lstm1_bwd: LstmParams::zeros(embed_dim, hidden),
            lstm2_fwd: LstmParams::zeros(l2_in, hidden),
            lstm2_bwd: LstmParams::zeros(l2_in, hidden),
        }
    }

    pub fn random<R: Rng>(
        vocab_size: usize,
        embed_dim: usize,
        hidden: usize,
        scale: f64,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let mut embedding = Matrix::zeros(vocab_size, embed_dim);
        for v in embedding.as_mut_slice() {
            *v = rng.random_range(-scale..=scale);
        }
        let l2_in = embed_dim + 2 * hidden;
        EncoderParams {
            embedding,
            lstm1_fwd: LstmParams::random(embed_dim, hidden, scale, forget_bias, rng),
            lstm1_bwd: LstmParams::random(embed_dim, hidden, scale, forget_bias, rng),
            lstm2_fwd: LstmParams::random(l2_in, hidden, scale, forget_bias, rng),
            lstm2_bwd: LstmParams::random(l2_in, hidden, scale, forget_bias, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab_size(), self.embed_dim(), self.hidden())
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn hidden(&self) -> usize {
        self.lstm1_fwd.hidden()
    }

    pub fn concat_dim(&self) -> usize {
        self.embed_dim() + 4 * self.hidden()
    }

    fn layers(&self) -> [&LstmParams; 4] {
        [&self.lstm1_fwd, &self.lstm1_bwd, &self.lstm2_fwd, &self.lstm2_bwd]
    }

    fn layers_mut(&mut self) -> [&mut LstmParams; 4] {
        [
            &mut self.lstm1_fwd,
            &mut self.lstm1_bwd,
            &mut self.lstm2_fwd,
            &mut self.lstm2_bwd,
        ]
    }

    /// Parameter blocks in [`Self::BLOCK_NAMES`] order.
    pub fn blocks(&self) -> Vec<Matrix> {
        let mut out = vec![self.embedding.clone()];
        for l in self.layers() {
            out.push(l.w.clone());
            out.push(l.b.clone());
        }
        out
    }

    pub fn from_blocks(blocks: &[Matrix]) -> Result<Self> {
        if blocks.len() != Self::BLOCK_NAMES.len() {
            return Err(Error::arg(format!(
                "expected {} encoder blocks, got {}",
                Self::BLOCK_NAMES.len(),
                blocks.len()
            )));
        }
        let lstm = |k: usize| LstmParams {
            w: blocks[1 + 2 * k].clone(),
            b: blocks[2 + 2 * k].clone(),
        };
        let p = EncoderParams {
            embedding: blocks[0].clone(),
            lstm1_fwd: lstm(0),
            lstm1_bwd: lstm(1),
            lstm2_fwd: lstm(2),
            lstm2_bwd: lstm(3),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (e, h) = (self.embed_dim(), self.hidden());
        let ok1 = [&self.lstm1_fwd, &self.lstm1_bwd]
            .iter()
            .all(|l| l.w.shape() == (4 * h, e + h) && l.b.shape() == (1, 4 * h));
        let ok2 = [&self.lstm2_fwd, &self.lstm2_bwd]
            .iter()
            .all(|l| l.w.shape() == (4 * h, e + 3 * h) && l.b.shape() == (1, 4 * h));
        if !(ok1 && ok2) || e == 0 || h == 0 {
            return Err(Error::arg("inconsistent encoder parameter shapes"));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &EncoderParams) {
        self.embedding.add_scaled(alpha, &other.embedding);
        for (mine, theirs) in self.layers_mut().into_iter().zip(other.layers()) {
            mine.w.add_scaled(alpha, &theirs.w);
            mine.b.add_scaled(alpha, &theirs.b);
        }
    }

    /// SHA-256 over block shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        checksum_blocks(&self.blocks())
    }
}

pub(crate) fn checksum_blocks(blocks: &[Matrix]) -> String {
    let mut hasher = Sha256::new();
    for m in blocks {
        hasher.update((m.rows() as u64).to_le_bytes());
        hasher.update((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Pooled text representation: `[mean embedding ‖ mean lstm1 ‖ mean lstm2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatRepresentation(pub Vec<f64>);

impl ConcatRepresentation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) struct EncoderTrace {
    ids: Vec<usize>,
    traces: [LstmTrace; 4],
}

fn content_ids(text: &EncodedText, params: &EncoderParams) -> Result<Vec<usize>> {
    let vocab = params.vocab_size();
    if let Some(&bad) = text.ids.iter().find(|&&id| id >= vocab) {
        return Err(Error::arg(format!(
            "token id {bad} out of range for vocabulary of {vocab}"
        )));
    }
    let ids: Vec<usize> = text.content().collect();
    if ids.is_empty() {
        return Err(Error::arg("text has no non-PAD tokens"));
    }
    Ok(ids)
}

fn mean_rows(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for row in m.iter_rows() {
        axpy(1.0, row, &mut out);
    }
    let n = m.rows() as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}

fn embed(ids: &[usize], params: &EncoderParams) -> Matrix {
    let mut emb = Matrix::zeros(ids.len(), params.embed_dim());
    for (t, &id) in ids.iter().enumerate() {
        emb.row_mut(t).copy_from_slice(params.embedding.row(id));
    }
    emb
}

pub(crate) fn forward_traced(ids: Vec<usize>, params: &EncoderParams) -> (Vec<f64>, EncoderTrace) {
    let emb = embed(&ids, params);
    let (h1f, t1f) = params.lstm1_fwd.forward(&emb, false);
    let (h1b, t1b) = params.lstm1_bwd.forward(&emb, true);
    let o1 = hstack(&h1f, &h1b);
    let u = hstack(&emb, &o1);
    let (h2f, t2f) = params.lstm2_fwd.forward(&u, false);
    let (h2b, t2b) = params.lstm2_bwd.forward(&u, true);
    let o2 = hstack(&h2f, &h2b);

    let mut rep = mean_rows(&emb);
    rep.extend(mean_rows(&o1));
    rep.extend(mean_rows(&o2));
    (
        rep,
        EncoderTrace {
            ids,
            traces: [t1f, t1b, t2f, t2b],
        },
    )
}

pub fn encoder_forward(text: &EncodedText, params: &EncoderParams) -> Result<ConcatRepresentation> {
    let ids = content_ids(text, params)?;
    Ok(ConcatRepresentation(forward_traced(ids, params).0))
}

pub(crate) fn encoder_forward_for_training(
    text: &EncodedText,
    params: &EncoderParams,
) -> Result<(Vec<f64>, EncoderTrace)> {
    let ids = content_ids(text, params)?;
    Ok(forward_traced(ids, params))
}

/// Mean of the embedding rows over non-PAD positions.
pub fn bow_average(text: &EncodedText, params: &EncoderParams) -> Result<Vec<f64>> {
    let ids = content_ids(text, params)?;
    Ok(mean_rows(&embed(&ids, params)))
}

/// Accumulates the gradient of a scalar loss into `grad`, given the loss
/// gradient with respect to the Concat representation.
pub(crate) fn encoder_backward(params: &EncoderParams, trace: &EncoderTrace, d_rep: &[f64], grad: &mut EncoderParams) {
    let n = trace.ids.len();
    let e = params.embed_dim();
    let h = params.hidden();
    let inv_n = 1.0 / n as f64;
    let d_pool_emb = &d_rep[..e];
    let d_pool1 = &d_rep[e..e + 2 * h];
    let d_pool2 = &d_rep[e + 2 * h..];

    // Layer 2: every step receives the pooled gradient / n.
    let mut d_o2f = Matrix::zeros(n, h);
    let mut d_o2b = Matrix::zeros(n, h);
    for t in 0..n {
        for k in 0..h {
            d_o2f.set(t, k, d_pool2[k] * inv_n);
            d_o2b.set(t, k, d_pool2[h + k] * inv_n);
        }
    }
    let mut d_u = Matrix::zeros(n, e + 2 * h);
    params
        .lstm2_fwd
        .backward(&trace.traces[2], &d_o2f, &mut grad.lstm2_fwd, &mut d_u);
    params
        .lstm2_bwd
        .backward(&trace.traces[3], &d_o2b, &mut grad.lstm2_bwd, &mut d_u);

    // Layer 1 outputs feed both the pooled vector and layer 2's input.
    let mut d_o1f = Matrix::zeros(n, h);
    let mut d_o1b = Matrix::zeros(n, h);
    for t in 0..n {
        let du = d_u.row(t);
        for k in 0..h {
            d_o1f.set(t, k, d_pool1[k] * inv_n + du[e + k]);
            d_o1b.set(t, k, d_pool1[h + k] * inv_n + du[e + h + k]);
        }
    }
    let mut d_emb = Matrix::zeros(n, e);
    params
        .lstm1_fwd
        .backward(&trace.traces[0], &d_o1f, &mut grad.lstm1_fwd, &mut d_emb);
    params
        .lstm1_bwd
        .backward(&trace.traces[1], &d_o1b, &mut grad.lstm1_bwd, &mut d_emb);

    for (t, &id) in trace.ids.iter().enumerate() {
        let row = grad.embedding.row_mut(id);
        axpy(inv_n, d_pool_emb, row);
        axpy(1.0, &d_u.row(t)[..e], row);
        axpy(1.0, d_emb.row(t), row);
    }
    debug_assert!(trace.ids.iter().all(|&id| id != PAD));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::UNK;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn text(ids: &[usize], max_len: usize) -> EncodedText {
        let mut v = ids.to_vec();
        v.resize(max_len, PAD);
        EncodedText {
            ids: v,
            original_length: ids.len(),
        }
    }

    fn params(seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::random(7, 3, 2, 0.4, 1.0, &mut rng)
    }

    #[test]
    fn output_dimension_and_segments() {
        let p = params(1);
        let r = encoder_forward(&text(&[2, 3, 4], 6), &p).unwrap();
        assert_eq!(r.dim(), 3 + 4 * 2);
        assert_eq!(&r.as_slice()[..3], &bow_average(&text(&[2, 3, 4], 6), &p).unwrap()[..]);
    }

    #[test]
    fn single_token_pools_to_step_values() {
        let p = params(2);
        let r = encoder_forward(&text(&[5], 4), &p).unwrap();
        assert_eq!(&r.as_slice()[..3], p.embedding.row(5));
        // With one step the forward and backward directions see identical input.
        let h = 2;
        let o1 = &r.as_slice()[3..3 + 2 * h];
        let emb = Matrix::from_vec(1, 3, p.embedding.row(5).to_vec()).unwrap();
        let (hf, _) = p.lstm1_fwd.forward(&emb, false);
        let (hb, _) = p.lstm1_bwd.forward(&emb, false);
        assert_eq!(&o1[..h], hf.row(0));
        assert_eq!(&o1[h..], hb.row(0));
    }

    #[test]
    fn padding_is_ignored() {
        let p = params(3);
        let a = encoder_forward(&text(&[2, UNK, 4], 3), &p).unwrap();
        let b = encoder_forward(&text(&[2, UNK, 4], 10), &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_pad_and_out_of_range_are_rejected() {
        let p = params(4);
        assert!(matches!(encoder_forward(&text(&[], 4), &p), Err(Error::Argument(_))));
        assert!(matches!(encoder_forward(&text(&[99], 4), &p), Err(Error::Argument(_))));
    }

    #[test]
    fn block_round_trip_and_checksum() {
        let p = params(5);
        let q = EncoderParams::from_blocks(&p.blocks()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.checksum(), q.checksum());
        let mut r = q.clone();
        let v = &mut r.embedding.as_mut_slice()[0];
        *v = f64::from_bits(v.to_bits() + 1);
        assert_ne!(p.checksum(), r.checksum());
    }

    #[test]
    fn second_layer_reads_embedding_skip_connection() {
        let p = params(6);
        assert_eq!(p.lstm2_fwd.input(), p.embed_dim() + 2 * p.hidden());
        assert_eq!(p.lstm2_bwd.input(), p.embed_dim() + 2 * p.hidden());
    }
}
