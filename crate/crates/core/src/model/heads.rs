//! The appraisal reconstruction layer and the emotion/emoji softmax heads.
//!
//! Heads see the Concat representation after a fixed per-dimension
//! standardization fitted on the training inputs. That is an affine
//! reparametrization of the first layer and does not change what the heads
//! can express.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::numkernel::Normalizer;
use crate::numkernel::{cross_entropy_unchecked, mse_unchecked, softmax_unchecked, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// `n_appraisals × rep_dim`, identity activation.
    pub appraisal_w: Matrix,
    pub appraisal_b: Matrix,
    /// `n_emotions × (rep_dim + n_appraisals)`
    pub emotion_w: Matrix,
    pub emotion_b: Matrix,
    /// `n_emojis × (rep_dim + n_appraisals)`
    pub emoji_w: Matrix,
    pub emoji_b: Matrix,
    /// Standardization applied to the Concat representation before any head.
    pub rep_norm: Normalizer,
    /// Statistics used to z-score appraisal ratings; the appraisal layer
    /// predicts in this z-scored space.
    pub appraisal_norm: Normalizer,
}

impl HeadParams {
    pub const BLOCK_NAMES: [&'static str; 6] = [
        "appraisal.w",
        "appraisal.b",
        "emotion.w",
        "emotion.b",
        "emoji.w",
        "emoji.b",
    ];

    pub fn zeros(rep_dim: usize, n_appraisals: usize, n_emotions: usize, n_emojis: usize) -> Self {
        let joint = rep_dim + n_appraisals;
        HeadParams {
            appraisal_w: Matrix::zeros(n_appraisals, rep_dim),
            appraisal_b: Matrix::zeros(1, n_appraisals),
            emotion_w: Matrix::zeros(n_emotions, joint),
            emotion_b: Matrix::zeros(1, n_emotions),
            emoji_w: Matrix::zeros(n_emojis, joint),
            emoji_b: Matrix::zeros(1, n_emojis),
            rep_norm: Normalizer::identity(rep_dim),
            appraisal_norm: Normalizer::identity(n_appraisals),
        }
    }

    pub fn random<R: Rng>(
        rep_dim: usize,
        n_appraisals: usize,
        n_emotions: usize,
        n_emojis: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(rep_dim, n_appraisals, n_emotions, n_emojis);
        for m in p.weights_mut() {
            for v in m.as_mut_slice() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rep_dim(), self.n_appraisals(), self.n_emotions(), self.n_emojis())
    }

    pub fn rep_dim(&self) -> usize {
        self.appraisal_w.cols()
    }

    pub fn n_appraisals(&self) -> usize {
        self.appraisal_w.rows()
    }

    pub fn n_emotions(&self) -> usize {
        self.emotion_w.rows()
    }

    pub fn n_emojis(&self) -> usize {
        self.emoji_w.rows()
    }

    fn weights(&self) -> [&Matrix; 6] {
        [
            &self.appraisal_w,
            &self.appraisal_b,
            &self.emotion_w,
            &self.emotion_b,
            &self.emoji_w,
            &self.emoji_b,
        ]
    }

    fn weights_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.appraisal_w,
            &mut self.appraisal_b,
            &mut self.emotion_w,
            &mut self.emotion_b,
            &mut self.emoji_w,
            &mut self.emoji_b,
        ]
    }

    /// Trainable blocks in [`Self::BLOCK_NAMES`] order.
    pub fn blocks(&self) -> Vec<Matrix> {
        self.weights().into_iter().cloned().collect()
    }

    /// Replaces the trainable blocks, keeping this instance's normalizers.
    pub fn with_blocks(&self, blocks: &[Matrix]) -> Result<Self> {
        if blocks.len() != 6 || blocks.iter().zip(self.weights()).any(|(b, w)| b.shape() != w.shape()) {
            return Err(Error::arg("head blocks do not match head shapes"));
        }
        let mut out = self.clone();
        for (dst, src) in out.weights_mut().into_iter().zip(blocks) {
            *dst = src.clone();
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, a) = (self.rep_dim(), self.n_appraisals());
        let ok = self.appraisal_b.shape() == (1, a)
            && self.emotion_w.cols() == r + a
            && self.emotion_b.shape() == (1, self.n_emotions())
            && self.emoji_w.cols() == r + a
            && self.emoji_b.shape() == (1, self.n_emojis())
            && self.rep_norm.dim() == r
            && self.appraisal_norm.dim() == a;
        if ok {
            Ok(())
        } else {
            Err(Error::arg("inconsistent head parameter shapes"))
        }
    }

    /// `self += alpha * other` over the trainable blocks only.
    pub fn add_scaled(&mut self, alpha: f64, other: &HeadParams) {
        for (mine, theirs) in self.weights_mut().into_iter().zip(other.weights()) {
            mine.add_scaled(alpha, theirs);
        }
    }

    pub fn checksum(&self) -> String {
        super::encoder::checksum_blocks(&self.blocks())
    }

    /// Appraisal-layer output for an already standardized representation.
    pub(crate) fn appraisal_z(&self, z_rep: &[f64]) -> Vec<f64> {
        self.appraisal_w.affine(z_rep, self.appraisal_b.as_slice())
    }

    fn joint(&self, z_rep: &[f64]) -> Vec<f64> {
        let mut joint = z_rep.to_vec();
        joint.extend(self.appraisal_z(z_rep));
        joint
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsOutput {
    /// Appraisal-layer output, in z-scored rating units.
    pub appraisals: Vec<f64>,
    pub emotion_probs: Vec<f64>,
    pub emoji_probs: Vec<f64>,
}

pub fn heads_forward(rep: &[f64], heads: &HeadParams) -> Result<HeadsOutput> {
    if rep.len() != heads.rep_dim() {
        return Err(Error::arg(format!(
            "representation has {} dims, heads expect {}",
            rep.len(),
            heads.rep_dim()
        )));
    }
    let z = heads.rep_norm.apply(rep);
    let joint = heads.joint(&z);
    let appraisals = joint[z.len()..].to_vec();
    let emotion_probs = softmax_unchecked(&heads.emotion_w.affine(&joint, heads.emotion_b.as_slice()));
    let emoji_probs = softmax_unchecked(&heads.emoji_w.affine(&joint, heads.emoji_b.as_slice()));
    Ok(HeadsOutput {
        appraisals,
        emotion_probs,
        emoji_probs,
    })
}

pub(crate) struct StoryLoss {
    pub emotion_ce: f64,
    pub appraisal_mse: f64,
}

/// Loss `CE(emotion) + weight·MSE(appraisal)` for one story; gradients are
/// accumulated into `grad` and the gradient w.r.t. the standardized
/// representation is returned.
pub(crate) fn story_backward(
    heads: &HeadParams,
    z_rep: &[f64],
    emotion: usize,
    appraisal_target_z: &[f64],
    appraisal_weight: f64,
    grad: &mut HeadParams,
) -> (StoryLoss, Vec<f64>) {
    let r = z_rep.len();
    let a = heads.n_appraisals();
    let joint = heads.joint(z_rep);
    let appr = &joint[r..];
    let probs = softmax_unchecked(&heads.emotion_w.affine(&joint, heads.emotion_b.as_slice()));
    let loss = StoryLoss {
        emotion_ce: cross_entropy_unchecked(&probs, emotion),
        appraisal_mse: mse_unchecked(appr, appraisal_target_z),
    };

    let mut d_logits = probs;
    d_logits[emotion] -= 1.0;
    grad.emotion_w.add_outer(&d_logits, &joint);
    add_to(&mut grad.emotion_b, &d_logits);
    let mut d_joint = vec![0.0; r + a];
    heads.emotion_w.add_transpose_mul(&d_logits, &mut d_joint);

    let scale = appraisal_weight * 2.0 / a as f64;
    let d_appr: Vec<f64> = d_joint[r..]
        .iter()
        .zip(appr.iter().zip(appraisal_target_z))
        .map(|(d, (p, t))| d + scale * (p - t))
        .collect();
    let d_rep = appraisal_backward(heads, z_rep, &d_appr, &d_joint[..r], grad);
    (loss, d_rep)
}

/// Cross-entropy of the emoji head for one tweet.
pub(crate) fn emoji_backward(
    heads: &HeadParams,
    z_rep: &[f64],
    emoji: usize,
    grad: &mut HeadParams,
) -> (f64, Vec<f64>) {
    let r = z_rep.len();
    let joint = heads.joint(z_rep);
    let probs = softmax_unchecked(&heads.emoji_w.affine(&joint, heads.emoji_b.as_slice()));
    let ce = cross_entropy_unchecked(&probs, emoji);

    let mut d_logits = probs;
    d_logits[emoji] -= 1.0;
    grad.emoji_w.add_outer(&d_logits, &joint);
    add_to(&mut grad.emoji_b, &d_logits);
    let mut d_joint = vec![0.0; joint.len()];
    heads.emoji_w.add_transpose_mul(&d_logits, &mut d_joint);
    let d_rep = appraisal_backward(heads, z_rep, &d_joint[r..], &d_joint[..r], grad);
    (ce, d_rep)
}

fn appraisal_backward(
    heads: &HeadParams,
    z_rep: &[f64],
    d_appr: &[f64],
    d_rep_direct: &[f64],
    grad: &mut HeadParams,
) -> Vec<f64> {
    grad.appraisal_w.add_outer(d_appr, z_rep);
    add_to(&mut grad.appraisal_b, d_appr);
    let mut d_rep = d_rep_direct.to_vec();
    heads.appraisal_w.add_transpose_mul(d_appr, &mut d_rep);
    d_rep
}

fn add_to(m: &mut Matrix, v: &[f64]) {
    for (x, d) in m.as_mut_slice().iter_mut().zip(v) {
        *x += d;
    }
}

/// Emoji-only softmax head used during pretraining, before an appraisal
/// layer exists. Reads the raw Concat representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainHead {
    pub w: Matrix,
    pub b: Matrix,
}

impl PretrainHead {
    pub fn zeros(rep_dim: usize, n_emojis: usize) -> Self {
        PretrainHead {
            w: Matrix::zeros(n_emojis, rep_dim),
            b: Matrix::zeros(1, n_emojis),
        }
    }

    pub fn random<R: Rng>(rep_dim: usize, n_emojis: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(rep_dim, n_emojis);
        for v in p.w.as_mut_slice() {
            *v = rng.random_range(-scale..=scale);
        }
        p
    }

    pub(crate) fn backward(&self, rep: &[f64], emoji: usize, grad: &mut PretrainHead) -> (f64, Vec<f64>) {
        let probs = softmax_unchecked(&self.w.affine(rep, self.b.as_slice()));
        let ce = cross_entropy_unchecked(&probs, emoji);
        let mut d_logits = probs;
        d_logits[emoji] -= 1.0;
        grad.w.add_outer(&d_logits, rep);
        add_to(&mut grad.b, &d_logits);
        let mut d_rep = vec![0.0; rep.len()];
        self.w.add_transpose_mul(&d_logits, &mut d_rep);
        (ce, d_rep)
    }
}
