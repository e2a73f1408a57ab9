use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{bow_average, EncoderParams};
use super::heads::HeadParams;
use super::train::concat_reps;
use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::textproc::EncodedText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Pooled embedding, LSTM1 and LSTM2 outputs.
    Concat,
    /// Output of the appraisal reconstruction layer.
    AppraisalLayer,
    ConcatPlusAppraisal,
    /// Mean embedding only; no recurrent layers.
    BowAverage,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 4] = [
        FeatureMode::BowAverage,
        FeatureMode::Concat,
        FeatureMode::AppraisalLayer,
        FeatureMode::ConcatPlusAppraisal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::Concat => "concat",
            FeatureMode::AppraisalLayer => "appraisal_layer",
            FeatureMode::ConcatPlusAppraisal => "concat_plus_appraisal",
            FeatureMode::BowAverage => "bow_average",
        }
    }

    pub fn needs_heads(self) -> bool {
        matches!(self, FeatureMode::AppraisalLayer | FeatureMode::ConcatPlusAppraisal)
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::arg(format!("unknown feature mode {s:?}")))
    }
}

fn require_heads(heads: Option<&HeadParams>, mode: FeatureMode) -> Result<Option<&HeadParams>> {
    if mode.needs_heads() && heads.is_none() {
        return Err(Error::arg(format!("feature mode {mode} requires trained heads")));
    }
    Ok(heads)
}

/// One feature row per text.
pub fn extract_features(
    texts: &[EncodedText],
    encoder: &EncoderParams,
    heads: Option<&HeadParams>,
    mode: FeatureMode,
) -> Result<Matrix> {
    let heads = require_heads(heads, mode)?;
    if mode == FeatureMode::BowAverage {
        let rows = texts
            .par_iter()
            .map(|t| bow_average(t, encoder))
            .collect::<Result<Vec<_>>>()?;
        return Matrix::from_rows(&rows);
    }
    let reps = concat_reps(texts, encoder)?;
    features_from_reps(&reps, encoder.embed_dim(), heads, mode)
}

/// Same as [`extract_features`] but starting from cached Concat vectors.
pub fn features_from_reps(
    reps: &[Vec<f64>],
    embed_dim: usize,
    heads: Option<&HeadParams>,
    mode: FeatureMode,
) -> Result<Matrix> {
    let heads = require_heads(heads, mode)?;
    if let Some(h) = heads {
        if mode.needs_heads() && reps.iter().any(|r| r.len() != h.rep_dim()) {
            return Err(Error::arg("representation width does not match heads"));
        }
    }
    let rows: Vec<Vec<f64>> = reps
        .iter()
        .map(|rep| match mode {
            FeatureMode::Concat => rep.clone(),
            FeatureMode::BowAverage => rep[..embed_dim].to_vec(),
            FeatureMode::AppraisalLayer | FeatureMode::ConcatPlusAppraisal => {
                let h = heads.expect("checked above");
                let appr = h.appraisal_z(&h.rep_norm.apply(rep));
                if mode == FeatureMode::AppraisalLayer {
                    appr
                } else {
                    let mut row = rep.clone();
                    row.extend(appr);
                    row
                }
            }
        })
        .collect();
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    Matrix::from_rows(&rows)
}
