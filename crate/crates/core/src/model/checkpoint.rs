use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderParams, HeadParams, ModelConfig};
use crate::error::{Error, Result};
use crate::textproc::Vocab;

pub const CHECKPOINT_FORMAT: &str = "affectlab-ckpt-v1";

/// Self-describing JSON container for a trained model. Heads (with their
/// normalization statistics) are absent until multitask training has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    /// Vocabulary tokens in id order, PAD and UNK excluded.
    pub vocab: Vec<String>,
    pub encoder: EncoderParams,
    pub heads: Option<HeadParams>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, vocab: &Vocab, encoder: EncoderParams, heads: Option<HeadParams>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config,
            vocab: vocab.words().to_vec(),
            encoder,
            heads,
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_tokens(self.vocab.clone())
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::data(format!(
                "unsupported checkpoint format {:?} (expected {CHECKPOINT_FORMAT})",
                self.format
            )));
        }
        self.encoder.validate()?;
        if self.encoder.vocab_size() != self.vocab.len() + 2 {
            return Err(Error::data("checkpoint vocabulary does not match embedding rows"));
        }
        if let Some(h) = &self.heads {
            h.validate()?;
            if h.rep_dim() != self.encoder.concat_dim() {
                return Err(Error::data("checkpoint heads do not match encoder width"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::data(format!("malformed checkpoint: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
