//! Text encoder, multitask heads and their training procedures.

mod checkpoint;
mod encoder;
mod features;
mod heads;
mod lstm;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use encoder::{bow_average, encoder_forward, ConcatRepresentation, EncoderParams};
pub use features::{extract_features, features_from_reps, FeatureMode};
pub use heads::{heads_forward, HeadParams, HeadsOutput, Normalizer, PretrainHead};
pub use lstm::LstmParams;
pub use train::{concat_reps, multitask_train, pretrain_emoji, train_heads, HeadTrainingSet, Task, TrainReport};

#[doc(hidden)]
pub mod gradients {
    //! Loss/gradient closures over flat parameter blocks, used by the
    //! finite-difference test suites.
    pub use super::train::{multitask_loss_blocks, pretrain_loss_blocks};
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Hidden units per LSTM direction.
    pub lstm_hidden: usize,
    pub n_appraisals: usize,
    pub n_emotions: usize,
    pub n_emojis: usize,
    pub max_len: usize,
    /// Step size for multitask training of the heads.
    pub learning_rate: f64,
    /// Step size for emoji pretraining of the encoder.
    pub pretrain_learning_rate: f64,
    pub batch_size: usize,
    /// Emoji pretraining epochs.
    pub epochs: usize,
    /// Multitask epochs; one epoch is one pass over the stories.
    pub head_epochs: usize,
    /// Weight of the appraisal MSE relative to the emotion cross-entropy.
    pub appraisal_weight: f64,
    /// Half-width of the uniform weight initialization.
    pub init_scale: f64,
    pub forget_bias: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embed_dim: 32,
            lstm_hidden: 32,
            n_appraisals: 38,
            n_emotions: 20,
            n_emojis: 64,
            max_len: crate::textproc::DEFAULT_MAX_LEN,
            learning_rate: 0.05,
            pretrain_learning_rate: 3.0,
            batch_size: 16,
            epochs: 10,
            head_epochs: 150,
            appraisal_weight: 1.0,
            init_scale: 0.1,
            forget_bias: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("n_appraisals", self.n_appraisals),
            ("n_emotions", self.n_emotions),
            ("n_emojis", self.n_emojis),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("{name} must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.pretrain_learning_rate > 0.0 && self.pretrain_learning_rate.is_finite())
        {
            return Err(Error::arg("learning rates must be positive"));
        }
        if !(self.appraisal_weight >= 0.0 && self.appraisal_weight.is_finite()) {
            return Err(Error::arg("appraisal_weight must be nonnegative"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::arg("init_scale must be positive"));
        }
        Ok(())
    }

    pub fn concat_dim(&self) -> usize {
        self.embed_dim + 4 * self.lstm_hidden
    }
}
