//! Appraisal-aware text representations: a recurrent text encoder pretrained
//! on emoji prediction, multitask heads that reconstruct appraisal ratings
//! and predict emotions, linear-SVM evaluation over balanced splits, and
//! representational similarity analysis against neural RDMs.

pub mod classify;
pub mod data;
pub mod error;
pub mod model;
pub mod numkernel;
pub mod rsa;
pub mod textproc;

pub use classify::{AccuracyReport, SplitSpec, SvmModel};
pub use data::{StoryExample, SynthConfig, SynthWorld, TweetExample};
pub use error::{Error, Result};
pub use model::{Checkpoint, EncoderParams, FeatureMode, HeadParams, ModelConfig, TrainReport};
pub use numkernel::{GradCheckReport, Matrix};
pub use rsa::{NeuralRdmSet, Rdm, RsaResult};
pub use textproc::{EncodedText, Vocab};
