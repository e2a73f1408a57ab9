//! The full experiment: pretrain, multitask, extract every feature space,
//! classify under both conditions, and compare feature RDMs with neural RDMs.

use std::borrow::Cow;

use affectlab::classify::{
    balanced_split, evaluate_accuracy_ci_with, evaluate_refit, split_accuracy, AccuracyReport, AccuracyRow,
};
use affectlab::data::{emotion_names, StoryExample, TweetExample};
use affectlab::model::{
    concat_reps, features_from_reps, multitask_train, pretrain_emoji, train_heads, FeatureMode, HeadTrainingSet,
};
use affectlab::rsa::{add_tom_aggregate, compute_rdm, emotion_centroids, group_level_rsa_with, kendall_tau};
use affectlab::textproc::{build_vocab, encode_text, tokenize, EncodedText, Vocab};
use affectlab::{Checkpoint, Error, HeadParams, Matrix, NeuralRdmSet, Rdm, Result, SynthWorld, TrainReport};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FROM_TEXT: &str = "from-text";
pub const WITH_APPRAISALS: &str = "with-appraisals";
/// Feature space made of the stories' own appraisal ratings.
pub const APPRAISAL_SPACE: &str = "appraisals";
pub const CHANCE_ROW: &str = "chance";
/// Table 2 row comparing feature RDMs with the generator's prototype RDM.
pub const TRUTH_ROW: &str = "truth";

const STREAM_SHUFFLE: u64 = 7;

/// Inputs to the pipeline, either loaded from disk or generated.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub stories: Vec<StoryExample>,
    pub tweets: Vec<TweetExample>,
    pub neural: Vec<NeuralRdmSet>,
    /// Emotion names in label order; also the RDM labels.
    pub emotion_names: Vec<String>,
    /// Ground-truth emotion RDM, when known.
    pub truth: Option<Rdm>,
}

impl Corpus {
    pub fn from_world(world: SynthWorld) -> Self {
        Corpus {
            stories: world.stories,
            tweets: world.tweets,
            neural: world.neural,
            emotion_names: world.emotion_names,
            truth: Some(world.truth_rdm),
        }
    }

    /// Emotion names come from the neural RDM labels when any are present.
    pub fn new(
        stories: Vec<StoryExample>,
        tweets: Vec<TweetExample>,
        neural: Vec<NeuralRdmSet>,
        n_emotions: usize,
    ) -> Result<Self> {
        let names = match neural.iter().find_map(|s| s.labels()) {
            Some(labels) if labels.len() != n_emotions => {
                return Err(Error::Data(format!(
                    "neural RDMs have {} labels but there are {n_emotions} emotions",
                    labels.len()
                )))
            }
            Some(labels) => labels.to_vec(),
            None => emotion_names(n_emotions),
        };
        Ok(Corpus {
            stories,
            tweets,
            neural,
            emotion_names: names,
            truth: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaRow {
    pub region: String,
    /// One group-level tau per feature space, in `RsaTable::spaces` order.
    pub taus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsaTable {
    pub spaces: Vec<String>,
    pub rows: Vec<RsaRow>,
    /// Whether the ToM row was aggregated from the other regions.
    pub tom_computed: bool,
}

impl RsaTable {
    pub fn tau(&self, region: &str, space: &str) -> Option<f64> {
        let col = self.spaces.iter().position(|s| s == space)?;
        let row = self.rows.iter().find(|r| r.region == region)?;
        Some(row.taus[col])
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub table1: Vec<AccuracyRow>,
    pub table2: RsaTable,
    /// Feature-space RDMs, `appraisals` first.
    pub rdms: Vec<(String, Rdm)>,
    pub pretrain: TrainReport,
    pub multitask: TrainReport,
    pub checkpoint: Checkpoint,
}

impl PipelineOutcome {
    pub fn accuracy(&self, model: &str, condition: &str) -> Option<f64> {
        self.table1
            .iter()
            .find(|r| r.model == model && r.condition == condition)
            .map(|r| r.report.mean)
    }
}

pub fn corpus_vocab(stories: &[StoryExample], tweets: &[TweetExample], min_count: usize) -> Result<Vocab> {
    let tokens: Vec<Vec<String>> = tweets
        .iter()
        .map(|t| tokenize(&t.text))
        .chain(stories.iter().map(|s| tokenize(&s.text)))
        .collect();
    build_vocab(&tokens, min_count)
}

pub fn encode_stories(stories: &[StoryExample], vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedText>> {
    stories
        .iter()
        .map(|s| {
            let e = encode_text(&s.text, vocab, max_len)?;
            if e.content_len() == 0 {
                return Err(Error::Data(format!("story {:?} has no tokens", s.id)));
            }
            Ok(e)
        })
        .collect()
}

fn hstack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Accuracy against labels permuted independently for every repeat.
fn shuffled_label_accuracy(features: &Matrix, labels: &[usize], cfg: &RunConfig) -> Result<AccuracyReport> {
    use rayon::prelude::*;
    let accuracies = (0..cfg.split.n_repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((r as u64) << 8) | STREAM_SHUFFLE);
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng);
            let (train, test) = balanced_split(&shuffled, &cfg.split, r)?;
            split_accuracy(features, &shuffled, &train, &test, &cfg.svm)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AccuracyReport::from_accuracies(accuracies))
}

pub fn run_pipeline(corpus: &Corpus, cfg: &RunConfig) -> Result<PipelineOutcome> {
    let model_cfg = &cfg.model;
    let n_emotions = model_cfg.n_emotions;
    if corpus.emotion_names.len() != n_emotions {
        return Err(Error::Argument("emotion names do not match n_emotions".into()));
    }
    let vocab = corpus_vocab(&corpus.stories, &corpus.tweets, cfg.vocab_min_count)?;

    let (encoder, pretrain) = pretrain_emoji(&corpus.tweets, &vocab, model_cfg)?;
    let (heads, multitask) = multitask_train(&encoder, &corpus.stories, &corpus.tweets, &vocab, model_cfg)?;
    let mut resolved = model_cfg.clone();
    resolved.vocab_size = vocab.len();

    let story_texts = encode_stories(&corpus.stories, &vocab, model_cfg.max_len)?;
    let tweet_texts: Vec<EncodedText> = corpus
        .tweets
        .iter()
        .map(|t| encode_text(&t.text, &vocab, model_cfg.max_len))
        .collect::<Result<_>>()?;
    let story_reps = concat_reps(&story_texts, &encoder)?;
    let tweet_reps = concat_reps(&tweet_texts, &encoder)?;
    let labels: Vec<usize> = corpus.stories.iter().map(|s| s.emotion).collect();
    let ratings_rows: Vec<Vec<f64>> = corpus.stories.iter().map(|s| s.appraisals.clone()).collect();
    let ratings = Matrix::from_rows(&ratings_rows)?;
    let emojis: Vec<usize> = corpus.tweets.iter().map(|t| t.emoji).collect();
    let embed_dim = encoder.embed_dim();

    // Heads refit on each split's training stories so no test story informs
    // the features it is scored on.
    let split_heads: Vec<HeadParams> = {
        use rayon::prelude::*;
        (0..cfg.split.n_repeats)
            .into_par_iter()
            .map(|r| {
                let (train, _) = balanced_split(&labels, &cfg.split, r)?;
                let reps: Vec<Vec<f64>> = train.iter().map(|&i| story_reps[i].clone()).collect();
                let emotions: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
                let appraisals: Vec<Vec<f64>> = train.iter().map(|&i| ratings_rows[i].clone()).collect();
                let set = HeadTrainingSet {
                    story_reps: &reps,
                    emotions: &emotions,
                    appraisals: &appraisals,
                    tweet_reps: &tweet_reps,
                    emojis: &emojis,
                };
                train_heads(&set, model_cfg).map(|(h, _)| h)
            })
            .collect::<Result<_>>()?
    };

    let mut table1 = Vec::new();
    let static_features = |mode: FeatureMode| features_from_reps(&story_reps, embed_dim, None, mode);

    let chance_features = static_features(FeatureMode::Concat)?;
    for (condition, features) in [
        (WITH_APPRAISALS, hstack(&chance_features, &ratings)?),
        (FROM_TEXT, chance_features.clone()),
    ] {
        table1.push(AccuracyRow {
            model: CHANCE_ROW.into(),
            condition: condition.into(),
            report: shuffled_label_accuracy(&features, &labels, cfg)?,
        });
    }

    for mode in FeatureMode::ALL {
        for with_ratings in [true, false] {
            let report = if mode.needs_heads() {
                evaluate_refit(&labels, &cfg.split, &cfg.svm, |r, _| {
                    let f = features_from_reps(&story_reps, embed_dim, Some(&split_heads[r]), mode)?;
                    Ok(Cow::Owned(if with_ratings { hstack(&f, &ratings)? } else { f }))
                })?
            } else {
                let f = static_features(mode)?;
                let f = if with_ratings { hstack(&f, &ratings)? } else { f };
                evaluate_accuracy_ci_with(&f, &labels, &cfg.split, &cfg.svm)?
            };
            table1.push(AccuracyRow {
                model: mode.as_str().into(),
                condition: if with_ratings { WITH_APPRAISALS } else { FROM_TEXT }.into(),
                report,
            });
        }
    }
    table1.push(AccuracyRow {
        model: APPRAISAL_SPACE.into(),
        condition: WITH_APPRAISALS.into(),
        report: evaluate_accuracy_ci_with(&ratings, &labels, &cfg.split, &cfg.svm)?,
    });

    let mut spaces: Vec<(String, Matrix)> = vec![(APPRAISAL_SPACE.into(), ratings)];
    for mode in FeatureMode::ALL {
        spaces.push((
            mode.as_str().into(),
            features_from_reps(&story_reps, embed_dim, Some(&heads), mode)?,
        ));
    }
    let rdms: Vec<(String, Rdm)> = spaces
        .iter()
        .map(|(name, f)| {
            let centroids = emotion_centroids(f, &labels, n_emotions)?;
            Ok((name.clone(), compute_rdm(&centroids, &corpus.emotion_names)?))
        })
        .collect::<Result<_>>()?;

    let mut neural = corpus.neural.clone();
    let tom_computed = add_tom_aggregate(&mut neural)?;
    let mut rows = Vec::new();
    for set in &neural {
        let taus = rdms
            .iter()
            .map(|(_, rdm)| group_level_rsa_with(rdm, set, cfg.rsa.tau, cfg.rsa.group).map(|r| r.mean_tau))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(RsaRow {
            region: set.region.clone(),
            taus,
        });
    }
    if let Some(truth) = &corpus.truth {
        rows.push(RsaRow {
            region: TRUTH_ROW.into(),
            taus: rdms.iter().map(|(_, r)| kendall_tau(r, truth)).collect::<Result<_>>()?,
        });
    }

    Ok(PipelineOutcome {
        table1,
        table2: RsaTable {
            spaces: rdms.iter().map(|(n, _)| n.clone()).collect(),
            rows,
            tom_computed,
        },
        rdms,
        pretrain,
        multitask,
        checkpoint: Checkpoint::new(resolved, &vocab, encoder, Some(heads)),
    })
}
