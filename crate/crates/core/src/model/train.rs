//! Emoji pretraining of the full encoder and alternating multitask training
//! of the heads over a frozen encoder. Plain mini-batch SGD throughout.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{encoder_backward, encoder_forward_for_training, EncoderParams};
use super::heads::{emoji_backward, story_backward, HeadParams, Normalizer, PretrainHead};
use super::{encoder_forward, ModelConfig};
use crate::data::{StoryExample, TweetExample};
use crate::error::{Error, Result};
use crate::numkernel::Matrix;
use crate::textproc::{encode_text, EncodedText, Vocab};

const STREAM_ENCODER_INIT: u64 = 0;
const STREAM_PRETRAIN_ORDER: u64 = 1;
const STREAM_HEAD_INIT: u64 = 2;
const STREAM_STORY_ORDER: u64 = 3;
const STREAM_TWEET_ORDER: u64 = 4;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Emoji,
    Story,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    /// Mean per-example loss for each epoch, measured before each batch's
    /// update. A series is empty when its task never ran.
    pub emoji_ce: Vec<f64>,
    pub emotion_ce: Vec<f64>,
    pub appraisal_mse: Vec<f64>,
    /// Every optimizer step, in order.
    pub schedule: Vec<Task>,
    /// Checksum of the returned trainable parameters.
    pub snapshot_id: String,
    pub seed: u64,
    /// Encoder checksum before and after multitask training.
    pub encoder_checksum: Option<(String, String)>,
}

impl TrainReport {
    /// True when emoji and story steps strictly alternate, starting with emoji.
    pub fn is_strictly_alternating(&self) -> bool {
        self.schedule
            .iter()
            .enumerate()
            .all(|(i, t)| *t == if i % 2 == 0 { Task::Emoji } else { Task::Story })
    }
}

/// Tokenizes and encodes record texts, rejecting any that have no tokens.
pub(crate) fn encode_records<'a, I>(records: I, vocab: &Vocab, max_len: usize) -> Result<Vec<EncodedText>>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    records
        .into_iter()
        .map(|(id, text)| {
            let e = encode_text(text, vocab, max_len)?;
            if e.content_len() == 0 {
                return Err(Error::data(format!("record {id:?} has no tokens")));
            }
            Ok(e)
        })
        .collect()
}

/// Concat representations for every text, computed in parallel on the
/// current rayon pool. Order matches the input.
pub fn concat_reps(texts: &[EncodedText], encoder: &EncoderParams) -> Result<Vec<Vec<f64>>> {
    texts
        .par_iter()
        .map(|t| encoder_forward(t, encoder).map(|r| r.into_inner()))
        .collect()
}

fn check_emojis(tweets: &[TweetExample], n_emojis: usize) -> Result<()> {
    match tweets.iter().find(|t| t.emoji >= n_emojis) {
        Some(t) => Err(Error::data(format!(
            "tweet {:?}: emoji label {} is not below {n_emojis}",
            t.id, t.emoji
        ))),
        None => Ok(()),
    }
}

fn check_stories(stories: &[StoryExample], config: &ModelConfig) -> Result<()> {
    for s in stories {
        if s.appraisals.len() != config.n_appraisals {
            return Err(Error::data(format!(
                "story {:?}: {} appraisal values, expected {}",
                s.id,
                s.appraisals.len(),
                config.n_appraisals
            )));
        }
        if s.emotion >= config.n_emotions {
            return Err(Error::data(format!(
                "story {:?}: emotion label {} is not below {}",
                s.id, s.emotion, config.n_emotions
            )));
        }
        if s.appraisals.iter().any(|v| !v.is_finite()) {
            return Err(Error::data(format!("story {:?}: non-finite appraisal", s.id)));
        }
    }
    Ok(())
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains the encoder together with a temporary emoji head reading the
/// Concat representation. Returns the encoder only.
pub fn pretrain_emoji(
    tweets: &[TweetExample],
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<(EncoderParams, TrainReport)> {
    let mut config = config.clone();
    config.vocab_size = vocab.len();
    config.validate()?;
    if tweets.is_empty() {
        return Err(Error::arg("pretraining needs at least one tweet"));
    }
    check_emojis(tweets, config.n_emojis)?;
    let texts = encode_records(
        tweets.iter().map(|t| (t.id.as_str(), t.text.as_str())),
        vocab,
        config.max_len,
    )?;
    let labels: Vec<usize> = tweets.iter().map(|t| t.emoji).collect();

    let mut init = rng(config.seed, STREAM_ENCODER_INIT);
    let mut encoder = EncoderParams::random(
        config.vocab_size,
        config.embed_dim,
        config.lstm_hidden,
        config.init_scale,
        config.forget_bias,
        &mut init,
    );
    let mut head = PretrainHead::random(config.concat_dim(), config.n_emojis, config.init_scale, &mut init);
    let mut order_rng = rng(config.seed, STREAM_PRETRAIN_ORDER);
    let mut order: Vec<usize> = (0..texts.len()).collect();

    let mut report = TrainReport {
        epochs: config.epochs,
        emoji_ce: Vec::with_capacity(config.epochs),
        emotion_ce: vec![],
        appraisal_mse: vec![],
        schedule: vec![],
        snapshot_id: String::new(),
        seed: config.seed,
        encoder_checksum: None,
    };
    for _ in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut g_enc = encoder.zeros_like();
            let mut g_head = PretrainHead::zeros(config.concat_dim(), config.n_emojis);
            for &i in batch {
                let (rep, trace) = encoder_forward_for_training(&texts[i], &encoder)?;
                let (ce, d_rep) = head.backward(&rep, labels[i], &mut g_head);
                encoder_backward(&encoder, &trace, &d_rep, &mut g_enc);
                total += ce;
            }
            let step = -config.pretrain_learning_rate / batch.len() as f64;
            encoder.add_scaled(step, &g_enc);
            head.w.add_scaled(step, &g_head.w);
            head.b.add_scaled(step, &g_head.b);
            report.schedule.push(Task::Emoji);
        }
        report.emoji_ce.push(mean(total, texts.len()));
    }
    report.snapshot_id = encoder.checksum();
    Ok((encoder, report))
}

/// Inputs to [`train_heads`]: precomputed Concat representations and targets.
#[derive(Debug, Clone, Copy)]
pub struct HeadTrainingSet<'a> {
    pub story_reps: &'a [Vec<f64>],
    pub emotions: &'a [usize],
    /// Raw appraisal ratings, one vector per story.
    pub appraisals: &'a [Vec<f64>],
    pub tweet_reps: &'a [Vec<f64>],
    pub emojis: &'a [usize],
}

/// Alternating multitask training of the heads on cached representations:
/// one emoji batch, then one story batch, for every story batch of every epoch.
pub fn train_heads(set: &HeadTrainingSet<'_>, config: &ModelConfig) -> Result<(HeadParams, TrainReport)> {
    let n_s = set.story_reps.len();
    if n_s == 0 {
        return Err(Error::arg("multitask training needs at least one story"));
    }
    if set.emotions.len() != n_s || set.appraisals.len() != n_s || set.emojis.len() != set.tweet_reps.len() {
        return Err(Error::arg("training set columns have different lengths"));
    }
    if config.batch_size == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::arg("batch_size and learning_rate must be positive"));
    }
    let rep_dim = set.story_reps[0].len();
    let n_a = config.n_appraisals;
    if set.story_reps.iter().chain(set.tweet_reps).any(|r| r.len() != rep_dim) {
        return Err(Error::arg("representations have inconsistent dimensions"));
    }
    if set.appraisals.iter().any(|a| a.len() != n_a) {
        return Err(Error::data(format!("appraisal vectors must have {n_a} values")));
    }
    if let Some(&e) = set.emotions.iter().find(|&&e| e >= config.n_emotions) {
        return Err(Error::data(format!(
            "emotion label {e} is not below {}",
            config.n_emotions
        )));
    }
    if let Some(&e) = set.emojis.iter().find(|&&e| e >= config.n_emojis) {
        return Err(Error::data(format!("emoji label {e} is not below {}", config.n_emojis)));
    }

    let rep_norm = Normalizer::fit(set.story_reps.iter().chain(set.tweet_reps).map(Vec::as_slice), rep_dim);
    let appraisal_norm = Normalizer::fit(set.appraisals.iter().map(Vec::as_slice), n_a);
    let z_stories: Vec<Vec<f64>> = set.story_reps.iter().map(|r| rep_norm.apply(r)).collect();
    let z_tweets: Vec<Vec<f64>> = set.tweet_reps.iter().map(|r| rep_norm.apply(r)).collect();
    let targets: Vec<Vec<f64>> = set.appraisals.iter().map(|a| appraisal_norm.apply(a)).collect();

    let mut init = rng(config.seed, STREAM_HEAD_INIT);
    let mut heads = HeadParams::random(
        rep_dim,
        n_a,
        config.n_emotions,
        config.n_emojis,
        config.init_scale,
        &mut init,
    );
    heads.rep_norm = rep_norm;
    heads.appraisal_norm = appraisal_norm;

    let mut story_rng = rng(config.seed, STREAM_STORY_ORDER);
    let mut tweet_rng = rng(config.seed, STREAM_TWEET_ORDER);
    let mut story_order: Vec<usize> = (0..n_s).collect();
    let mut tweet_order: Vec<usize> = (0..z_tweets.len()).collect();
    tweet_order.shuffle(&mut tweet_rng);
    let mut tweet_pos = 0;

    let mut report = TrainReport {
        epochs: config.head_epochs,
        emoji_ce: vec![],
        emotion_ce: vec![],
        appraisal_mse: vec![],
        schedule: vec![],
        snapshot_id: String::new(),
        seed: config.seed,
        encoder_checksum: None,
    };
    let lr = config.learning_rate;
    for _ in 0..config.head_epochs {
        story_order.shuffle(&mut story_rng);
        let (mut emoji_sum, mut emoji_n) = (0.0, 0);
        let (mut ce_sum, mut mse_sum) = (0.0, 0.0);
        for story_batch in story_order.chunks(config.batch_size) {
            if !z_tweets.is_empty() {
                let take = config.batch_size.min(z_tweets.len());
                let mut grad = heads.zeros_like();
                for _ in 0..take {
                    if tweet_pos == tweet_order.len() {
                        tweet_order.shuffle(&mut tweet_rng);
                        tweet_pos = 0;
                    }
                    let i = tweet_order[tweet_pos];
                    tweet_pos += 1;
                    emoji_sum += emoji_backward(&heads, &z_tweets[i], set.emojis[i], &mut grad).0;
                    emoji_n += 1;
                }
                heads.add_scaled(-lr / take as f64, &grad);
                report.schedule.push(Task::Emoji);
            }

            let mut grad = heads.zeros_like();
            for &i in story_batch {
                let (loss, _) = story_backward(
                    &heads,
                    &z_stories[i],
                    set.emotions[i],
                    &targets[i],
                    config.appraisal_weight,
                    &mut grad,
                );
                ce_sum += loss.emotion_ce;
                mse_sum += loss.appraisal_mse;
            }
            heads.add_scaled(-lr / story_batch.len() as f64, &grad);
            report.schedule.push(Task::Story);
        }
        if emoji_n > 0 {
            report.emoji_ce.push(emoji_sum / emoji_n as f64);
        }
        report.emotion_ce.push(mean(ce_sum, n_s));
        report.appraisal_mse.push(mean(mse_sum, n_s));
    }
    report.snapshot_id = heads.checksum();
    Ok((heads, report))
}

/// Trains the heads over a frozen encoder. The encoder is only read.
pub fn multitask_train(
    encoder: &EncoderParams,
    stories: &[StoryExample],
    tweets: &[TweetExample],
    vocab: &Vocab,
    config: &ModelConfig,
) -> Result<(HeadParams, TrainReport)> {
    let mut config = config.clone();
    config.vocab_size = vocab.len();
    config.validate()?;
    encoder.validate()?;
    if encoder.vocab_size() != vocab.len() {
        return Err(Error::arg(format!(
            "encoder vocabulary size {} does not match vocabulary of {}",
            encoder.vocab_size(),
            vocab.len()
        )));
    }
    check_stories(stories, &config)?;
    check_emojis(tweets, config.n_emojis)?;
    let before = encoder.checksum();

    let story_texts = encode_records(
        stories.iter().map(|s| (s.id.as_str(), s.text.as_str())),
        vocab,
        config.max_len,
    )?;
    let tweet_texts = encode_records(
        tweets.iter().map(|t| (t.id.as_str(), t.text.as_str())),
        vocab,
        config.max_len,
    )?;
    let story_reps = concat_reps(&story_texts, encoder)?;
    let tweet_reps = concat_reps(&tweet_texts, encoder)?;
    let emotions: Vec<usize> = stories.iter().map(|s| s.emotion).collect();
    let appraisals: Vec<Vec<f64>> = stories.iter().map(|s| s.appraisals.clone()).collect();
    let emojis: Vec<usize> = tweets.iter().map(|t| t.emoji).collect();

    let (heads, mut report) = train_heads(
        &HeadTrainingSet {
            story_reps: &story_reps,
            emotions: &emotions,
            appraisals: &appraisals,
            tweet_reps: &tweet_reps,
            emojis: &emojis,
        },
        &config,
    )?;
    let after = encoder.checksum();
    if before != after {
        return Err(Error::Contract(
            "encoder parameters changed during multitask training".into(),
        ));
    }
    report.encoder_checksum = Some((before, after));
    Ok((heads, report))
}

/// Mean emoji cross-entropy of the encoder plus pretraining head over
/// `texts`. `blocks` holds the nine encoder blocks followed by the head's
/// weight and bias.
pub fn pretrain_loss_blocks(texts: &[EncodedText], labels: &[usize], blocks: &[Matrix]) -> (f64, Vec<Matrix>) {
    let n_enc = EncoderParams::BLOCK_NAMES.len();
    let encoder = EncoderParams::from_blocks(&blocks[..n_enc]).expect("encoder blocks");
    let head = PretrainHead {
        w: blocks[n_enc].clone(),
        b: blocks[n_enc + 1].clone(),
    };
    let mut g_enc = encoder.zeros_like();
    let mut g_head = PretrainHead::zeros(head.w.cols(), head.w.rows());
    let mut total = 0.0;
    for (t, &y) in texts.iter().zip(labels) {
        let (rep, trace) = encoder_forward_for_training(t, &encoder).expect("valid text");
        let (ce, d_rep) = head.backward(&rep, y, &mut g_head);
        encoder_backward(&encoder, &trace, &d_rep, &mut g_enc);
        total += ce;
    }
    let scale = 1.0 / texts.len() as f64;
    let mut grads: Vec<Matrix> = g_enc.blocks();
    grads.push(g_head.w);
    grads.push(g_head.b);
    for g in &mut grads {
        g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
    }
    (total * scale, grads)
}

/// Mean story loss plus mean emoji loss over standardized representations,
/// as a function of the six head blocks of `template`.
#[allow(clippy::too_many_arguments)]
pub fn multitask_loss_blocks(
    template: &HeadParams,
    story_z: &[Vec<f64>],
    emotions: &[usize],
    targets_z: &[Vec<f64>],
    tweet_z: &[Vec<f64>],
    emojis: &[usize],
    appraisal_weight: f64,
    blocks: &[Matrix],
) -> (f64, Vec<Matrix>) {
    let heads = template.with_blocks(blocks).expect("head blocks");
    let mut g_story = heads.zeros_like();
    let mut g_emoji = heads.zeros_like();
    let mut story_total = 0.0;
    for ((z, &y), t) in story_z.iter().zip(emotions).zip(targets_z) {
        let (l, _) = story_backward(&heads, z, y, t, appraisal_weight, &mut g_story);
        story_total += l.emotion_ce + appraisal_weight * l.appraisal_mse;
    }
    let mut emoji_total = 0.0;
    for (z, &y) in tweet_z.iter().zip(emojis) {
        emoji_total += emoji_backward(&heads, z, y, &mut g_emoji).0;
    }
    let ns = story_z.len().max(1) as f64;
    let nt = tweet_z.len().max(1) as f64;
    let mut grad = heads.zeros_like();
    grad.add_scaled(1.0 / ns, &g_story);
    grad.add_scaled(1.0 / nt, &g_emoji);
    (story_total / ns + emoji_total / nt, grad.blocks())
}
