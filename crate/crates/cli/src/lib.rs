//! Command-line driver for the affectlab experiments.
//!
//! Exit status: 0 on success, 2 on usage errors, 1 on any data, I/O or
//! validation error.

pub mod config;
pub mod features;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use affectlab::classify::{evaluate_accuracy_ci_with, AccuracyRow};
use affectlab::data::{generate_synthetic, load_neural_rdms, load_stories_with, load_tweets_with};
use affectlab::model::{extract_features, multitask_train, pretrain_emoji, CHECKPOINT_FORMAT};
use affectlab::rsa::{
    add_tom_aggregate, compute_rdm, emotion_centroids, group_level_rsa_with, GroupMode, TauVariant, RDM_FORMAT,
};
use affectlab::{Checkpoint, Error, FeatureMode, Matrix, Rdm, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::features::{FeatureFile, FEATURES_FORMAT};
use crate::pipeline::{
    corpus_vocab, encode_stories, run_pipeline, Corpus, APPRAISAL_SPACE, FROM_TEXT, WITH_APPRAISALS,
};
use crate::report::{rsa_text, table1_json, table1_text, write_file, write_pipeline_reports};

static VERSION: LazyLock<String> = LazyLock::new(|| {
    format!(
        "{}\ncheckpoint format: {CHECKPOINT_FORMAT}\nrdm format: {RDM_FORMAT}\nfeatures format: {FEATURES_FORMAT}",
        env!("CARGO_PKG_VERSION")
    )
});

#[derive(Debug, Parser)]
#[command(name = "affectlab", version = VERSION.as_str(), about = "Appraisal-aware text representations: training, classification and RSA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for generation, training and splits.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    /// Number of balanced train/test splits.
    #[arg(long)]
    repeats: Option<usize>,
    /// Emoji pretraining epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Multitask epochs.
    #[arg(long)]
    head_epochs: Option<usize>,
    #[arg(long, value_enum)]
    tau: Option<TauArg>,
    #[arg(long, value_enum)]
    group_mode: Option<GroupArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TauArg {
    A,
    B,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupArg {
    MeanOfSubjects,
    SubjectMeanRdm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Condition {
    FromText,
    WithAppraisals,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world (stories, tweets, neural RDMs).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the encoder on emoji prediction.
    Pretrain {
        #[arg(long)]
        tweets: PathBuf,
        /// Stories whose words join the vocabulary.
        #[arg(long)]
        stories: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the appraisal, emotion and emoji heads over a frozen encoder.
    Multitask {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stories: PathBuf,
        #[arg(long)]
        tweets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write story features from a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stories: PathBuf,
        /// bow_average, concat, appraisal_layer or concat_plus_appraisal.
        #[arg(long)]
        mode: FeatureMode,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Balanced-split SVM accuracy of a feature file.
    Classify {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value = "from-text")]
        condition: Condition,
        /// Stories supplying ratings for the with-appraisals condition.
        #[arg(long)]
        stories: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Group-level RSA of one feature space against neural RDMs.
    Rsa {
        #[arg(long)]
        neural: PathBuf,
        #[arg(long, conflicts_with = "stories", required_unless_present = "stories")]
        features: Option<PathBuf>,
        /// Use the stories' appraisal ratings as the feature space.
        #[arg(long)]
        stories: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Full experiment producing the Table 1 and Table 2 reports.
    Pipeline {
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        synth: bool,
        /// Directory with stories.jsonl, tweets.jsonl and neural/.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Pretrain { common, .. }
            | Command::Multitask { common, .. }
            | Command::Extract { common, .. }
            | Command::Classify { common, .. }
            | Command::Rsa { common, .. }
            | Command::Pipeline { common, .. } => common,
        }
    }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::resolve(self.config.as_deref(), self.seed)?;
        if let Some(r) = self.repeats {
            cfg.split.n_repeats = r;
        }
        if let Some(e) = self.epochs {
            cfg.model.epochs = e;
        }
        if let Some(e) = self.head_epochs {
            cfg.model.head_epochs = e;
        }
        if let Some(t) = self.tau {
            cfg.rsa.tau = match t {
                TauArg::A => TauVariant::A,
                TauArg::B => TauVariant::B,
            };
        }
        if let Some(g) = self.group_mode {
            cfg.rsa.group = match g {
                GroupArg::MeanOfSubjects => GroupMode::MeanOfSubjects,
                GroupArg::SubjectMeanRdm => GroupMode::SubjectMeanRdm,
            };
        }
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    let cfg = command.common().resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(command.common().jobs as usize)
        .build()
        .map_err(|e| Error::Argument(e.to_string()))?;
    pool.install(|| dispatch(command, &cfg))
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<()> {
    let m = &cfg.model;
    match command {
        Command::Synth { out, .. } => {
            let world = generate_synthetic(&cfg.synth)?;
            world.write_to(&out)?;
            write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
            print(&format!(
                "wrote {} stories, {} tweets and {} neural regions to {}\n",
                world.stories.len(),
                world.tweets.len(),
                world.neural.len(),
                out.display()
            ));
        }
        Command::Pretrain {
            tweets, stories, out, ..
        } => {
            let tweets = load_tweets_with(&tweets, m.n_emojis)?;
            let stories = match stories {
                Some(p) => load_stories_with(&p, m.n_appraisals, m.n_emotions)?,
                None => vec![],
            };
            let vocab = corpus_vocab(&stories, &tweets, cfg.vocab_min_count)?;
            let (encoder, report) = pretrain_emoji(&tweets, &vocab, m)?;
            let mut resolved = m.clone();
            resolved.vocab_size = vocab.len();
            Checkpoint::new(resolved, &vocab, encoder, None).save(&out)?;
            print(&format!(
                "emoji cross-entropy per epoch: {}\n",
                join_losses(&report.emoji_ce)
            ));
        }
        Command::Multitask {
            checkpoint,
            stories,
            tweets,
            out,
            ..
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let vocab = ckpt.vocab()?;
            let stories = load_stories_with(&stories, m.n_appraisals, m.n_emotions)?;
            let tweets = load_tweets_with(&tweets, m.n_emojis)?;
            let mut model_cfg = m.clone();
            model_cfg.embed_dim = ckpt.config.embed_dim;
            model_cfg.lstm_hidden = ckpt.config.lstm_hidden;
            model_cfg.max_len = ckpt.config.max_len;
            let (heads, report) = multitask_train(&ckpt.encoder, &stories, &tweets, &vocab, &model_cfg)?;
            model_cfg.vocab_size = vocab.len();
            Checkpoint::new(model_cfg, &vocab, ckpt.encoder, Some(heads)).save(&out)?;
            print(&format!(
                "emotion cross-entropy per epoch: {}\nappraisal MSE per epoch: {}\n",
                join_losses(&report.emotion_ce),
                join_losses(&report.appraisal_mse)
            ));
        }
        Command::Extract {
            checkpoint,
            stories,
            mode,
            out,
            ..
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let vocab = ckpt.vocab()?;
            let stories = load_stories_with(&stories, m.n_appraisals, m.n_emotions)?;
            let texts = encode_stories(&stories, &vocab, ckpt.config.max_len)?;
            let features = extract_features(&texts, &ckpt.encoder, ckpt.heads.as_ref(), mode)?;
            FeatureFile {
                mode: mode.as_str().to_string(),
                ids: stories.iter().map(|s| s.id.clone()).collect(),
                labels: stories.iter().map(|s| s.emotion).collect(),
                features,
            }
            .save(&out)?;
        }
        Command::Classify {
            features,
            condition,
            stories,
            out,
            ..
        } => {
            let file = FeatureFile::load(&features)?;
            let (matrix, name) = match condition {
                Condition::FromText => (file.features.clone(), FROM_TEXT),
                Condition::WithAppraisals => {
                    let path = stories.ok_or_else(|| {
                        Error::Argument("--condition with-appraisals needs --stories for the ratings".into())
                    })?;
                    let stories = load_stories_with(&path, m.n_appraisals, m.n_emotions)?;
                    (file.with_ratings(&stories, &path)?, WITH_APPRAISALS)
                }
            };
            let row = AccuracyRow {
                model: file.mode.clone(),
                condition: name.into(),
                report: evaluate_accuracy_ci_with(&matrix, &file.labels, &cfg.split, &cfg.svm)?,
            };
            let text = table1_text(cfg, std::slice::from_ref(&row));
            if let Some(out) = out {
                write_file(&out, text.as_bytes())?;
                write_file(&out.with_extension("json"), table1_json(cfg, &[row]).as_bytes())?;
            }
            print(&text);
        }
        Command::Rsa {
            neural,
            features,
            stories,
            out,
            ..
        } => {
            let mut sets = load_neural_rdms(&neural)?;
            if sets.is_empty() {
                return Err(Error::Data(format!("{}: no .rdm files found", neural.display())));
            }
            add_tom_aggregate(&mut sets)?;
            let labels = sets[0].labels().expect("loaded sets have subjects").to_vec();
            let (space, matrix, emotions) = match (features, stories) {
                (Some(path), _) => {
                    let f = FeatureFile::load(&path)?;
                    (f.mode, f.features, f.labels)
                }
                (None, Some(path)) => {
                    let stories = load_stories_with(&path, m.n_appraisals, labels.len())?;
                    let rows: Vec<Vec<f64>> = stories.iter().map(|s| s.appraisals.clone()).collect();
                    let emotions = stories.iter().map(|s| s.emotion).collect();
                    (APPRAISAL_SPACE.to_string(), Matrix::from_rows(&rows)?, emotions)
                }
                (None, None) => unreachable!("clap requires one feature source"),
            };
            let rdm = feature_rdm(&matrix, &emotions, &labels)?;
            let results = sets
                .iter()
                .map(|s| group_level_rsa_with(&rdm, s, cfg.rsa.tau, cfg.rsa.group))
                .collect::<Result<Vec<_>>>()?;
            let text = rsa_text(cfg, &space, &results);
            if let Some(out) = out {
                write_file(&out, text.as_bytes())?;
            }
            print(&text);
        }
        Command::Pipeline { synth, data, out, .. } => {
            let corpus = if synth {
                let mut synth_cfg = cfg.synth.clone();
                synth_cfg.n_emotions = m.n_emotions;
                synth_cfg.n_appraisals = m.n_appraisals;
                synth_cfg.n_emojis = m.n_emojis;
                Corpus::from_world(generate_synthetic(&synth_cfg)?)
            } else {
                load_corpus(data.as_deref().expect("clap requires --data"), cfg)?
            };
            let outcome = run_pipeline(&corpus, cfg)?;
            write_pipeline_reports(&out, cfg, &outcome)?;
            print(&report::table1_text(cfg, &outcome.table1));
            print(&report::table2_text(cfg, &outcome.table2));
        }
    }
    Ok(())
}

fn feature_rdm(features: &Matrix, emotions: &[usize], labels: &[String]) -> Result<Rdm> {
    let centroids = emotion_centroids(features, emotions, labels.len())?;
    compute_rdm(&centroids, labels)
}

fn load_corpus(dir: &Path, cfg: &RunConfig) -> Result<Corpus> {
    let m = &cfg.model;
    let stories = load_stories_with(&dir.join("stories.jsonl"), m.n_appraisals, m.n_emotions)?;
    let tweets = load_tweets_with(&dir.join("tweets.jsonl"), m.n_emojis)?;
    let neural_dir = dir.join("neural");
    let neural = if neural_dir.is_dir() {
        load_neural_rdms(&neural_dir)?
    } else {
        vec![]
    };
    let mut corpus = Corpus::new(stories, tweets, neural, m.n_emotions)?;
    let truth = dir.join("truth.rdm");
    if truth.is_file() {
        corpus.truth = Some(Rdm::load(&truth)?);
    }
    Ok(corpus)
}

fn join_losses(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}
