//! Story/tweet record files, neural RDM directories, and a seeded synthetic
//! world with planted appraisal structure.
//!
//! Stories and tweets are JSON Lines, one record per line:
//!
//! ```text
//! {"id":"s0001","text":"...","emotion":3,"appraisals":[0.12,-1.5,...]}
//! {"id":"t0001","text":"...","emoji":52}
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{sigmoid, Matrix};
use crate::rsa::{compute_rdm, NeuralRdmSet, Rdm};

pub const N_APPRAISALS: usize = 38;
pub const N_EMOTIONS: usize = 20;
pub const N_EMOJIS: usize = 64;
pub const N_SUBJECTS: usize = 22;
pub const DEFAULT_REGIONS: [&str; 3] = ["DMPFC", "MMPFC", "RTPJ"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryExample {
    pub id: String,
    pub text: String,
    pub emotion: usize,
    /// Raw ratings; never normalized on disk.
    pub appraisals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TweetExample {
    pub id: String,
    pub text: String,
    pub emoji: usize,
}

/// Emotion names used when none are supplied: `emotion00`, `emotion01`, ...
pub fn emotion_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("emotion{i:02}")).collect()
}

fn read_lines(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_jsonl<T, F>(text: &str, source: &str, mut check: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&T) -> std::result::Result<(), String>,
{
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let rec: T = serde_json::from_str(line)
            .map_err(|e| Error::data(format!("{source}:{line_no}: malformed record: {e}")))?;
        check(&rec).map_err(|msg| Error::data(format!("{source}:{line_no}: {msg}")))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_stories(text: &str, source: &str, n_appraisals: usize, n_emotions: usize) -> Result<Vec<StoryExample>> {
    parse_jsonl(text, source, |s: &StoryExample| {
        if s.appraisals.len() != n_appraisals {
            return Err(format!(
                "story {:?} has {} appraisals, expected {n_appraisals}",
                s.id,
                s.appraisals.len()
            ));
        }
        if s.emotion >= n_emotions {
            return Err(format!(
                "story {:?}: emotion {} is not below {n_emotions}",
                s.id, s.emotion
            ));
        }
        if s.text.trim().is_empty() {
            return Err(format!("story {:?} has empty text", s.id));
        }
        if s.appraisals.iter().any(|v| !v.is_finite()) {
            return Err(format!("story {:?} has a non-finite appraisal", s.id));
        }
        Ok(())
    })
}

pub fn parse_tweets(text: &str, source: &str, n_emojis: usize) -> Result<Vec<TweetExample>> {
    parse_jsonl(text, source, |t: &TweetExample| {
        if t.emoji >= n_emojis {
            return Err(format!("tweet {:?}: emoji {} is not below {n_emojis}", t.id, t.emoji));
        }
        if t.text.trim().is_empty() {
            return Err(format!("tweet {:?} has empty text", t.id));
        }
        Ok(())
    })
}

/// Loads stories with the default 38 appraisals and 20 emotions.
pub fn load_stories(path: &Path) -> Result<Vec<StoryExample>> {
    load_stories_with(path, N_APPRAISALS, N_EMOTIONS)
}

pub fn load_stories_with(path: &Path, n_appraisals: usize, n_emotions: usize) -> Result<Vec<StoryExample>> {
    parse_stories(
        &read_lines(path)?,
        &path.display().to_string(),
        n_appraisals,
        n_emotions,
    )
}

pub fn load_tweets(path: &Path) -> Result<Vec<TweetExample>> {
    load_tweets_with(path, N_EMOJIS)
}

pub fn load_tweets_with(path: &Path, n_emojis: usize) -> Result<Vec<TweetExample>> {
    parse_tweets(&read_lines(path)?, &path.display().to_string(), n_emojis)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn write_stories(path: &Path, stories: &[StoryExample]) -> Result<()> {
    write_jsonl(path, stories)
}

pub fn write_tweets(path: &Path, tweets: &[TweetExample]) -> Result<()> {
    write_jsonl(path, tweets)
}

/// Splits `<region>.<subject-id>.rdm` into its parts.
fn rdm_file_parts(path: &Path) -> Option<(String, String)> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".rdm")?;
    let (region, subject) = stem.split_once('.')?;
    if region.is_empty() || subject.is_empty() {
        return None;
    }
    Some((region.to_string(), subject.to_string()))
}

/// Reads every `<region>.<subject-id>.rdm` file in `dir`, grouped by region
/// (sorted) with subjects sorted by id. All files must share one label order.
pub fn load_neural_rdms(dir: &Path) -> Result<Vec<NeuralRdmSet>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "rdm") {
            paths.push(path);
        }
    }
    paths.sort();

    let mut regions: BTreeMap<String, Vec<(String, Rdm)>> = BTreeMap::new();
    let mut reference: Option<(PathBuf, Vec<String>)> = None;
    for path in paths {
        let (region, subject) = rdm_file_parts(&path).ok_or_else(|| {
            Error::data(format!(
                "{}: RDM files must be named <region>.<subject-id>.rdm",
                path.display()
            ))
        })?;
        let rdm = Rdm::load(&path)?;
        match &reference {
            None => reference = Some((path.clone(), rdm.labels().to_vec())),
            Some((first, labels)) if labels != rdm.labels() => {
                return Err(Error::data(format!(
                    "label order in {} differs from {}",
                    path.display(),
                    first.display()
                )));
            }
            Some(_) => {}
        }
        regions.entry(region).or_default().push((subject, rdm));
    }
    regions
        .into_iter()
        .map(|(region, subjects)| NeuralRdmSet::new(region, subjects))
        .collect()
}

pub fn write_neural_rdms(dir: &Path, sets: &[NeuralRdmSet]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for set in sets {
        for (subject, rdm) in &set.subjects {
            rdm.save(&dir.join(format!("{}.{subject}.rdm", set.region)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_stories: usize,
    pub n_tweets: usize,
    pub n_emotions: usize,
    pub n_appraisals: usize,
    /// Must be a power of two; emoji labels are sign cells of
    /// `log2(n_emojis)` projections.
    pub n_emojis: usize,
    /// Total signal tokens, shared out evenly across appraisal dimensions.
    pub vocab_size_signal: usize,
    pub noise_vocab_size: usize,
    /// Expected fraction of noise tokens in a text.
    pub noise_token_rate: f64,
    /// Maximum signal tokens emitted per appraisal dimension.
    pub tokens_per_dim: usize,
    /// Slope of the logistic map from latent appraisal to token count.
    pub signal_gain: f64,
    pub appraisal_noise_sd: f64,
    pub n_subjects: usize,
    pub neural_noise_sd: f64,
    pub regions: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_stories: 200,
            n_tweets: 2000,
            n_emotions: N_EMOTIONS,
            n_appraisals: N_APPRAISALS,
            n_emojis: N_EMOJIS,
            vocab_size_signal: 2 * N_APPRAISALS,
            noise_vocab_size: 100,
            noise_token_rate: 0.2,
            tokens_per_dim: 2,
            signal_gain: 1.5,
            appraisal_noise_sd: 0.7,
            n_subjects: N_SUBJECTS,
            neural_noise_sd: DEFAULT_NEURAL_NOISE_SD,
            regions: DEFAULT_REGIONS.iter().map(|s| s.to_string()).collect(),
            seed: 0,
        }
    }
}

/// Neural noise level at which the appraisal-space group tau of the default
/// world sits near 0.27 (see `calibrate_neural_noise`).
pub const DEFAULT_NEURAL_NOISE_SD: f64 = 3.4;

impl SynthConfig {
    pub fn emoji_bits(&self) -> usize {
        self.n_emojis.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_emojis.is_power_of_two() || self.emoji_bits() > self.n_appraisals {
            return Err(Error::arg(
                "n_emojis must be a power of two no larger than 2^n_appraisals",
            ));
        }
        if self.n_emotions < 2 || self.n_appraisals == 0 {
            return Err(Error::arg("need at least 2 emotions and 1 appraisal"));
        }
        if self.vocab_size_signal < self.n_appraisals {
            return Err(Error::arg(
                "vocab_size_signal must give every appraisal at least one token",
            ));
        }
        if self.noise_vocab_size == 0 || self.tokens_per_dim == 0 {
            return Err(Error::arg("noise_vocab_size and tokens_per_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_token_rate) {
            return Err(Error::arg("noise_token_rate must be in [0, 1)"));
        }
        for (name, v) in [
            ("appraisal_noise_sd", self.appraisal_noise_sd),
            ("neural_noise_sd", self.neural_noise_sd),
            ("signal_gain", self.signal_gain),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::arg(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.regions.iter().any(|r| r.is_empty() || r.contains('.')) {
            return Err(Error::arg("region names must be nonempty and contain no '.'"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub emotion_names: Vec<String>,
    pub stories: Vec<StoryExample>,
    pub tweets: Vec<TweetExample>,
    /// `n_emotions × n_appraisals`.
    pub prototypes: Matrix,
    /// `emoji_bits × n_appraisals`.
    pub emoji_projection: Matrix,
    /// Distances between the emotion prototypes.
    pub truth_rdm: Rdm,
    pub neural: Vec<NeuralRdmSet>,
}

impl SynthWorld {
    pub fn nearest_prototype(&self, appraisals: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (e, p) in self.prototypes.iter_rows().enumerate() {
            let d: f64 = p.iter().zip(appraisals).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (e, d);
            }
        }
        best.0
    }

    pub fn emoji_for(&self, appraisals: &[f64]) -> usize {
        let projected: Vec<f64> = self
            .emoji_projection
            .iter_rows()
            .map(|r| crate::numkernel::dot(r, appraisals))
            .collect();
        emoji_cell(&projected)
    }

    /// Writes `stories.jsonl`, `tweets.jsonl`, `truth.rdm` and `neural/`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_stories(&dir.join("stories.jsonl"), &self.stories)?;
        write_tweets(&dir.join("tweets.jsonl"), &self.tweets)?;
        self.truth_rdm.save(&dir.join("truth.rdm"))?;
        write_neural_rdms(&dir.join("neural"), &self.neural)
    }
}

/// Sign cell of a projection vector: component `k` contributes bit
/// `len-1-k` (first component is the most significant), set when `>= 0`.
pub fn emoji_cell(projected: &[f64]) -> usize {
    projected
        .iter()
        .fold(0usize, |acc, &v| (acc << 1) | usize::from(v >= 0.0))
}

const STREAM_PROTOTYPES: u64 = 0;
const STREAM_PROJECTION: u64 = 1;
const STREAM_STORIES: u64 = 2;
const STREAM_TWEETS: u64 = 3;
const STREAM_NEURAL: u64 = 4;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s);
    r
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite samples")
}

struct TextRenderer {
    signal: Vec<Vec<String>>,
    noise: Vec<String>,
    rate: f64,
    tokens_per_dim: usize,
    gain: f64,
}

impl TextRenderer {
    fn new(cfg: &SynthConfig) -> Self {
        let per_dim = cfg.vocab_size_signal / cfg.n_appraisals;
        TextRenderer {
            signal: (0..cfg.n_appraisals)
                .map(|d| (0..per_dim).map(|k| format!("a{d}v{k}")).collect())
                .collect(),
            noise: (0..cfg.noise_vocab_size).map(|j| format!("n{j}")).collect(),
            rate: cfg.noise_token_rate,
            tokens_per_dim: cfg.tokens_per_dim,
            gain: cfg.signal_gain,
        }
    }

    /// Dimension `d` contributes `round(tokens_per_dim · σ(gain · z_d))`
    /// tokens; signal tokens are shuffled and noise tokens interleaved.
    fn render(&self, latent: &[f64], rng: &mut ChaCha8Rng) -> String {
        use rand::seq::SliceRandom;
        let mut signal: Vec<&str> = Vec::new();
        for (d, &z) in latent.iter().enumerate() {
            let count = (self.tokens_per_dim as f64 * sigmoid(self.gain * z)).round() as usize;
            for _ in 0..count {
                signal.push(self.signal[d].choose(rng).expect("nonempty"));
            }
        }
        signal.shuffle(rng);
        let mut out: Vec<&str> = Vec::with_capacity(signal.len() * 2);
        for tok in signal {
            while rng.random::<f64>() < self.rate {
                out.push(self.noise.choose(rng).expect("nonempty"));
            }
            out.push(tok);
        }
        if out.is_empty() {
            out.push(self.noise.choose(rng).expect("nonempty"));
        }
        out.join(" ")
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let names = emotion_names(cfg.n_emotions);
    let prototypes = gaussian_matrix(
        cfg.n_emotions,
        cfg.n_appraisals,
        &mut stream(cfg.seed, STREAM_PROTOTYPES),
    );
    let emoji_projection = gaussian_matrix(
        cfg.emoji_bits(),
        cfg.n_appraisals,
        &mut stream(cfg.seed, STREAM_PROJECTION),
    );
    let noise = Normal::new(0.0, cfg.appraisal_noise_sd).map_err(|e| Error::arg(e.to_string()))?;
    let renderer = TextRenderer::new(cfg);

    let sample_latent = |prototypes: &Matrix, emotion: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        prototypes.row(emotion).iter().map(|p| p + noise.sample(rng)).collect()
    };

    let mut rng = stream(cfg.seed, STREAM_STORIES);
    let mut stories = Vec::with_capacity(cfg.n_stories);
    for i in 0..cfg.n_stories {
        let emotion = rng.random_range(0..cfg.n_emotions);
        let appraisals = sample_latent(&prototypes, emotion, &mut rng);
        let text = renderer.render(&appraisals, &mut rng);
        stories.push(StoryExample {
            id: format!("s{i:04}"),
            text,
            emotion,
            appraisals,
        });
    }

    let mut world = SynthWorld {
        config: cfg.clone(),
        emotion_names: names.clone(),
        stories,
        tweets: Vec::with_capacity(cfg.n_tweets),
        truth_rdm: compute_rdm(&prototypes, &names)?,
        prototypes,
        emoji_projection,
        neural: vec![],
    };

    let mut rng = stream(cfg.seed, STREAM_TWEETS);
    for i in 0..cfg.n_tweets {
        let source = rng.random_range(0..cfg.n_emotions);
        let latent = sample_latent(&world.prototypes, source, &mut rng);
        let emoji = world.emoji_for(&latent);
        let text = renderer.render(&latent, &mut rng);
        world.tweets.push(TweetExample {
            id: format!("t{i:05}"),
            text,
            emoji,
        });
    }

    let mut rng = stream(cfg.seed, STREAM_NEURAL);
    world.neural = cfg
        .regions
        .iter()
        .map(|region| {
            let subjects = (0..cfg.n_subjects)
                .map(|s| {
                    Ok((
                        format!("sub{:02}", s + 1),
                        noisy_rdm(&world.truth_rdm, cfg.neural_noise_sd, &mut rng)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            NeuralRdmSet::new(region.clone(), subjects)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(world)
}

/// `truth` plus symmetric zero-diagonal Gaussian noise, rectified at zero.
pub fn noisy_rdm<R: Rng>(truth: &Rdm, sd: f64, rng: &mut R) -> Result<Rdm> {
    let k = truth.k();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::arg(e.to_string()))?;
    let mut m = truth.matrix().clone();
    for i in 0..k {
        for j in i + 1..k {
            let v = (truth.get(i, j) + normal.sample(rng)).max(0.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Rdm::new(truth.labels().to_vec(), m)
}

/// Bisection on the neural noise level so that the expected tau between
/// `reference` and the mean of `n_averaged` independent noisy copies of
/// `truth` equals `target`. With `n_averaged` equal to the region count this
/// targets the ToM aggregate.
pub fn calibrate_neural_noise(
    truth: &Rdm,
    reference: &Rdm,
    target: f64,
    n_averaged: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_averaged == 0 || draws == 0 || !(-1.0..1.0).contains(&target) {
        return Err(Error::arg(
            "calibration needs n_averaged, draws > 0 and target in [-1, 1)",
        ));
    }
    let mean_tau = |sd: f64| -> Result<f64> {
        let mut rng = stream(seed, 99);
        let mut total = 0.0;
        for _ in 0..draws {
            let copies = (0..n_averaged)
                .map(|_| noisy_rdm(truth, sd, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            total += crate::rsa::kendall_tau(reference, &crate::rsa::mean_rdm(&copies)?)?;
        }
        Ok(total / draws as f64)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean_tau(hi)? > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::arg("target tau not reachable"));
        }
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if mean_tau(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
