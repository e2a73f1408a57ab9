use affectlab::data::{generate_synthetic, StoryExample, SynthConfig, TweetExample};
use affectlab::model::{
    bow_average, encoder_forward, extract_features, heads_forward, multitask_train, pretrain_emoji, Checkpoint,
    EncoderParams, FeatureMode, LstmParams, ModelConfig,
};
use affectlab::textproc::{build_vocab, encode_text, tokenize, EncodedText, Vocab, PAD};
use affectlab::{Error, Matrix};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One hidden unit, gates in input/forget/output/candidate order, each gate
/// row laid out as `[w_x..., w_h]` followed by its bias.
struct ScalarCell {
    w: [Vec<f64>; 4],
    b: [f64; 4],
}

impl ScalarCell {
    fn run(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let (mut h, mut c) = (0.0, 0.0);
        let mut out = Vec::new();
        for x in xs {
            let pre = |g: usize| -> f64 {
                let w = &self.w[g];
                x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[x.len()] * h + self.b[g]
            };
            let i = sigmoid(pre(0));
            let f = sigmoid(pre(1));
            let o = sigmoid(pre(2));
            let g = pre(3).tanh();
            c = f * c + i * g;
            h = o * c.tanh();
            out.push(h);
        }
        out
    }

    fn params(&self) -> LstmParams {
        let cols = self.w[0].len();
        LstmParams {
            w: Matrix::from_vec(4, cols, self.w.concat()).unwrap(),
            b: Matrix::from_vec(1, 4, self.b.to_vec()).unwrap(),
        }
    }
}

fn cell(input: usize, offset: f64) -> ScalarCell {
    let v = |g: usize| -> Vec<f64> {
        (0..=input)
            .map(|k| 0.1 * (g as f64 + 1.0) - 0.07 * k as f64 + offset)
            .collect()
    };
    ScalarCell {
        w: [v(0), v(1), v(2), v(3)],
        b: [0.05 + offset, 1.0, -0.1, 0.2 - offset],
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn two_token_encoder_matches_hand_execution() {
    let emb = Matrix::from_vec(4, 2, vec![0.0, 0.0, 0.0, 0.0, 0.5, -0.3, -0.2, 0.8]).unwrap();
    let (l1f, l1b, l2f, l2b) = (cell(2, 0.0), cell(2, 0.03), cell(4, -0.02), cell(4, 0.01));
    let params = EncoderParams {
        embedding: emb.clone(),
        lstm1_fwd: l1f.params(),
        lstm1_bwd: l1b.params(),
        lstm2_fwd: l2f.params(),
        lstm2_bwd: l2b.params(),
    };
    let text = EncodedText {
        ids: vec![2, 3, PAD, PAD],
        original_length: 2,
    };
    let rep = encoder_forward(&text, &params).unwrap();

    let xs = vec![emb.row(2).to_vec(), emb.row(3).to_vec()];
    let h1f = l1f.run(&xs);
    let mut h1b = l1b.run(&[xs[1].clone(), xs[0].clone()]);
    h1b.reverse();
    let u: Vec<Vec<f64>> = (0..2).map(|t| vec![xs[t][0], xs[t][1], h1f[t], h1b[t]]).collect();
    let h2f = l2f.run(&u);
    let mut h2b = l2b.run(&[u[1].clone(), u[0].clone()]);
    h2b.reverse();
    let expected = [
        mean(&[xs[0][0], xs[1][0]]),
        mean(&[xs[0][1], xs[1][1]]),
        mean(&h1f),
        mean(&h1b),
        mean(&h2f),
        mean(&h2b),
    ];
    assert_eq!(rep.dim(), 6);
    for (k, (got, want)) in rep.as_slice().iter().zip(expected).enumerate() {
        assert!((got - want).abs() < 1e-14, "component {k}: {got} vs {want}");
    }
}

fn random_encoder(vocab: usize, seed: u64) -> EncoderParams {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    EncoderParams::random(vocab, 4, 3, 0.5, 1.0, &mut rng)
}

#[test]
fn pad_suffix_does_not_change_the_output() {
    let params = random_encoder(9, 1);
    let short = EncodedText {
        ids: vec![4, 2, 7, PAD],
        original_length: 3,
    };
    let long = EncodedText {
        ids: vec![4, 2, 7, PAD, PAD, PAD, PAD, PAD],
        original_length: 3,
    };
    assert_eq!(
        encoder_forward(&short, &params).unwrap(),
        encoder_forward(&long, &params).unwrap()
    );
}

#[test]
fn bow_average_of_one_token_is_its_embedding_row() {
    let params = random_encoder(9, 2);
    let text = EncodedText {
        ids: vec![5, PAD, PAD],
        original_length: 1,
    };
    assert_eq!(bow_average(&text, &params).unwrap(), params.embedding.row(5));
    let all_pad = EncodedText {
        ids: vec![PAD; 3],
        original_length: 0,
    };
    assert!(matches!(bow_average(&all_pad, &params), Err(Error::Argument(_))));
}

fn small_config(seed: u64) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        lstm_hidden: 6,
        max_len: 32,
        epochs: 2,
        head_epochs: 4,
        seed,
        ..ModelConfig::default()
    }
}

fn world(n_stories: usize, n_tweets: usize, seed: u64) -> (Vec<StoryExample>, Vec<TweetExample>, Vocab) {
    let w = generate_synthetic(&SynthConfig {
        n_stories,
        n_tweets,
        n_subjects: 1,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let corpus: Vec<Vec<String>> = w
        .tweets
        .iter()
        .map(|t| tokenize(&t.text))
        .chain(w.stories.iter().map(|s| tokenize(&s.text)))
        .collect();
    let vocab = build_vocab(&corpus, 1).unwrap();
    (w.stories, w.tweets, vocab)
}

fn encode_all(texts: &[&str], vocab: &Vocab, max_len: usize) -> Vec<EncodedText> {
    texts.iter().map(|t| encode_text(t, vocab, max_len).unwrap()).collect()
}

#[test]
fn feature_modes_have_consistent_shapes_and_values() {
    let (stories, tweets, vocab) = world(40, 60, 3);
    let cfg = small_config(3);
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let (heads, _) = multitask_train(&encoder, &stories, &tweets, &vocab, &cfg).unwrap();
    let texts = encode_all(
        &stories.iter().map(|s| s.text.as_str()).collect::<Vec<_>>(),
        &vocab,
        cfg.max_len,
    );

    let concat = extract_features(&texts, &encoder, None, FeatureMode::Concat).unwrap();
    assert_eq!(concat.shape(), (40, 8 + 4 * 6));
    let bow = extract_features(&texts, &encoder, None, FeatureMode::BowAverage).unwrap();
    assert_eq!(bow.shape(), (40, 8));
    let appr = extract_features(&texts, &encoder, Some(&heads), FeatureMode::AppraisalLayer).unwrap();
    assert_eq!(appr.shape(), (40, 38));
    let both = extract_features(&texts, &encoder, Some(&heads), FeatureMode::ConcatPlusAppraisal).unwrap();
    assert_eq!(both.shape(), (40, 32 + 38));

    for (i, t) in texts.iter().enumerate() {
        let rep = encoder_forward(t, &encoder).unwrap();
        let out = heads_forward(rep.as_slice(), &heads).unwrap();
        assert_eq!(appr.row(i), out.appraisals.as_slice());
        assert_eq!(&both.row(i)[..32], concat.row(i));
        assert_eq!(&both.row(i)[32..], appr.row(i));
        assert_eq!(bow.row(i), &concat.row(i)[..8]);
    }
    assert!(matches!(
        extract_features(&texts, &encoder, None, FeatureMode::AppraisalLayer),
        Err(Error::Argument(_))
    ));
}

#[test]
fn pretraining_starts_near_uniform_and_memorizes() {
    let (_, tweets, vocab) = world(1, 128, 4);
    let balanced: Vec<TweetExample> = tweets
        .iter()
        .enumerate()
        .map(|(i, t)| TweetExample {
            emoji: i % 64,
            ..t.clone()
        })
        .collect();
    let cfg = ModelConfig {
        epochs: 1,
        ..small_config(4)
    };
    let (_, report) = pretrain_emoji(&balanced, &vocab, &cfg).unwrap();
    assert!((report.emoji_ce[0] - 64f64.ln()).abs() < 0.3, "{}", report.emoji_ce[0]);

    let memo = &tweets[..50];
    let cfg = ModelConfig {
        epochs: 15,
        ..small_config(4)
    };
    let (_, report) = pretrain_emoji(memo, &vocab, &cfg).unwrap();
    assert_eq!(report.emoji_ce.len(), 15);
    assert!(report.emoji_ce[14] < report.emoji_ce[0], "{:?}", report.emoji_ce);
}

#[test]
fn pretraining_is_deterministic() {
    let (_, tweets, vocab) = world(1, 40, 5);
    let cfg = small_config(5);
    let (a, ra) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let (b, rb) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = pretrain_emoji(&tweets, &vocab, &small_config(6)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn pretraining_names_a_bad_emoji_label() {
    let (_, mut tweets, vocab) = world(1, 10, 6);
    tweets[3].emoji = 64;
    match pretrain_emoji(&tweets, &vocab, &small_config(6)) {
        Err(Error::Data(msg)) => assert!(msg.contains(&tweets[3].id), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn multitask_starts_near_uniform_and_keeps_the_encoder_frozen() {
    let (stories, tweets, vocab) = world(200, 100, 7);
    let balanced: Vec<StoryExample> = stories
        .iter()
        .enumerate()
        .map(|(i, s)| StoryExample {
            emotion: i % 20,
            ..s.clone()
        })
        .collect();
    let cfg = small_config(7);
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let before = encoder.clone();
    let (_, report) = multitask_train(&encoder, &balanced, &tweets, &vocab, &cfg).unwrap();
    assert!(
        (report.emotion_ce[0] - 20f64.ln()).abs() < 0.3,
        "{}",
        report.emotion_ce[0]
    );
    assert_eq!(encoder, before);
    let (b, a) = report.encoder_checksum.clone().unwrap();
    assert_eq!(a, b);
    assert!(report.is_strictly_alternating());
    assert_eq!(
        report.schedule.len(),
        2 * cfg.head_epochs * 200usize.div_ceil(cfg.batch_size)
    );
    assert_eq!(report.emotion_ce.len(), cfg.head_epochs);
    assert_eq!(report.appraisal_mse.len(), cfg.head_epochs);
}

#[test]
fn multitask_rejects_malformed_stories() {
    let (mut stories, tweets, vocab) = world(10, 10, 8);
    let cfg = small_config(8);
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    stories[2].appraisals.pop();
    assert!(matches!(
        multitask_train(&encoder, &stories, &tweets, &vocab, &cfg),
        Err(Error::Data(_))
    ));
    stories[2].appraisals.push(0.0);
    stories[4].emotion = 20;
    assert!(matches!(
        multitask_train(&encoder, &stories, &tweets, &vocab, &cfg),
        Err(Error::Data(_))
    ));
}

#[test]
fn multitask_fits_the_planted_appraisals() {
    let (stories, tweets, vocab) = world(200, 500, 9);
    let cfg = ModelConfig {
        epochs: 4,
        seed: 9,
        ..ModelConfig::default()
    };
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let (_, report) = multitask_train(&encoder, &stories, &tweets, &vocab, &cfg).unwrap();
    let (first, last) = (report.appraisal_mse[0], *report.appraisal_mse.last().unwrap());
    assert!(last < 0.5 * first, "appraisal mse {first} -> {last}");
}

#[test]
fn every_task_loss_falls_on_a_memorization_set() {
    let (stories, tweets, vocab) = world(50, 50, 10);
    let cfg = ModelConfig {
        head_epochs: 40,
        ..small_config(10)
    };
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let (_, r) = multitask_train(&encoder, &stories, &tweets, &vocab, &cfg).unwrap();
    for (name, series) in [
        ("emoji", &r.emoji_ce),
        ("emotion", &r.emotion_ce),
        ("appraisal", &r.appraisal_mse),
    ] {
        assert!(series.last().unwrap() < &series[0], "{name}: {series:?}");
    }
}

#[test]
fn checkpoints_round_trip() {
    let (stories, tweets, vocab) = world(20, 30, 11);
    let cfg = small_config(11);
    let (encoder, _) = pretrain_emoji(&tweets, &vocab, &cfg).unwrap();
    let (heads, _) = multitask_train(&encoder, &stories, &tweets, &vocab, &cfg).unwrap();
    let ckpt = Checkpoint::new(cfg.clone(), &vocab, encoder, Some(heads));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.vocab().unwrap(), vocab);

    let tampered = ckpt.to_json().replace("affectlab-ckpt-v1", "affectlab-ckpt-v0");
    assert!(Checkpoint::from_json(&tampered).is_err());
}
