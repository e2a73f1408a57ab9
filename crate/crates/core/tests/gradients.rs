use affectlab::model::gradients::{multitask_loss_blocks, pretrain_loss_blocks};
use affectlab::model::{EncoderParams, HeadParams, Normalizer, PretrainHead};
use affectlab::numkernel::grad_check;
use affectlab::textproc::EncodedText;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn text(ids: &[usize], max_len: usize) -> EncodedText {
    let mut padded = ids.to_vec();
    padded.resize(max_len, 0);
    EncodedText {
        ids: padded,
        original_length: ids.len(),
    }
}

fn micro_encoder(rng: &mut ChaCha8Rng) -> EncoderParams {
    EncoderParams::random(7, 2, 2, 0.5, 1.0, rng)
}

#[test]
fn pretraining_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let encoder = micro_encoder(&mut rng);
    let head = PretrainHead::random(encoder.concat_dim(), 4, 0.5, &mut rng);
    let texts = vec![text(&[2, 3, 4], 5), text(&[5, 1], 5), text(&[6, 2, 2, 3, 4], 5)];
    let labels = vec![0, 3, 1];
    let mut blocks = encoder.blocks();
    blocks.push(head.w.clone());
    blocks.push(head.b.clone());
    let report = grad_check(|b| pretrain_loss_blocks(&texts, &labels, b), &blocks, EPS, TOL).unwrap();
    assert_eq!(report.per_block.len(), 11);
    assert!(report.passed, "{report:?}");
}

#[test]
fn multitask_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rep_dim = 10;
    let mut heads = HeadParams::random(rep_dim, 3, 4, 5, 0.5, &mut rng);
    heads.rep_norm = Normalizer::identity(rep_dim);
    heads.appraisal_norm = Normalizer::identity(3);
    let vecs = |n: usize, d: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let story_z = vecs(3, rep_dim, &mut rng);
    let targets = vecs(3, 3, &mut rng);
    let tweet_z = vecs(3, rep_dim, &mut rng);
    let report = grad_check(
        |b| multitask_loss_blocks(&heads, &story_z, &[0, 2, 3], &targets, &tweet_z, &[4, 0, 1], 0.7, b),
        &heads.blocks(),
        EPS,
        TOL,
    )
    .unwrap();
    assert_eq!(report.per_block.len(), HeadParams::BLOCK_NAMES.len());
    assert!(report.passed, "{report:?}");
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let encoder = micro_encoder(&mut rng);
    let head = PretrainHead::random(encoder.concat_dim(), 4, 0.5, &mut rng);
    let texts = vec![text(&[2, 3], 3)];
    let mut blocks = encoder.blocks();
    blocks.push(head.w.clone());
    blocks.push(head.b.clone());
    let report = grad_check(
        |b| {
            let (l, mut g) = pretrain_loss_blocks(&texts, &[2], b);
            let last = g.len() - 1;
            g[last].as_mut_slice()[0] *= 1.5;
            (l, g)
        },
        &blocks,
        EPS,
        TOL,
    )
    .unwrap();
    assert!(!report.passed);
    assert!(
        (report.max_relative_error - 0.2).abs() < 1e-6,
        "{}",
        report.max_relative_error
    );
}
