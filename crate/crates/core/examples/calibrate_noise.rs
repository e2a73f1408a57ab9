//! Finds the neural noise level at which the appraisal-space RDM of the
//! default synthetic world reaches a target group tau on the ToM aggregate.
//!
//! Usage: cargo run --release -p affectlab --example calibrate_noise [target] [seed]

use affectlab::data::{calibrate_neural_noise, generate_synthetic};
use affectlab::rsa::{compute_rdm, emotion_centroids};
use affectlab::{Matrix, SynthConfig};

fn main() -> affectlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let target: f64 = args.next().map_or(0.27, |s| s.parse().expect("target tau"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let world = generate_synthetic(&cfg)?;
    let rows: Vec<Vec<f64>> = world.stories.iter().map(|s| s.appraisals.clone()).collect();
    let labels: Vec<usize> = world.stories.iter().map(|s| s.emotion).collect();
    let centroids = emotion_centroids(&Matrix::from_rows(&rows)?, &labels, cfg.n_emotions)?;
    let reference = compute_rdm(&centroids, &world.emotion_names)?;
    let sd = calibrate_neural_noise(&world.truth_rdm, &reference, target, cfg.regions.len(), 400, seed)?;
    println!("neural_noise_sd = {sd:.4}");
    Ok(())
}
