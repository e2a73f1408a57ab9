use affectlab::rsa::{
    compute_rdm, emotion_centroids, group_level_rsa, kendall_counts, kendall_tau, kendall_tau_with,
    parse_rendered_text, rdm_render_ppm, rdm_render_text, NeuralRdmSet, Rdm, TauVariant,
};
use affectlab::Matrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("e{i}")).collect()
}

/// O(n²) pair counting: (concordant − discordant, ties in x, ties in y).
fn brute_force_counts(x: &[f64], y: &[f64]) -> (i64, i64, i64) {
    let (mut s, mut tx, mut ty) = (0, 0, 0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].partial_cmp(&x[j]).unwrap() as i64;
            let dy = y[i].partial_cmp(&y[j]).unwrap() as i64;
            s += dx * dy;
            tx += i64::from(dx == 0);
            ty += i64::from(dy == 0);
        }
    }
    (s, tx, ty)
}

fn random_rdm(k: usize, rng: &mut ChaCha8Rng, quantize: bool) -> Rdm {
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let mut v: f64 = rng.random_range(0.0..10.0);
            if quantize {
                v = v.round();
            }
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Rdm::new(names(k), m).unwrap()
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = gaussian(d, d, rng);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in g.iter_rows() {
        let mut v = r.to_vec();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Matrix::from_rows(&basis).unwrap()
}

#[test]
fn tau_matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let quantize = trial % 2 == 1;
        let a = random_rdm(20, &mut rng, quantize);
        let b = random_rdm(20, &mut rng, quantize);
        let (x, y) = (a.upper_triangle(), b.upper_triangle());
        let (s, tx, ty) = brute_force_counts(&x, &y);
        let (fast_s, n0, n1, n2) = kendall_counts(&x, &y);
        assert_eq!((fast_s, n1, n2), (s, tx, ty), "trial {trial}");
        assert_eq!(n0, 190 * 189 / 2);
        assert_eq!(kendall_tau(&a, &b).unwrap(), s as f64 / n0 as f64);
        let tau_b = s as f64 / (((n0 - tx) as f64) * ((n0 - ty) as f64)).sqrt();
        assert_eq!(kendall_tau_with(&a, &b, TauVariant::B).unwrap(), tau_b);
    }
}

#[test]
fn tau_identity_and_reversal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_rdm(8, &mut rng, false);
    assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
    let max = a.upper_triangle().into_iter().fold(0.0, f64::max);
    let mut rev = Matrix::zeros(8, 8);
    for i in 0..8 {
        for j in 0..8 {
            if i != j {
                rev.set(i, j, max - a.get(i, j));
            }
        }
    }
    let rev = Rdm::new(names(8), rev).unwrap();
    assert_eq!(kendall_tau(&a, &rev).unwrap(), -1.0);
}

#[test]
fn tau_rejects_label_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_rdm(4, &mut rng, false);
    let mut labels = names(4);
    labels.swap(0, 1);
    let b = Rdm::new(labels, a.matrix().clone()).unwrap();
    assert!(kendall_tau(&a, &b).is_err());
}

#[test]
fn compute_rdm_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = gaussian(4, 5, &mut rng);
    let rdm = compute_rdm(&c, &names(4)).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for k in 0..5 {
                acc += (c.get(i, k) - c.get(j, k)).powi(2);
            }
            assert_eq!(rdm.get(i, j), acc.sqrt());
        }
    }
    let triangle = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
    assert_eq!(compute_rdm(&triangle, &names(2)).unwrap().get(0, 1), 5.0);
    let same = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
    assert!(compute_rdm(&same, &names(3))
        .unwrap()
        .upper_triangle()
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn centroids_of_planted_vectors() {
    let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0], vec![-1.0, 0.0]]).unwrap();
    let c = emotion_centroids(&f, &[0, 0, 0, 1], 2).unwrap();
    assert_eq!(c.row(0), &[3.0, 5.0]);
    assert_eq!(c.row(1), &[-1.0, 0.0]);
    assert!(emotion_centroids(&f, &[0, 0, 0, 0], 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rdm_properties_hold_for_random_centroids(seed in any::<u64>(), k in 2usize..9, d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = gaussian(k, d, &mut rng);
        let rdm = compute_rdm(&c, &names(k)).unwrap();
        for i in 0..k {
            prop_assert_eq!(rdm.get(i, i), 0.0);
            for j in 0..k {
                prop_assert_eq!(rdm.get(i, j), rdm.get(j, i));
                prop_assert!(rdm.get(i, j) >= 0.0);
            }
        }
        let q = random_orthogonal(d, &mut rng);
        let rotated = Matrix::from_rows(&c.iter_rows().map(|r| q.affine(r, &vec![0.0; d])).collect::<Vec<_>>()).unwrap();
        let r2 = compute_rdm(&rotated, &names(k)).unwrap();
        for (a, b) in rdm.upper_triangle().iter().zip(r2.upper_triangle()) {
            prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tau_is_symmetric_and_monotone_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_rdm(7, &mut rng, false);
        let b = random_rdm(7, &mut rng, false);
        prop_assert_eq!(kendall_tau(&a, &b).unwrap(), kendall_tau(&b, &a).unwrap());
        let mut e = b.matrix().clone();
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    e.set(i, j, b.get(i, j).exp());
                }
            }
        }
        let exp_b = Rdm::new(names(7), e).unwrap();
        prop_assert_eq!(kendall_tau(&a, &b).unwrap(), kendall_tau(&a, &exp_b).unwrap());
        let tau = kendall_tau(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&tau));
    }
}

fn subject_set(rdms: Vec<Rdm>) -> NeuralRdmSet {
    NeuralRdmSet::new(
        "R",
        rdms.into_iter()
            .enumerate()
            .map(|(i, r)| (format!("s{i}"), r))
            .collect(),
    )
    .unwrap()
}

fn permuted(rdm: &Rdm, perm: &[usize]) -> Rdm {
    let k = rdm.k();
    let mut m = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            m.set(i, j, rdm.get(perm[i], perm[j]));
        }
    }
    Rdm::new(rdm.labels().to_vec(), m).unwrap()
}

#[test]
fn group_rsa_identity_single_subject_and_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = random_rdm(6, &mut rng, false);
    let same = subject_set(vec![f.clone(), f.clone(), f.clone()]);
    assert_eq!(group_level_rsa(&f, &same).unwrap().mean_tau, 1.0);

    let others: Vec<Rdm> = (0..5).map(|_| random_rdm(6, &mut rng, false)).collect();
    let one = subject_set(vec![others[0].clone()]);
    assert_eq!(
        group_level_rsa(&f, &one).unwrap().mean_tau,
        kendall_tau(&f, &others[0]).unwrap()
    );

    let forward = group_level_rsa(&f, &subject_set(others.clone())).unwrap().mean_tau;
    let mut reversed = others;
    reversed.reverse();
    let backward = group_level_rsa(&f, &subject_set(reversed)).unwrap().mean_tau;
    assert!((forward - backward).abs() < 1e-15);
}

#[test]
fn permuted_labels_give_null_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f = random_rdm(20, &mut rng, false);
    let subjects: Vec<Rdm> = (0..100)
        .map(|_| {
            let mut perm: Vec<usize> = (0..20).collect();
            perm.shuffle(&mut rng);
            permuted(&f, &perm)
        })
        .collect();
    let mean = group_level_rsa(&f, &subject_set(subjects)).unwrap().mean_tau;
    assert!(mean.abs() < 0.05, "{mean}");
}

#[test]
fn group_rsa_rejects_empty_region() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = random_rdm(4, &mut rng, false);
    let empty = NeuralRdmSet {
        region: "R".into(),
        subjects: vec![],
    };
    assert!(group_level_rsa(&f, &empty).is_err());
}

#[test]
fn rendering_round_trips_and_heat_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = random_rdm(5, &mut rng, false);
    let back = parse_rendered_text(&rdm_render_text(&r)).unwrap();
    assert_eq!(back.labels(), r.labels());
    for (a, b) in r.upper_triangle().iter().zip(back.upper_triangle()) {
        assert!((a - b).abs() <= 1e-6);
    }

    let zero = Rdm::new(names(3), Matrix::zeros(3, 3)).unwrap();
    let ppm = rdm_render_ppm(&zero, 2);
    let header = b"P6\n6 6\n255\n";
    assert!(ppm.starts_with(header));
    let pixels = &ppm[header.len()..];
    assert!(pixels.chunks(3).all(|p| p == &pixels[..3]));

    let two = Rdm::new(names(2), Matrix::from_rows(&[vec![0.0, 2.5], vec![2.5, 0.0]]).unwrap()).unwrap();
    let text = rdm_render_text(&two);
    let off: Vec<&str> = text
        .lines()
        .skip(1)
        .flat_map(|l| l.split_whitespace().skip(1))
        .filter(|v| *v != "0.00000000")
        .collect();
    assert_eq!(off, vec!["2.50000000", "2.50000000"]);
}
