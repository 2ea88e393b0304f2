use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vfl_recon_core::attack::{
    attack_accuracy, attack_linear_equations, attack_linear_regression, build_attack_matrix,
    eliminate_bias, solve_exact_cover_via_attack, AttackMatrix, BinaryVector, LeverageSampler,
};
use vfl_recon_core::data::{
    synth_dataset, synth_planted, ColumnSpec, Dataset, FeatureKind, FeatureSchema, SynthSpec,
};
use vfl_recon_core::defense::gaussian_masked_forward;
use vfl_recon_core::exactcover::{brute_force_cover, random_instance};
use vfl_recon_core::linalg::{leverage_scores, Matrix};
use vfl_recon_core::model::{init_model, SgdConfig};
use vfl_recon_core::vfl::{collect_inference_transcript, PassiveBottom, PassiveParty, Transcript};
use vfl_recon_core::{Error, RankTolerance};

fn inference_transcript(x_a: &Matrix, k: usize, seed: u64) -> Transcript {
    let m = init_model(x_a.cols(), 0, &[k, 4], 2, seed).unwrap();
    let mut p = PassiveParty::new(
        x_a.clone(),
        PassiveBottom::Plain { w_a: m.w_a },
        SgdConfig::default(),
        seed,
    );
    collect_inference_transcript(&mut p, x_a).unwrap()
}

fn column_bits(x: &Matrix, c: usize) -> Vec<u8> {
    (0..x.rows()).map(|i| u8::from(x.get(i, c) > 0.5)).collect()
}

/// Every nonzero 0/1 vector of the form `sum c_j x_j` with `c in {-1,0,1}`
/// over the given 0/1 columns.
fn signed_combinations(cols: &[Vec<u8>]) -> BTreeSet<Vec<u8>> {
    let n = cols[0].len();
    let mut out = BTreeSet::new();
    let total = 3usize.pow(cols.len() as u32);
    for code in 1..total {
        let mut c = code;
        let mut v = vec![0i32; n];
        for col in cols {
            let coef = (c % 3) as i32 - 1;
            c /= 3;
            for (vi, &b) in v.iter_mut().zip(col) {
                *vi += coef * i32::from(b);
            }
        }
        if v.iter().all(|&x| x == 0 || x == 1) && v.contains(&1) {
            out.insert(v.iter().map(|&x| x as u8).collect());
        }
    }
    out
}

#[test]
fn planted_binary_recovered_from_transcript() {
    let ds = synth_planted(1000, 5, &[2], None, 1).unwrap();
    let t = inference_transcript(ds.features(), 12, 1);
    let am = build_attack_matrix(&t, RankTolerance::default(), None).unwrap();
    assert_eq!(am.dim(), 5);
    let r = attack_linear_equations(&am, 1e-4).unwrap();
    assert_eq!(r.solutions, vec![BinaryVector(column_bits(ds.features(), 2))]);
    let acc = attack_accuracy(r.solutions[0].bits(), &ds, &[0, 1, 2, 3, 4]).unwrap();
    assert_eq!(acc, 1.0);
}

#[test]
fn onehot_group_yields_all_fifteen_sums() {
    let ds = synth_planted(2000, 7, &[], Some(&[1, 2, 3, 4]), 3).unwrap();
    let t = inference_transcript(ds.features(), 10, 3);
    let am = build_attack_matrix(&t, RankTolerance::default(), None).unwrap();
    let r = attack_linear_equations(&am, 1e-4).unwrap();
    let group: Vec<Vec<u8>> = (1..5).map(|c| column_bits(ds.features(), c)).collect();
    let expected = signed_combinations(&group);
    assert_eq!(expected.len(), 15);
    let got: BTreeSet<Vec<u8>> = r.solutions.iter().map(|s| s.0.clone()).collect();
    assert_eq!(got, expected);
}

#[test]
fn onehot_plus_binary_matches_combination_oracle() {
    let ds = synth_planted(2000, 8, &[0], Some(&[2, 3, 4, 5]), 4).unwrap();
    let t = inference_transcript(ds.features(), 12, 4);
    let am = build_attack_matrix(&t, RankTolerance::default(), None).unwrap();
    let r = attack_linear_equations(&am, 1e-4).unwrap();
    let planted: Vec<Vec<u8>> = [0, 2, 3, 4, 5]
        .iter()
        .map(|&c| column_bits(ds.features(), c))
        .collect();
    let expected = signed_combinations(&planted);
    // 15 group sums, the binary itself and its complement via the group total.
    assert_eq!(expected.len(), 17);
    let got: BTreeSet<Vec<u8>> = r.solutions.iter().map(|s| s.0.clone()).collect();
    assert_eq!(got, expected);
}

#[test]
fn identity_attack_matrix_span_is_complete() {
    let am = AttackMatrix::new(Matrix::identity(3), RankTolerance::default()).unwrap();
    let r = attack_linear_equations(&am, 1e-4).unwrap();
    let got: Vec<String> = r.solutions.iter().map(ToString::to_string).collect();
    assert_eq!(got, ["001", "010", "011", "100", "101", "110", "111"]);
}

#[test]
fn bias_elimination_recovers_plant_on_remaining_rows() {
    let n = 800;
    let ds = synth_planted(n, 4, &[1], None, 6).unwrap();
    let t = inference_transcript(ds.features(), 9, 6);
    let z = t.stacked_z().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bias: Vec<f64> = (0..z.cols()).map(|_| rng.random_range(-3.0..3.0)).collect();
    let biased = Matrix::from_fn(n, z.cols(), |i, j| z.get(i, j) + bias[j]);

    let truth = column_bits(ds.features(), 1);
    let pivot = truth.iter().position(|&b| b == 0).unwrap();
    let cleaned = eliminate_bias(&biased, pivot).unwrap();
    let am = AttackMatrix::from_outputs(&cleaned, RankTolerance::default(), None).unwrap();
    assert_eq!(am.dim(), 4);
    let r = attack_linear_equations(&am, 1e-4).unwrap();
    let expected: Vec<u8> = truth
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pivot)
        .map(|(_, &b)| b)
        .collect();
    assert!(r.solutions.contains(&BinaryVector(expected)));
}

#[test]
fn gaussian_masked_transcript_has_no_binary_solution() {
    let ds = synth_planted(3000, 6, &[0, 3], None, 8).unwrap();
    let m = init_model(6, 0, &[16, 4], 2, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = gaussian_masked_forward(&m.w_a, ds.features(), 0.5, &mut rng).unwrap();
    let am = AttackMatrix::from_outputs(&z, RankTolerance::default(), Some(6)).unwrap();
    assert!(attack_linear_equations(&am, 1e-4).unwrap().solutions.is_empty());
}

#[test]
fn regression_recovers_plant_without_noise() {
    let ds = synth_planted(1500, 6, &[4], None, 9).unwrap();
    let t = inference_transcript(ds.features(), 10, 9);
    let am = build_attack_matrix(&t, RankTolerance::default(), None).unwrap();
    let r = attack_linear_regression(&am, 7, 3, 1).unwrap();
    assert_eq!(r.solutions[0].bits(), column_bits(ds.features(), 4).as_slice());
    assert!(r.residuals[0] <= 1e-12);
}

#[test]
fn regression_never_loses_to_the_seed_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Matrix::from_fn(300, 3, |_, _| rng.random_range(-1.0..1.0));
    let am = AttackMatrix::new(a.clone(), RankTolerance::default()).unwrap();
    let r = attack_linear_regression(&am, 4, 0, 5).unwrap();
    let space = vfl_recon_core::linalg::ColumnSpace::new(&a, RankTolerance::default());
    let mut e1 = vec![0u8; 300];
    e1[0] = 1;
    assert!(r.residuals[0] <= space.residual_sq_bits(&e1));
    assert!(r.solutions[0].count_ones() > 0);
}

fn labelled(features: Matrix, kinds: Vec<FeatureKind>) -> Dataset {
    let n = features.rows();
    let columns = kinds
        .into_iter()
        .enumerate()
        .map(|(j, kind)| ColumnSpec {
            name: format!("c{j}"),
            kind,
        })
        .collect();
    Dataset::new(features, vec![0; n], FeatureSchema { columns }, 2).unwrap()
}

#[test]
fn accuracy_examples() {
    // The complement matches the other, independent binary column half the time.
    let ds = synth_planted(4000, 3, &[0, 1], None, 2).unwrap();
    let truth = column_bits(ds.features(), 0);
    assert_eq!(attack_accuracy(&truth, &ds, &[0, 1, 2]).unwrap(), 1.0);
    let flipped: Vec<u8> = truth.iter().map(|b| 1 - b).collect();
    let acc = attack_accuracy(&flipped, &ds, &[0, 1, 2]).unwrap();
    assert!((acc - 0.5).abs() < 0.05, "{acc}");

    let onehot = synth_planted(500, 5, &[], Some(&[0, 1, 2, 3]), 3).unwrap();
    let pair: Vec<u8> = (0..500)
        .map(|i| u8::from(onehot.features().get(i, 0) + onehot.features().get(i, 2) > 0.5))
        .collect();
    assert_eq!(attack_accuracy(&pair, &onehot, &[0, 1, 2, 3, 4]).unwrap(), 1.0);

    let numeric_only = synth_planted(50, 2, &[], None, 1).unwrap();
    assert!(matches!(
        attack_accuracy(&[0; 50], &numeric_only, &[0, 1]),
        Err(Error::NoBinaryFeatures)
    ));
    assert!(matches!(
        attack_accuracy(&[0; 3], &numeric_only, &[0, 1]),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn accuracy_matches_subset_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = 40;
        let cats = rng.random_range(2..6);
        let hot: Vec<usize> = (0..n).map(|_| rng.random_range(0..cats + 1)).collect();
        // Category `cats` stays with the other party, so those rows have no
        // passive one-hot column set.
        let x = Matrix::from_fn(n, cats + 2, |i, j| {
            if j <= cats {
                f64::from(hot[i] == j)
            } else {
                f64::from(rng.random_bool(0.3))
            }
        });
        let mut kinds: Vec<FeatureKind> = (0..=cats)
            .map(|c| FeatureKind::OneHot {
                group: 7,
                category: format!("v{c}"),
            })
            .collect();
        kinds.push(FeatureKind::Binary);
        let ds = labelled(x.clone(), kinds);
        let guess: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();

        let mut best = 0usize;
        for mask in 1u32..1 << cats {
            let m = (0..n)
                .filter(|&i| (hot[i] < cats && mask >> hot[i] & 1 == 1) == (guess[i] == 1))
                .count();
            best = best.max(m);
        }
        let bin = (0..n)
            .filter(|&i| (x.get(i, cats + 1) > 0.5) == (guess[i] == 1))
            .count();
        best = best.max(bin);
        let cols: Vec<usize> = (0..cats).chain([cats + 1]).collect();
        let got = attack_accuracy(&guess, &ds, &cols).unwrap();
        assert_eq!(got, best as f64 / n as f64);
    }
}

#[test]
fn leverage_sampler_frequencies_match_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Matrix::from_fn(12, 3, |i, _| rng.random_range(-1.0..1.0) * (1.0 + i as f64));
    let p = leverage_scores(&a).unwrap();
    let sampler = LeverageSampler::new(&p).unwrap();
    let draws = 1_000_000;
    let mut counts = vec![0usize; p.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..draws {
        counts[sampler.sample(&mut rng)] += 1;
    }
    for (c, &pi) in counts.iter().zip(&p) {
        let freq = *c as f64 / draws as f64;
        let se = (pi * (1.0 - pi) / draws as f64).sqrt();
        assert!((freq - pi).abs() <= 3.0 * se, "freq {freq} vs p {pi} (se {se})");
    }
}

#[test]
fn exact_cover_decisions_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..100u64 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=6);
        let density = rng.random_range(0.15..0.6);
        let inst = random_instance(n, m, density, i).unwrap();
        let (oracle, oracle_cover) = brute_force_cover(&inst).unwrap();
        let (yes, cover) = solve_exact_cover_via_attack(n, inst.subsets()).unwrap();
        assert_eq!(yes, oracle, "instance {i}: {}", inst.to_text());
        if let Some(c) = &oracle_cover {
            assert!(inst.is_cover(c));
        }
        if yes {
            assert!(inst.is_cover(&cover.expect("YES must come with a cover")));
        }
    }
}

#[test]
fn one_hot_noise_scenario_keeps_rank_with_known_dimension() {
    let ds = synth_dataset(&SynthSpec::new(1000, 5, 0, 1).with_binary(vec![0])).unwrap();
    let m = init_model(5, 0, &[14, 4], 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = gaussian_masked_forward(&m.w_a, ds.features(), 0.1, &mut rng).unwrap();
    let full = AttackMatrix::from_outputs(&z, RankTolerance::default(), None).unwrap();
    assert_eq!(full.dim(), 14);
    let capped = AttackMatrix::from_outputs(&z, RankTolerance::default(), Some(5)).unwrap();
    assert_eq!(capped.dim(), 5);
}
