use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainmap::semantics::{
    convergence_time, detect_detours, dissimilarity, fit_regression, unigram_features, StateDistribution,
};

fn dist(seed: i64, probs: &[f64]) -> StateDistribution {
    StateDistribution { seed, probs: probs.to_vec() }
}

fn random_paths(rng: &mut ChaCha8Rng, n: usize, k: usize, t: usize) -> Vec<Vec<usize>> {
    (0..n).map(|_| (0..t).map(|_| rng.random_range(0..k)).collect()).collect()
}

fn design(paths: &[Vec<usize>], k: usize) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| unigram_features(0, p, k).unwrap().probs)
        .collect();
    DMatrix::from_fn(paths.len(), k, |i, j| rows[i][j])
}

#[test]
fn hand_enumerated_dissimilarity() {
    let three = [dist(0, &[1.0, 0.0]), dist(1, &[0.0, 1.0]), dist(2, &[0.5, 0.5])];
    assert_eq!(dissimilarity(&three).unwrap(), 2.0 / 3.0);
    let two = [dist(0, &[1.0, 0.0]), dist(1, &[0.0, 1.0])];
    assert_eq!(dissimilarity(&two).unwrap(), 1.0);
    let same = vec![dist(0, &[0.2, 0.3, 0.5]); 4];
    assert_eq!(dissimilarity(&same).unwrap(), 0.0);
    assert!(dissimilarity(&three[..1]).is_err());
    assert!(dissimilarity(&[dist(0, &[1.0]), dist(1, &[0.5, 0.5])]).is_err());
}

#[test]
fn planted_linear_model_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let paths = random_paths(&mut rng, 40, 4, 30);
    let x = design(&paths, 4);
    let beta = [100.0, 400.0, -50.0, 900.0];
    let y: Vec<f64> = x.row_iter().map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let reg = fit_regression(&x, &y).unwrap();
    assert!(reg.r_squared > 1.0 - 1e-10, "{}", reg.r_squared);
    assert!(reg.p_value < 1e-6);
    for (row, want) in x.row_iter().zip(&y) {
        let row: Vec<f64> = row.iter().copied().collect();
        assert!((reg.predict(&row) - want).abs() < 1e-8 * want.abs().max(1.0));
    }
}

#[test]
fn convergence_examples() {
    let series = [(0, 0.1), (10, 0.5), (20, 0.95), (30, 0.99)];
    assert_eq!(convergence_time(&series, 0.9).unwrap(), Some(20));
    assert_eq!(convergence_time(&series, 0.999).unwrap(), None);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dissimilarity_bounded_and_symmetric(seed in any::<u64>(), n in 2usize..8, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.random_range(1..12);
        let paths = random_paths(&mut rng, n, k, t);
        let dists: Vec<StateDistribution> = paths
            .iter()
            .enumerate()
            .map(|(i, p)| unigram_features(i as i64, p, k).unwrap())
            .collect();
        let d = dissimilarity(&dists).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));

        let mut reversed = dists.clone();
        reversed.reverse();
        prop_assert!((dissimilarity(&reversed).unwrap() - d).abs() < 1e-12);

        let relabeled: Vec<StateDistribution> = dists
            .iter()
            .map(|s| StateDistribution { seed: s.seed, probs: s.probs.iter().rev().copied().collect() })
            .collect();
        prop_assert!((dissimilarity(&relabeled).unwrap() - d).abs() < 1e-12);
    }

    #[test]
    fn unigram_of_doubled_path(seed in any::<u64>(), k in 1usize..6, t in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path: Vec<usize> = (0..t).map(|_| rng.random_range(0..k)).collect();
        let doubled = [path.clone(), path.clone()].concat();
        let a = unigram_features(0, &path, k).unwrap();
        let b = unigram_features(0, &doubled, k).unwrap();
        prop_assert_eq!(a.probs.clone(), b.probs);
        prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shifting_targets_changes_nothing(seed in any::<u64>(), shift in -1e4f64..1e4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..5);
        let n = rng.random_range(k + 2..20);
        let paths = random_paths(&mut rng, n, k, 15);
        let x = design(&paths, k);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(100.0..5000.0)).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let a = fit_regression(&x, &y).unwrap();
        let b = fit_regression(&x, &shifted).unwrap();
        for (ca, cb) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((ca - cb).abs() < 1e-8 * ca.abs().max(1.0), "{ca} vs {cb}");
        }
        prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-8);
        prop_assert!((0.0..=1.0).contains(&a.p_value));
        prop_assert!(a.r_squared <= 1.0 + 1e-12);
    }

    #[test]
    fn tighter_gate_never_adds_detours(seed in any::<u64>(), g1 in 0.0f64..1.0, g2 in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 3;
        let paths: Vec<Vec<usize>> = (0..12)
            .map(|_| {
                let skip = rng.random_range(0..k);
                (0..10).map(|_| rng.random_range(0..k)).filter(|&s| s != skip).chain([0]).collect()
            })
            .collect();
        let x = design(&paths, k);
        let y: Vec<f64> = (0..paths.len()).map(|_| rng.random_range(0.0..10.0)).collect();
        let reg = fit_regression(&x, &y).unwrap();
        let refs: Vec<&[usize]> = paths.iter().map(Vec::as_slice).collect();
        let (tight, loose) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let t = detect_detours(&reg, &refs, tight).unwrap().detour_states();
        let l = detect_detours(&reg, &refs, loose).unwrap().detour_states();
        prop_assert!(t.iter().all(|s| l.contains(s)));
    }
}

#[test]
fn states_visited_by_everyone_are_never_detours() {
    let paths: Vec<Vec<usize>> = (0..8).map(|i| [vec![0; 3 + i], vec![1; 5], vec![2; 10 - i]].concat()).collect();
    let x = design(&paths, 3);
    let y: Vec<f64> = (0..8).map(|i| 1000.0 + 50.0 * i as f64).collect();
    let reg = fit_regression(&x, &y).unwrap();
    let refs: Vec<&[usize]> = paths.iter().map(Vec::as_slice).collect();
    let report = detect_detours(&reg, &refs, 1.0).unwrap();
    assert!(report.states.iter().all(|s| !s.optional && s.visited_by == 8));
    assert!(report.detour_states().is_empty());
}
