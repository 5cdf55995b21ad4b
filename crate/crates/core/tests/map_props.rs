mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainmap::ghmm::{sample_runs, viterbi, GaussianHmm};
use trainmap::map::{
    annotate_edges, export_map, map_from_json, posterior_gradient, prune_transitions, DecodedRun, MapFormat,
    TrainingMap,
};

use common::random_model;

fn decode(model: &GaussianHmm, data: &[DMatrix<f64>]) -> Vec<Vec<usize>> {
    data.iter().map(|s| viterbi(model, s).unwrap().states).collect()
}

fn build(model: &GaussianHmm, data: &[DMatrix<f64>], paths: &[Vec<usize>]) -> TrainingMap {
    let runs: Vec<DecodedRun> = data
        .iter()
        .zip(paths)
        .enumerate()
        .map(|(i, (o, p))| DecodedRun { observations: o, path: p, convergence: Some(100 * i as u64) })
        .collect();
    annotate_edges(model, &runs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pruning_is_sound(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(k, 2, &mut rng);
        let data: Vec<DMatrix<f64>> = sample_runs(&model, 4, 25, seed).into_iter().map(|s| s.observations).collect();
        let paths = decode(&model, &data);
        let refs: Vec<&[usize]> = paths.iter().map(Vec::as_slice).collect();
        let map = prune_transitions(&model, &refs).unwrap();
        prop_assert_eq!(map.edges.len(), k * k);
        for p in &paths {
            for w in p.windows(2) {
                prop_assert!(map.edge(w[0], w[1]).unwrap().observed);
            }
        }
        for e in map.observed_edges() {
            let witnessed = paths.iter().any(|p| p.windows(2).any(|w| w[0] == e.from && w[1] == e.to));
            prop_assert!(witnessed);
            prop_assert_eq!(e.transition_prob, model.transition()[(e.from, e.to)]);
        }
        for e in map.edges.iter().filter(|e| !e.observed) {
            prop_assert_eq!(e.transition_prob, 0.0);
        }
        let total: usize = map.states.iter().map(|s| s.occupancy).sum();
        prop_assert_eq!(total, 100);
    }

    #[test]
    fn map_json_round_trips(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(k, 3, &mut rng);
        let data: Vec<DMatrix<f64>> = sample_runs(&model, 3, 30, seed).into_iter().map(|s| s.observations).collect();
        let paths = decode(&model, &data);
        let map = build(&model, &data, &paths);
        let json = export_map(&map, MapFormat::Json).unwrap();
        let back = map_from_json(&json).unwrap();
        prop_assert_eq!(&back, &map);
        prop_assert_eq!(export_map(&back, MapFormat::Json).unwrap(), json);
        prop_assert_eq!(export_map(&back, MapFormat::Dot).unwrap(), export_map(&map, MapFormat::Dot).unwrap());
    }

    #[test]
    fn relabeling_states_relabels_the_map(seed in any::<u64>(), k in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(k, 3, &mut rng);
        let data: Vec<DMatrix<f64>> = sample_runs(&model, 4, 30, seed).into_iter().map(|s| s.observations).collect();
        let paths = decode(&model, &data);
        let map = build(&model, &data, &paths);

        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left(1);
        let relabeled = model.permuted(&perm).unwrap();
        let mut inverse = vec![0; k];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let new_paths: Vec<Vec<usize>> = paths.iter().map(|p| p.iter().map(|&s| inverse[s]).collect()).collect();
        let other = build(&relabeled, &data, &new_paths);

        for s in &map.states {
            prop_assert_eq!(other.states[inverse[s.id]].occupancy, s.occupancy);
        }
        for e in &map.edges {
            let f = other.edge(inverse[e.from], inverse[e.to]).unwrap();
            prop_assert_eq!(f.observed, e.observed);
            prop_assert!((f.transition_prob - e.transition_prob).abs() < 1e-15);
        }
        prop_assert_eq!(other.annotations.len(), map.annotations.len());
        for a in &map.annotations {
            let b = other.annotation(inverse[a.from], inverse[a.to]).unwrap();
            prop_assert_eq!(b.transition_frequency, a.transition_frequency);
            prop_assert_eq!(b.occurrences, a.occurrences);
            prop_assert_eq!(b.mean_convergence, a.mean_convergence);
            for (fa, fb) in a.top_features.iter().zip(&b.top_features) {
                prop_assert!((fa.importance - fb.importance).abs() < 1e-9 * fa.importance.max(1.0));
                prop_assert!((fa.delta - fb.delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_state_importance_is_exactly_zero(seed in any::<u64>(), d in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(1, d, &mut rng);
        let obs: Vec<f64> = (0..d).map(|_| rng.random_range(-50.0..50.0)).collect();
        prop_assert_eq!(posterior_gradient(&model, &[1.0], &obs, 0).unwrap(), vec![0.0; d]);
    }
}

#[test]
fn one_state_model_gives_single_node() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_model(1, 2, &mut rng);
    let data: Vec<DMatrix<f64>> = sample_runs(&model, 3, 10, 0).into_iter().map(|s| s.observations).collect();
    let paths = decode(&model, &data);
    let map = build(&model, &data, &paths);
    assert_eq!(map.states.len(), 1);
    assert!(map.annotations.is_empty());
    assert!(!map.is_forked());
    let dot = export_map(&map, MapFormat::Dot).unwrap();
    assert_eq!(dot, "digraph training_map {\n  rankdir=LR;\n  node [shape=circle];\n  0 [label=\"0\\nn=30\"];\n  0 -> 0;\n}\n");
}
