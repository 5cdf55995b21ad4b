#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trainmap::ingest::{write_bundle, TensorKind, TensorRecord, WeightSnapshot};

/// Step index at which `seed` switches regime and its accuracy passes 0.9.
pub fn switch_index(seed: i64) -> usize {
    8 + 2 * seed as usize
}

/// One checkpoint of a small two-layer network whose weights jump to a second
/// regime at `switch_index(seed)`.
pub fn snapshot(seed: i64, t: usize) -> WeightSnapshot {
    let mut base = ChaCha8Rng::seed_from_u64(seed as u64);
    let mut noise = ChaCha8Rng::seed_from_u64(((seed as u64) << 32) | t as u64);
    let late = t >= switch_index(seed);
    let drift = 1.0 + 0.01 * t as f32;
    let mut layer = |rows: usize, cols: usize| -> Vec<f32> {
        (0..rows * cols)
            .map(|i| {
                let w: f32 = base.random_range(-1.0..1.0);
                let jump = if late && i % 3 == 0 { 1.5 } else { 0.0 };
                w * drift + jump + noise.random_range(-0.05..0.05)
            })
            .collect()
    };
    let w1 = layer(4, 3);
    let w2 = layer(3, 2);
    let b1: Vec<f32> = (0..3).map(|i| if late { 0.5 } else { 0.0 } + 0.1 * i as f32).collect();
    let acc = if late { 0.95 } else { 0.2 + 0.02 * t as f64 };
    WeightSnapshot::new(
        seed,
        10 * t as u64,
        Some(acc),
        vec![
            TensorRecord::weight("layer0.weight", 4, 3, w1).unwrap(),
            TensorRecord::bias("layer0.bias", b1).unwrap(),
            TensorRecord::weight("layer1.weight", 3, 2, w2).unwrap(),
            TensorRecord::new("embed.weight", TensorKind::Excluded, vec![2, 2], vec![1.0; 4]).unwrap(),
        ],
    )
    .unwrap()
}

/// Writes `seeds × steps` bundle directories under `root` and returns their paths.
pub fn write_bundles(root: &Path, seeds: usize, steps: usize) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for seed in 0..seeds as i64 {
        for t in 0..steps {
            let dir = root.join(format!("s{seed}_t{t:03}"));
            write_bundle(&snapshot(seed, t), &dir).unwrap();
            out.push(dir);
        }
    }
    out
}

pub fn arg(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}
