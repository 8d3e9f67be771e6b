//! Shared fixtures for the pipeline benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdn_core::{Adjacency, Matrix};

pub fn random_features(frames: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(frames, dim);
    for v in m.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    m
}

pub fn random_adjacency(n: usize, seed: u64) -> Adjacency {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(0.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Adjacency::new(m).expect("construction is symmetric and nonnegative")
}
