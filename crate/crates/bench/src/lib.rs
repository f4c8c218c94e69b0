//! Inputs shared by the benchmarks.

use introlab::gaussian::PosteriorBatch;
use introlab::rng::{self, standard_normal};
use introlab::{Matrix, Method, Tape, TrainConfig};

/// Standard normal `rows x cols` matrix from a fixed seed.
pub fn normal(rows: usize, cols: usize, seed: u64) -> Matrix {
    standard_normal(&mut rng::seeded(seed), rows, cols)
}

/// Means and variances of `rows` latent posteriors of dimension `n`.
pub fn posterior_params(rows: usize, n: usize, seed: u64) -> (Matrix, Matrix) {
    let mean = normal(rows, n, seed);
    let var = normal(rows, n, seed + 1).mapv(|v| 0.2 + v.abs());
    (mean, var)
}

/// Binds posterior parameters as trainable leaves.
pub fn posterior_leaves(tape: &mut Tape, params: &(Matrix, Matrix)) -> PosteriorBatch {
    let mean = tape.leaf(params.0.clone());
    let var = tape.leaf(params.1.clone());
    PosteriorBatch::new(tape, mean, var).expect("valid posterior")
}

/// The configuration the toy grids train with.
pub fn grid_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        batch: 128,
        hidden: vec![64, 64],
        ..TrainConfig::default()
    }
}
