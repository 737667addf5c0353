//! Weight initialization.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Xavier-uniform values for a rows×cols projection matrix.
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    (0..rows * cols).map(|_| dist.sample(rng)).collect()
}

/// Normal(0, 0.02) values for embedding tables.
pub fn embedding_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let dist = Normal::new(0.0, 0.02).expect("valid stddev");
    (0..rows * cols).map(|_| dist.sample(rng)).collect()
}

pub fn zeros(rows: usize, cols: usize) -> Vec<f64> {
    vec![0.0; rows * cols]
}

pub fn ones(rows: usize, cols: usize) -> Vec<f64> {
    vec![1.0; rows * cols]
}
