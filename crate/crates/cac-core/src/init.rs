//! Parameter initialization: zero-mean uniform with bound `1/sqrt(fan_in)`,
//! biases zero. Seed-reproducible through the caller's RNG.

use rand::Rng;

use crate::tensor::Tensor;

pub(crate) fn uniform_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
        .expect("init shape")
        .requiring_grad()
}

pub(crate) fn zero_bias(len: usize) -> Tensor {
    Tensor::vector(vec![0.0; len]).requiring_grad()
}
