//! Seeded random sampling helpers shared by the audits and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::operator::SymMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Symmetric matrix with i.i.d. standard normal upper-triangle entries,
/// scaled by a log-uniform factor in `[0.1, 10]`.
pub fn random_sym(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    SymMatrix::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Positive semidefinite `B·Bᵀ` with `B` of random rank `1..=dim`.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> SymMatrix {
    let rank = rng.random_range(1..=dim);
    let mut m = SymMatrix::zeros(dim);
    for _ in 0..rank {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        m = m.add(&SymMatrix::outer(&v));
    }
    m
}

/// Uniformly distributed unit vector in `ℝ^dim`.
pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}
