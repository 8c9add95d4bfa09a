//! Seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::Matrix;
use crate::scalar::Real;

/// Deterministic generator used for every seeded initializer.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix with i.i.d. `N(0, std^2)` entries.
pub fn gaussian_matrix<T: Real>(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let normal = Normal::new(0.0, std).expect("std is finite and nonnegative");
    Matrix::from_fn(rows, cols, |_, _| T::lit(normal.sample(rng)))
}

pub fn gaussian_vec<T: Real>(len: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let normal = Normal::new(0.0, std).expect("std is finite and nonnegative");
    (0..len).map(|_| T::lit(normal.sample(rng))).collect()
}

/// `1 / sqrt(fan_in)`.
pub fn fan_in_std(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
