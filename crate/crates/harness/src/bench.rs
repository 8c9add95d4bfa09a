//! Timing of the projector estimate on random features.

use std::time::Instant;

use nsedit_core::init::{gaussian_matrix, seeded_rng};
use nsedit_core::linalg::{
    nullspace_projector, regularized_correlation_with, whiten_columns, Ridge, ThresholdPolicy,
};
use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BenchStats {
    pub channels: usize,
    pub samples: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Times whitening, correlation and projector estimation on a seeded
/// `channels x samples` Gaussian feature matrix. One untimed warm-up call
/// precedes the `reps` timed ones.
pub fn bench_projector(channels: usize, samples: usize, reps: usize, seed: u64) -> Result<BenchStats> {
    if channels == 0 || samples == 0 || reps == 0 {
        return Err(invalid("bench", "channels, samples and reps must all be positive"));
    }
    let mut rng = seeded_rng(seed);
    let z = gaussian_matrix::<f64>(channels, samples, 1.0, &mut rng);
    let policy = ThresholdPolicy::default();
    let once = || -> Result<usize> {
        let w = whiten_columns(&z)?;
        let m = regularized_correlation_with(&w, Ridge::Relative(1e-4))?;
        Ok(nullspace_projector(&m, policy)?.retained_rank())
    };
    once()?;
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        std::hint::black_box(once()?);
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / reps as f64;
    ms.sort_by(f64::total_cmp);
    let pick = |q: f64| ms[((q * (reps - 1) as f64).round() as usize).min(reps - 1)];
    Ok(BenchStats {
        channels,
        samples,
        reps,
        mean_ms,
        p50_ms: pick(0.5),
        p95_ms: pick(0.95),
    })
}
