use crate::error::{validation, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::tensor::FeatureMap;

/// Per-channel standardization statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats<T> {
    pub mean: T,
    /// Population standard deviation (divides by N).
    pub std: T,
    /// True when the channel had no variance and was emitted as zeros.
    pub degenerate: bool,
}

/// `C x N` matrix whose rows have zero mean and unit population variance.
#[derive(Clone, Debug)]
pub struct WhitenedMatrix<T> {
    z: Matrix<T>,
    stats: Vec<ChannelStats<T>>,
}

impl<T: Real> WhitenedMatrix<T> {
    pub fn matrix(&self) -> &Matrix<T> {
        &self.z
    }

    pub fn stats(&self) -> &[ChannelStats<T>] {
        &self.stats
    }

    pub fn channels(&self) -> usize {
        self.z.rows()
    }

    pub fn samples(&self) -> usize {
        self.z.cols()
    }

    pub fn degenerate_channels(&self) -> impl Iterator<Item = usize> + '_ {
        self.stats
            .iter()
            .enumerate()
            .filter(|(_, s)| s.degenerate)
            .map(|(i, _)| i)
    }
}

/// Whitens the spatial columns of one feature map (`N = H * W`).
pub fn whiten<T: Real>(features: &FeatureMap<T>) -> Result<WhitenedMatrix<T>> {
    let raw = Matrix::from_vec(features.channels(), features.cells(), features.data().to_vec())?;
    whiten_columns(&raw)
}

/// Standardizes each row of a `C x N` sample matrix.
///
/// A row whose deviations from its mean are all within a few ulps of zero is
/// treated as constant: it becomes an all-zero row flagged `degenerate`.
pub fn whiten_columns<T: Real>(raw: &Matrix<T>) -> Result<WhitenedMatrix<T>> {
    let n = raw.cols();
    if n < 2 {
        return Err(validation(format!(
            "whitening needs at least 2 samples per channel, got {n}"
        )));
    }
    let n_t = T::from_usize(n).unwrap();
    let mut z = Matrix::zeros(raw.rows(), n);
    let mut stats = Vec::with_capacity(raw.rows());
    for c in 0..raw.rows() {
        let row = raw.row(c);
        let mean = row.iter().copied().sum::<T>() / n_t;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n_t;
        let std = var.sqrt();
        let scale = row.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let degenerate = std <= T::lit(16.0) * T::epsilon() * scale;
        if !degenerate {
            for (o, &v) in z.row_mut(c).iter_mut().zip(row) {
                *o = (v - mean) / std;
            }
        }
        stats.push(ChannelStats {
            mean,
            std,
            degenerate,
        });
    }
    Ok(WhitenedMatrix { z, stats })
}
