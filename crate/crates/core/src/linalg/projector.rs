use crate::error::{ensure_eq, validation, Result};
use crate::linalg::{sym_eig, EigenBasis, Matrix, SymmetricMatrix};
use crate::scalar::Real;
use crate::weights::{WeightRole, WeightVector};

/// Rule deciding which eigenvalues count as low-energy.
///
/// An eigenvalue is selected iff `value <= max(eps_rel * max(lambda_max, 0), eps_abs)`.
/// The relative part makes the choice invariant to rescaling the features;
/// `eps_abs` is the floor that applies when the matrix is (numerically) zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub eps_rel: f64,
    pub eps_abs: f64,
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        Self {
            eps_rel: 1e-2,
            eps_abs: 1e-10,
        }
    }
}

impl ThresholdPolicy {
    pub fn relative(eps_rel: f64) -> Self {
        Self {
            eps_rel,
            ..Self::default()
        }
    }

    /// A policy that selects nothing on any matrix with positive spectrum.
    pub fn select_none() -> Self {
        Self {
            eps_rel: 0.0,
            eps_abs: f64::NEG_INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_rel >= 0.0) || !self.eps_rel.is_finite() {
            return Err(validation(format!(
                "eps_rel must be finite and nonnegative, got {}",
                self.eps_rel
            )));
        }
        if self.eps_abs.is_nan() {
            return Err(validation("eps_abs must not be NaN"));
        }
        Ok(())
    }

    pub fn threshold<T: Real>(&self, largest: T) -> T {
        let rel = T::lit(self.eps_rel) * largest.max(T::zero());
        rel.max(T::lit(self.eps_abs))
    }
}

/// Symmetric orthogonal projector onto a low-energy eigenspace.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector<T> {
    p: Matrix<T>,
    retained_rank: usize,
}

impl<T: Real> Projector<T> {
    pub fn identity(c: usize) -> Self {
        Self {
            p: Matrix::identity(c),
            retained_rank: c,
        }
    }

    pub fn zero(c: usize) -> Self {
        Self {
            p: Matrix::zeros(c, c),
            retained_rank: 0,
        }
    }

    /// `U U^T` for the given orthonormal columns, symmetrized.
    pub fn from_orthonormal_columns(columns: &[Vec<T>], dim: usize) -> Result<Self> {
        for col in columns {
            ensure_eq("projector basis length", dim, col.len())?;
        }
        let mut raw = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                raw.set(i, j, columns.iter().map(|u| u[i] * u[j]).sum());
            }
        }
        Ok(Self {
            p: raw.symmetrized(),
            retained_rank: columns.len(),
        })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.p
    }

    pub fn retained_rank(&self) -> usize {
        self.retained_rank
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    /// `||P^2 - P||_F`.
    pub fn idempotence_error(&self) -> T {
        let sq = self.p.matmul(&self.p).expect("square");
        sq.sub(&self.p).expect("same shape").frobenius_norm()
    }
}

/// Builds `P = (P_hat + P_hat^T) / 2` with `P_hat = U_null U_null^T`, where
/// `U_null` are the eigenvectors of `m` whose eigenvalues pass `policy`.
pub fn nullspace_projector<T: Real>(
    m: &SymmetricMatrix<T>,
    policy: ThresholdPolicy,
) -> Result<Projector<T>> {
    policy.validate()?;
    let basis = sym_eig(m)?;
    Ok(projector_from_basis(&basis, policy))
}

/// Same as [`nullspace_projector`] on an already computed eigenbasis.
pub fn projector_from_basis<T: Real>(basis: &EigenBasis<T>, policy: ThresholdPolicy) -> Projector<T> {
    let values = basis.values();
    let n = values.len();
    let largest = values.first().copied().unwrap_or_else(T::zero);
    let threshold = policy.threshold(largest);
    let selected: Vec<Vec<T>> = (0..n)
        .filter(|&k| values[k] <= threshold)
        .map(|k| basis.vector(k))
        .collect();
    if selected.is_empty() {
        return Projector::zero(n);
    }
    Projector::from_orthonormal_columns(&selected, n).expect("eigenvectors have length n")
}

/// `delta' = P delta`.
pub fn project<T: Real>(p: &Projector<T>, delta: &WeightVector<T>) -> Result<WeightVector<T>> {
    ensure_eq("perturbation length vs projector order", p.dim(), delta.len())?;
    if p.retained_rank() == 0 {
        return Ok(WeightVector::zeros(delta.len(), WeightRole::Projected));
    }
    WeightVector::new(p.matrix().matvec(delta.values())?, WeightRole::Projected)
}
