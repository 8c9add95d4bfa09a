use crate::error::{ensure_eq, validation, Result};
use crate::scalar::{norm, Real};
use crate::tensor::Tensor;

/// What a weight vector stands for in the localization head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightRole {
    /// Output of the semantic predictor pass.
    Semantic,
    /// Raw geometric perturbation from the geometry predictor pass.
    Perturbation,
    /// Perturbation after null-space projection.
    Projected,
    /// Semantic weights plus projected perturbation.
    Combined,
}

/// Length-C channel weights of the localization head.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector<T> {
    values: Vec<T>,
    role: WeightRole,
}

impl<T: Real> WeightVector<T> {
    pub fn new(values: Vec<T>, role: WeightRole) -> Result<Self> {
        if values.is_empty() {
            return Err(validation("weight vector must be nonempty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(validation(format!("weight {i} is not finite")));
        }
        Ok(Self { values, role })
    }

    pub fn zeros(len: usize, role: WeightRole) -> Self {
        Self {
            values: vec![T::zero(); len.max(1)],
            role,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn role(&self) -> WeightRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> T {
        norm(&self.values)
    }

    /// Element-wise sum tagged with `role`.
    pub fn plus(&self, other: &Self, role: WeightRole) -> Result<Self> {
        ensure_eq("weight vector length", self.len(), other.len())?;
        Self::new(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a + b)
                .collect(),
            role,
        )
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * s).collect(),
            role: self.role,
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        Tensor::new(vec![self.values.len()], self.values.clone())
    }
}
