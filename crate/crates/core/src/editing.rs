//! Online model editing: the per-frame null-space projector, the projected
//! perturbation and the resulting classification score map.

use std::path::Path;

use crate::error::{ensure_eq, validation, Result};
use crate::linalg::{
    nullspace_projector, project, regularized_correlation_with, whiten_columns, Matrix, Projector,
    Ridge, ThresholdPolicy,
};
use crate::predictor::first_argmax;
use crate::scalar::Real;
use crate::tensor::{save_named, FeatureMap, Tensor};
use crate::weights::{WeightRole, WeightVector};

/// `[H, W]` classification response with its argmax cached.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap<T> {
    p: Tensor<T>,
    argmax: (usize, usize),
}

impl<T: Real> ScoreMap<T> {
    pub fn new(p: Tensor<T>) -> Result<Self> {
        if p.dims().len() != 2 {
            return Err(validation(format!("score map needs dims [H,W], got {:?}", p.dims())));
        }
        let w = p.dims()[1];
        let i = first_argmax(p.data());
        Ok(Self {
            argmax: (i / w, i % w),
            p,
        })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.p
    }

    pub fn data(&self) -> &[T] {
        self.p.data()
    }

    pub fn height(&self) -> usize {
        self.p.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.p.dims()[1]
    }

    pub fn get(&self, h: usize, w: usize) -> T {
        self.p.data()[h * self.width() + w]
    }

    /// `(row, col)` of the maximum; the lowest row-major index wins ties.
    pub fn argmax(&self) -> (usize, usize) {
        self.argmax
    }

    pub fn peak(&self) -> T {
        self.get(self.argmax.0, self.argmax.1)
    }
}

/// `p[h, w] = sum_c W[c] z[c, h, w]`.
pub fn localize<T: Real>(w: &WeightVector<T>, z: &FeatureMap<T>) -> Result<ScoreMap<T>> {
    let [c, h, wd] = z.dims();
    ensure_eq("weight length vs channels", w.len(), c)?;
    let mut p = vec![T::zero(); h * wd];
    for (ch, &wc) in w.values().iter().enumerate() {
        if wc == T::zero() {
            continue;
        }
        for (o, &v) in p.iter_mut().zip(z.channel(ch)) {
            *o += wc * v;
        }
    }
    ScoreMap::new(Tensor::new(vec![h, wd], p)?)
}

/// Which semantic maps fed the projector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ProjectorSource {
    /// The reference maps and the current frame.
    #[default]
    ReferencesAndCurrent,
    ReferencesOnly,
    /// Supplied directly rather than estimated from features.
    Fixed,
}

impl ProjectorSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectorSource::ReferencesAndCurrent => "refs_and_current",
            ProjectorSource::ReferencesOnly => "refs_only",
            ProjectorSource::Fixed => "fixed",
        }
    }
}

/// Semantic weights, raw perturbation, projector and the derived combined
/// weights `W_sem + delta'`.
///
/// When the projector was estimated from whitened features it acts on the
/// perturbation in whitened coordinates: `delta' = D^-1 P D delta`, with `D`
/// the per-channel standard deviations. Scores on raw features whose
/// columns lie in the semantic span are then preserved exactly. With no
/// whitening scales (fixed projectors) `delta' = P delta`.
#[derive(Clone, Debug)]
pub struct EditContext<T> {
    w_sem: WeightVector<T>,
    delta: WeightVector<T>,
    projected: WeightVector<T>,
    combined: WeightVector<T>,
    projector: Projector<T>,
    scales: Option<Vec<T>>,
    source: ProjectorSource,
    lambda: T,
}

impl<T: Real> EditContext<T> {
    /// Context with an explicit projector (for example `P = I` or `P = 0`).
    pub fn with_projector(
        w_sem: WeightVector<T>,
        delta: WeightVector<T>,
        projector: Projector<T>,
        source: ProjectorSource,
        lambda: T,
    ) -> Result<Self> {
        Self::build(w_sem, delta, projector, None, source, lambda)
    }

    /// Context whose projector lives in the whitened coordinates given by
    /// the positive per-channel `scales`.
    pub fn with_whitened_projector(
        w_sem: WeightVector<T>,
        delta: WeightVector<T>,
        projector: Projector<T>,
        scales: Vec<T>,
        source: ProjectorSource,
        lambda: T,
    ) -> Result<Self> {
        ensure_eq("whitening scales", scales.len(), w_sem.len())?;
        if scales.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
            return Err(validation("whitening scales must be positive and finite"));
        }
        Self::build(w_sem, delta, projector, Some(scales), source, lambda)
    }

    fn build(
        w_sem: WeightVector<T>,
        delta: WeightVector<T>,
        projector: Projector<T>,
        scales: Option<Vec<T>>,
        source: ProjectorSource,
        lambda: T,
    ) -> Result<Self> {
        ensure_eq("perturbation length", delta.len(), w_sem.len())?;
        ensure_eq("projector order", projector.dim(), w_sem.len())?;
        let projected = match &scales {
            Some(d) if projector.retained_rank() > 0 => {
                let dv: Vec<T> = delta.values().iter().zip(d).map(|(&v, &s)| v * s).collect();
                let pv = project(&projector, &WeightVector::new(dv, WeightRole::Perturbation)?)?;
                let back = pv.values().iter().zip(d).map(|(&v, &s)| v / s).collect();
                WeightVector::new(back, WeightRole::Projected)?
            }
            _ => project(&projector, &delta)?,
        };
        let combined = w_sem.plus(&projected, WeightRole::Combined)?;
        Ok(Self {
            w_sem,
            delta,
            projected,
            combined,
            projector,
            scales,
            source,
            lambda,
        })
    }

    pub fn w_sem(&self) -> &WeightVector<T> {
        &self.w_sem
    }

    pub fn delta(&self) -> &WeightVector<T> {
        &self.delta
    }

    /// Whitening scales the projector acts under, if any.
    pub fn scales(&self) -> Option<&[T]> {
        self.scales.as_deref()
    }

    /// The projected perturbation `delta'`.
    pub fn projected(&self) -> &WeightVector<T> {
        &self.projected
    }

    /// `W_sem + delta'`.
    pub fn combined(&self) -> &WeightVector<T> {
        &self.combined
    }

    pub fn projector(&self) -> &Projector<T> {
        &self.projector
    }

    pub fn source(&self) -> ProjectorSource {
        self.source
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    /// Writes `w_sem`, `delta` and `projector` as tensors into `dir`.
    pub fn dump(&self, dir: &Path) -> Result<()> {
        save_named(dir, "w_sem", &self.w_sem.to_tensor()?)?;
        save_named(dir, "delta", &self.delta.to_tensor()?)?;
        save_named(dir, "projector", &self.projector.matrix().to_tensor()?)
    }
}

/// Concatenates the spatial columns of every map into one `C x N` matrix.
pub fn stack_columns<T: Real>(maps: &[&FeatureMap<T>]) -> Result<Matrix<T>> {
    let first = maps
        .first()
        .ok_or_else(|| validation("need at least one semantic feature map"))?;
    let c = first.channels();
    for m in maps {
        ensure_eq("semantic map channels", m.channels(), c)?;
    }
    let n: usize = maps.iter().map(|m| m.cells()).sum();
    let mut data = Vec::with_capacity(c * n);
    for ch in 0..c {
        for m in maps {
            data.extend_from_slice(m.channel(ch));
        }
    }
    Matrix::from_vec(c, n, data)
}

/// Whitens the concatenated semantic columns, forms the ridge-regularized
/// correlation matrix and keeps its low-energy eigenvectors as the
/// projector for `delta`. Degenerate channels get unit scale.
pub fn build_edit_context<T: Real>(
    sem_feats: &[&FeatureMap<T>],
    w_sem: WeightVector<T>,
    delta: WeightVector<T>,
    ridge: Ridge,
    policy: ThresholdPolicy,
    source: ProjectorSource,
) -> Result<EditContext<T>> {
    let raw = stack_columns(sem_feats)?;
    ensure_eq("semantic weights vs channels", w_sem.len(), raw.rows())?;
    let z = whiten_columns(&raw)?;
    let m = regularized_correlation_with(&z, ridge)?;
    let lambda = m.ridge();
    let projector = nullspace_projector(&m, policy)?;
    let scales = z
        .stats()
        .iter()
        .map(|s| if s.degenerate { T::one() } else { s.std })
        .collect();
    EditContext::with_whitened_projector(w_sem, delta, projector, scales, source, lambda)
}

/// `localize(W_sem + delta', z_cur)`.
pub fn edit_and_localize<T: Real>(ctx: &EditContext<T>, z_cur: &FeatureMap<T>) -> Result<ScoreMap<T>> {
    localize(ctx.combined(), z_cur)
}
