//! Geometric-to-semantic alignment and gated fusion.
//!
//! `Align` is a bilinear resample to the semantic grid followed by a per-pixel
//! linear map `C' -> C`; the gate is a per-pixel linear map over the channel
//! concatenation `[v_s; Align(v_g)]` followed by a sigmoid. The fused map is
//! `F = v_s + m * Align(v_g)`.

use std::path::Path;

use crate::error::{ensure_eq, validation, Result};
use crate::init::{fan_in_std, gaussian_matrix, seeded_rng};
use crate::linalg::Matrix;
use crate::scalar::{sigmoid, Real};
use crate::tensor::{expect_dims, load_named, save_named, FeatureKind, FeatureMap, Tensor};

pub const ALIGN_PROJ: &str = "align_proj";
pub const ALIGN_BIAS: &str = "align_bias";
pub const GATE_W: &str = "gate_w";
pub const GATE_B: &str = "gate_b";

/// Parameters of the alignment map.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignParams<T> {
    projection: Matrix<T>,
    bias: Vec<T>,
    target: (usize, usize),
}

impl<T: Real> AlignParams<T> {
    pub fn new(projection: Matrix<T>, bias: Vec<T>, target: (usize, usize)) -> Result<Self> {
        ensure_eq("align bias length", projection.rows(), bias.len())?;
        if target.0 == 0 || target.1 == 0 {
            return Err(validation("align target grid must be nonempty"));
        }
        if projection.data().iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(validation("align parameters must be finite"));
        }
        Ok(Self {
            projection,
            bias,
            target,
        })
    }

    /// Gaussian projection with std `1/sqrt(C')`, zero bias.
    pub fn seeded(out_channels: usize, in_channels: usize, target: (usize, usize), seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let projection = gaussian_matrix(out_channels, in_channels, fan_in_std(in_channels), &mut rng);
        Self::new(projection, vec![T::zero(); out_channels], target).expect("valid by construction")
    }

    pub fn identity(channels: usize, target: (usize, usize)) -> Self {
        Self::new(Matrix::identity(channels), vec![T::zero(); channels], target)
            .expect("valid by construction")
    }

    pub fn projection(&self) -> &Matrix<T> {
        &self.projection
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn target(&self) -> (usize, usize) {
        self.target
    }

    pub fn out_channels(&self) -> usize {
        self.projection.rows()
    }

    pub fn in_channels(&self) -> usize {
        self.projection.cols()
    }
}

/// Parameters of the spatial gate: `C x 2C` weights plus a length-C bias.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams<T> {
    weights: Matrix<T>,
    bias: Vec<T>,
}

impl<T: Real> GateParams<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        ensure_eq("gate weight columns", 2 * weights.rows(), weights.cols())?;
        ensure_eq("gate bias length", weights.rows(), bias.len())?;
        if weights.data().iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(validation("gate parameters must be finite"));
        }
        Ok(Self { weights, bias })
    }

    /// Gaussian weights with std `1/sqrt(2C)`, zero bias.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let weights = gaussian_matrix(channels, 2 * channels, fan_in_std(2 * channels), &mut rng);
        Self::new(weights, vec![T::zero(); channels]).expect("valid by construction")
    }

    /// Zero weights and a constant bias: the gate is `sigmoid(bias)` everywhere.
    pub fn constant(channels: usize, bias: T) -> Self {
        Self::new(Matrix::zeros(channels, 2 * channels), vec![bias; channels])
            .expect("valid by construction")
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn channels(&self) -> usize {
        self.weights.rows()
    }
}

/// Alignment and gate parameters for one tracker.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams<T> {
    pub align: AlignParams<T>,
    pub gate: GateParams<T>,
}

impl<T: Real> FusionParams<T> {
    pub fn new(align: AlignParams<T>, gate: GateParams<T>) -> Result<Self> {
        ensure_eq("gate channels vs align output", align.out_channels(), gate.channels())?;
        Ok(Self { align, gate })
    }

    pub fn seeded(
        sem_channels: usize,
        geo_channels: usize,
        target: (usize, usize),
        seed: u64,
    ) -> Self {
        Self {
            align: AlignParams::seeded(sem_channels, geo_channels, target, seed),
            gate: GateParams::seeded(sem_channels, seed.wrapping_add(1)),
        }
    }

    /// Loads `align_proj`, `align_bias`, `gate_w` and `gate_b` from `dir`.
    pub fn load_dir(dir: &Path, target: (usize, usize)) -> Result<Self> {
        let proj = Matrix::from_tensor(&load_named::<T>(dir, ALIGN_PROJ)?)?;
        let c = proj.rows();
        let bias = load_named::<T>(dir, ALIGN_BIAS)?;
        expect_dims(&bias, ALIGN_BIAS, &[c])?;
        let gate_w = load_named::<T>(dir, GATE_W)?;
        expect_dims(&gate_w, GATE_W, &[c, 2 * c])?;
        let gate_b = load_named::<T>(dir, GATE_B)?;
        expect_dims(&gate_b, GATE_B, &[c])?;
        Self::new(
            AlignParams::new(proj, bias.into_data(), target)?,
            GateParams::new(Matrix::from_tensor(&gate_w)?, gate_b.into_data())?,
        )
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        let c = self.align.out_channels();
        save_named(dir, ALIGN_PROJ, &self.align.projection.to_tensor()?)?;
        save_named(dir, ALIGN_BIAS, &Tensor::new(vec![c], self.align.bias.clone())?)?;
        save_named(dir, GATE_W, &self.gate.weights.to_tensor()?)?;
        save_named(dir, GATE_B, &Tensor::new(vec![c], self.gate.bias.clone())?)
    }
}

/// Spatial gate with every element in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingMask<T> {
    m: Tensor<T>,
}

impl<T: Real> GatingMask<T> {
    pub fn new(m: Tensor<T>) -> Result<Self> {
        if m.dims().len() != 3 {
            return Err(validation("gating mask needs dims [C,H,W]"));
        }
        if let Some(i) = m.data().iter().position(|&v| v < T::zero() || v > T::one()) {
            return Err(validation(format!("gate element {i} outside [0,1]")));
        }
        Ok(Self { m })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Result<Self> {
        Self::new(Tensor::filled(dims.to_vec(), value)?)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.m
    }

    pub fn data(&self) -> &[T] {
        self.m.data()
    }
}

/// Bilinear resample with half-pixel centres and edge clamping. Equal grids
/// are reproduced exactly.
pub fn bilinear_resample<T: Real>(v: &FeatureMap<T>, (out_h, out_w): (usize, usize)) -> Result<FeatureMap<T>> {
    let [c, in_h, in_w] = v.dims();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(v.clone());
    }
    let rows = sample_positions(in_h, out_h);
    let cols = sample_positions(in_w, out_w);
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = v.channel(ch);
        for &(r0, r1, fr) in &rows {
            for &(c0, c1, fc) in &cols {
                let top = plane[r0 * in_w + c0] * (T::one() - fc) + plane[r0 * in_w + c1] * fc;
                let bottom = plane[r1 * in_w + c0] * (T::one() - fc) + plane[r1 * in_w + c1] * fc;
                data.push(top * (T::one() - fr) + bottom * fr);
            }
        }
    }
    FeatureMap::from_vec(v.kind(), [c, out_h, out_w], data)
}

fn sample_positions<T: Real>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::lit(src - i0 as f64))
        })
        .collect()
}

/// `out[c] = bias[c] + sum_k weights[c][k] * inputs_k`, per pixel.
fn pixel_linear<T: Real>(weights: &Matrix<T>, bias: &[T], inputs: &[&[T]], cells: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(weights.rows() * cells);
    for c in 0..weights.rows() {
        let mut plane = vec![bias[c]; cells];
        for (k, input) in inputs.iter().enumerate() {
            let w = weights.get(c, k);
            if w == T::zero() {
                continue;
            }
            for (o, &x) in plane.iter_mut().zip(input.iter()) {
                *o += w * x;
            }
        }
        out.extend_from_slice(&plane);
    }
    out
}

/// Resamples `v_g` to the target grid and maps its channels to the semantic width.
pub fn align<T: Real>(v_g: &FeatureMap<T>, params: &AlignParams<T>) -> Result<FeatureMap<T>> {
    if v_g.kind() != FeatureKind::Geometric {
        return Err(validation(format!(
            "align expects geometric features, got {}",
            v_g.kind().as_str()
        )));
    }
    ensure_eq("align input channels", params.in_channels(), v_g.channels())?;
    let resampled = bilinear_resample(v_g, params.target)?;
    let cells = resampled.cells();
    let planes: Vec<&[T]> = (0..resampled.channels()).map(|c| resampled.channel(c)).collect();
    let data = pixel_linear(&params.projection, &params.bias, &planes, cells);
    FeatureMap::from_vec(
        FeatureKind::Geometric,
        [params.out_channels(), params.target.0, params.target.1],
        data,
    )
}

/// `m = sigmoid(W [v_s; aligned] + b)` per pixel.
pub fn gate_mask<T: Real>(
    v_s: &FeatureMap<T>,
    aligned_g: &FeatureMap<T>,
    params: &GateParams<T>,
) -> Result<GatingMask<T>> {
    v_s.ensure_same_dims(aligned_g, "gate inputs")?;
    ensure_eq("gate channels", params.channels(), v_s.channels())?;
    let cells = v_s.cells();
    let planes: Vec<&[T]> = (0..v_s.channels())
        .map(|c| v_s.channel(c))
        .chain((0..aligned_g.channels()).map(|c| aligned_g.channel(c)))
        .collect();
    let data = pixel_linear(&params.weights, &params.bias, &planes, cells)
        .into_iter()
        .map(sigmoid)
        .collect();
    GatingMask::new(Tensor::new(v_s.dims().to_vec(), data)?)
}

/// `F = v_s + m * aligned_g`.
pub fn fuse<T: Real>(
    v_s: &FeatureMap<T>,
    aligned_g: &FeatureMap<T>,
    m: &GatingMask<T>,
) -> Result<FeatureMap<T>> {
    if v_s.kind() != FeatureKind::Semantic {
        return Err(validation(format!(
            "fuse expects semantic features first, got {}",
            v_s.kind().as_str()
        )));
    }
    v_s.ensure_same_dims(aligned_g, "fuse inputs")?;
    if m.tensor().dims() != v_s.dims() {
        return Err(validation("gating mask shape does not match the features"));
    }
    let data = v_s
        .data()
        .iter()
        .zip(aligned_g.data())
        .zip(m.data())
        .map(|((&s, &g), &w)| s + w * g)
        .collect();
    FeatureMap::from_vec(FeatureKind::Fused, v_s.dims(), data)
}

/// Align, gate and fuse in one call. Returns the fused map together with the
/// aligned geometry and the mask.
pub fn align_and_fuse<T: Real>(
    v_s: &FeatureMap<T>,
    v_g: &FeatureMap<T>,
    params: &FusionParams<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>, GatingMask<T>)> {
    let aligned = align(v_g, &params.align)?;
    let mask = gate_mask(v_s, &aligned, &params.gate)?;
    let fused = fuse(v_s, &aligned, &mask)?;
    Ok((fused, aligned, mask))
}
