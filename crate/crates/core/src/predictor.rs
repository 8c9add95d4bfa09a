//! Reference encoding and the miniature encoder-decoder that predicts the
//! localization weights.
//!
//! Tokens are the flattened columns of every reference map followed by the
//! current map, each shifted by `pos_scale * (PE(h, w) + slot_offset)`. One
//! residual self-attention block mixes the tokens; one residual
//! cross-attention block with the foreground embedding as its only query
//! pools them; a per-task linear head turns the pooled vector into weights.

use std::path::Path;

use crate::error::{ensure_eq, validation, Result};
use crate::init::{fan_in_std, gaussian_matrix, gaussian_vec, seeded_rng};
use crate::linalg::Matrix;
use crate::regression::BoxLTRB;
use crate::scalar::{dot, Real};
use crate::tensor::{expect_dims, load_named, named_path, save_named, FeatureMap, Tensor};
use crate::weights::{WeightRole, WeightVector};

pub const E_FG: &str = "e_fg";
pub const POS_SCALE: &str = "pos_scale";
pub const HEAD_SEM_W: &str = "head_sem_w";
pub const HEAD_SEM_B: &str = "head_sem_b";
pub const HEAD_GEO_W: &str = "head_geo_w";
pub const HEAD_GEO_B: &str = "head_geo_b";
/// Name prefixes of the attention blocks; each block stores `<prefix>_wq`,
/// `_wk`, `_wv` and `_wo`.
pub const ENCODER: &str = "enc";
pub const DECODER: &str = "dec";
pub const GEO_ENCODER: &str = "geo_enc";
pub const GEO_DECODER: &str = "geo_dec";

/// Gaussian reference label on the feature grid, peak value exactly 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap<T> {
    l: Tensor<T>,
    peak: (usize, usize),
}

impl<T: Real> LabelMap<T> {
    /// Wraps an `[H, W]` grid with values in `[0, 1]`.
    pub fn new(l: Tensor<T>) -> Result<Self> {
        if l.dims().len() != 2 {
            return Err(validation(format!("label map needs dims [H,W], got {:?}", l.dims())));
        }
        if l.data().iter().any(|&v| v < T::zero() || v > T::one()) {
            return Err(validation("label values must lie in [0,1]"));
        }
        let w = l.dims()[1];
        let peak = first_argmax(l.data());
        Ok(Self {
            peak: (peak / w, peak % w),
            l,
        })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.l
    }

    pub fn data(&self) -> &[T] {
        self.l.data()
    }

    pub fn height(&self) -> usize {
        self.l.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.l.dims()[1]
    }

    pub fn get(&self, h: usize, w: usize) -> T {
        self.l.data()[h * self.width() + w]
    }

    /// `(row, col)` of the maximum, lowest row-major index on ties.
    pub fn peak(&self) -> (usize, usize) {
        self.peak
    }
}

/// Index of the largest value; the lowest index wins ties.
pub(crate) fn first_argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One quarter of the box's shorter side.
pub fn default_sigma<T: Real>(b: &BoxLTRB<T>) -> T {
    b.width().min(b.height()) * T::lit(0.25)
}

/// `exp(-((r - r0)^2 + (c - c0)^2) / (2 sigma^2))` around the box centre,
/// divided by its grid maximum.
pub fn make_label_map<T: Real>(b: &BoxLTRB<T>, (h, w): (usize, usize), sigma: T) -> Result<LabelMap<T>> {
    if h == 0 || w == 0 {
        return Err(validation("label grid must be nonempty"));
    }
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(validation(format!("label sigma must be positive, got {sigma}")));
    }
    let (c0, r0) = b.center();
    let (hf, wf) = (T::from_usize(h).unwrap(), T::from_usize(w).unwrap());
    if !(r0 >= T::zero() && r0 < hf && c0 >= T::zero() && c0 < wf) {
        return Err(validation(format!(
            "box centre ({r0}, {c0}) lies outside the {h}x{w} grid"
        )));
    }
    let denom = T::lit(2.0) * sigma * sigma;
    let raw = Tensor::from_fn(vec![h, w], |i| {
        let dr = T::from_usize(i / w).unwrap() - r0;
        let dc = T::from_usize(i % w).unwrap() - c0;
        (-(dr * dr + dc * dc) / denom).exp()
    })?;
    let max = raw.data().iter().fold(T::zero(), |m, &v| m.max(v));
    if !(max > T::zero()) {
        return Err(validation("label map underflowed; sigma too small for the grid"));
    }
    let data = raw.into_data().into_iter().map(|v| (v / max).min(T::one())).collect();
    LabelMap::new(Tensor::new(vec![h, w], data)?)
}

/// Foreground embedding injected at labelled reference cells and used as the
/// decoder query.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector<T> {
    e: Vec<T>,
}

impl<T: Real> EmbeddingVector<T> {
    pub fn new(e: Vec<T>) -> Result<Self> {
        if e.is_empty() || e.iter().any(|v| !v.is_finite()) {
            return Err(validation("embedding must be nonempty and finite"));
        }
        Ok(Self { e })
    }

    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self {
            e: gaussian_vec(channels, fan_in_std(channels), &mut rng),
        }
    }

    pub fn values(&self) -> &[T] {
        &self.e
    }

    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let t = load_named::<T>(dir, E_FG)?;
        if t.dims().len() != 1 {
            return Err(validation("e_fg must be a vector"));
        }
        Self::new(t.into_data())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        save_named(dir, E_FG, &Tensor::new(vec![self.e.len()], self.e.clone())?)
    }
}

/// `F'[c, h, w] = F[c, h, w] + L[h, w] * e[c]`.
pub fn encode_reference<T: Real>(
    f: &FeatureMap<T>,
    label: &LabelMap<T>,
    e_fg: &EmbeddingVector<T>,
) -> Result<FeatureMap<T>> {
    let [c, h, w] = f.dims();
    ensure_eq("embedding length vs channels", e_fg.len(), c)?;
    if label.height() != h || label.width() != w {
        return Err(validation(format!(
            "label map {}x{} does not match features {h}x{w}",
            label.height(),
            label.width()
        )));
    }
    let cells = h * w;
    let mut data = f.data().to_vec();
    for (ch, &ec) in e_fg.values().iter().enumerate() {
        for (v, &l) in data[ch * cells..(ch + 1) * cells].iter_mut().zip(label.data()) {
            if l != T::zero() {
                *v += l * ec;
            }
        }
    }
    FeatureMap::from_vec(f.kind(), [c, h, w], data)
}

/// Query, key, value and output maps of one single-head attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
}

impl<T: Real> AttentionParams<T> {
    pub fn new(wq: Matrix<T>, wk: Matrix<T>, wv: Matrix<T>, wo: Matrix<T>) -> Result<Self> {
        let c = wq.rows();
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            if m.rows() != c || m.cols() != c {
                return Err(validation(format!(
                    "attention {name} must be {c}x{c}, got {}x{}",
                    m.rows(),
                    m.cols()
                )));
            }
            if m.data().iter().any(|v| !v.is_finite()) {
                return Err(validation(format!("attention {name} is not finite")));
            }
        }
        Ok(Self { wq, wk, wv, wo })
    }

    pub fn seeded(channels: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Self {
        let std = fan_in_std(channels);
        Self {
            wq: gaussian_matrix(channels, channels, std, rng),
            wk: gaussian_matrix(channels, channels, std, rng),
            wv: gaussian_matrix(channels, channels, std, rng),
            wo: gaussian_matrix(channels, channels, std, rng),
        }
    }

    pub fn channels(&self) -> usize {
        self.wq.rows()
    }

    fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let m = |s: &str| -> Result<Matrix<T>> {
            Matrix::from_tensor(&load_named::<T>(dir, &format!("{prefix}_{s}"))?)
        };
        Self::new(m("wq")?, m("wk")?, m("wv")?, m("wo")?)
    }

    fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        for (s, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            save_named(dir, &format!("{prefix}_{s}"), &m.to_tensor()?)?;
        }
        Ok(())
    }
}

/// Linear head `w = W u + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Real> HeadParams<T> {
    pub fn new(w: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if !w.is_square() {
            return Err(validation("head map must be square"));
        }
        ensure_eq("head bias length", b.len(), w.rows())?;
        if w.data().iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(validation("head parameters must be finite"));
        }
        Ok(Self { w, b })
    }

    fn load(dir: &Path, w_name: &str, b_name: &str) -> Result<Self> {
        let w = Matrix::from_tensor(&load_named::<T>(dir, w_name)?)?;
        let b = load_named::<T>(dir, b_name)?;
        expect_dims(&b, b_name, &[w.rows()])?;
        Self::new(w, b.into_data())
    }

    fn save(&self, dir: &Path, w_name: &str, b_name: &str) -> Result<()> {
        save_named(dir, w_name, &self.w.to_tensor()?)?;
        save_named(dir, b_name, &Tensor::new(vec![self.b.len()], self.b.clone())?)
    }
}

/// Which task head produces the returned weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorHead {
    Semantic,
    Geometry,
}

/// Encoder, decoder and the two task heads.
///
/// With a shared trunk (`geo_trunk == None`) both passes use the same
/// encoder and decoder; otherwise the geometry pass has its own pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams<T> {
    pub encoder: AttentionParams<T>,
    pub decoder: AttentionParams<T>,
    pub geo_trunk: Option<(AttentionParams<T>, AttentionParams<T>)>,
    pub head_sem: HeadParams<T>,
    pub head_geo: HeadParams<T>,
    /// Multiplier on positional and slot encodings.
    pub pos_scale: T,
}

impl<T: Real> PredictorParams<T> {
    pub fn new(
        encoder: AttentionParams<T>,
        decoder: AttentionParams<T>,
        geo_trunk: Option<(AttentionParams<T>, AttentionParams<T>)>,
        head_sem: HeadParams<T>,
        head_geo: HeadParams<T>,
        pos_scale: T,
    ) -> Result<Self> {
        let c = encoder.channels();
        ensure_eq("decoder channels", decoder.channels(), c)?;
        if let Some((e, d)) = &geo_trunk {
            ensure_eq("geometry encoder channels", e.channels(), c)?;
            ensure_eq("geometry decoder channels", d.channels(), c)?;
        }
        ensure_eq("semantic head channels", head_sem.w.rows(), c)?;
        ensure_eq("geometry head channels", head_geo.w.rows(), c)?;
        if !pos_scale.is_finite() {
            return Err(validation("pos_scale must be finite"));
        }
        Ok(Self {
            encoder,
            decoder,
            geo_trunk,
            head_sem,
            head_geo,
            pos_scale,
        })
    }

    /// Gaussian maps with std `1/sqrt(C)`, zero head biases, unit
    /// positional scale.
    pub fn seeded(channels: usize, shared_trunk: bool, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let encoder = AttentionParams::seeded(channels, &mut rng);
        let decoder = AttentionParams::seeded(channels, &mut rng);
        let std = fan_in_std(channels);
        let head_sem = HeadParams {
            w: gaussian_matrix(channels, channels, std, &mut rng),
            b: vec![T::zero(); channels],
        };
        let head_geo = HeadParams {
            w: gaussian_matrix(channels, channels, std, &mut rng),
            b: vec![T::zero(); channels],
        };
        let geo_trunk = (!shared_trunk).then(|| {
            (
                AttentionParams::seeded(channels, &mut rng),
                AttentionParams::seeded(channels, &mut rng),
            )
        });
        Self {
            encoder,
            decoder,
            geo_trunk,
            head_sem,
            head_geo,
            pos_scale: T::one(),
        }
    }

    /// Hand-built predictor that acts as a soft template matcher.
    ///
    /// The encoder is switched off (`wo = 0`). The decoder query is
    /// `sharpness * sqrt(C) * e_fg` against identity keys, so attention
    /// concentrates on tokens carrying the injected embedding, i.e. the
    /// labelled target cells of the references. Values and output are
    /// identity, and both heads remove the embedding direction from the
    /// pooled vector, leaving the average target feature column. The
    /// geometry head is scaled by `geo_gain`. Positional encodings are off.
    pub fn template_matching(e_fg: &EmbeddingVector<T>, sharpness: T, geo_gain: T) -> Result<Self> {
        let c = e_fg.len();
        let e = e_fg.values();
        let ee = dot(e, e);
        if !(ee > T::zero()) {
            return Err(validation("template matching needs a nonzero embedding"));
        }
        let eye = Matrix::<T>::identity(c);
        let reject = eye.sub(&Matrix::outer(e, e).scale(T::one() / ee))?.symmetrized();
        let root_c = T::from_usize(c).unwrap().sqrt();
        let encoder = AttentionParams::new(eye.clone(), eye.clone(), eye.clone(), Matrix::zeros(c, c))?;
        let decoder = AttentionParams::new(eye.scale(sharpness * root_c), eye.clone(), eye.clone(), eye)?;
        Self::new(
            encoder,
            decoder,
            None,
            HeadParams::new(reject.clone(), vec![T::zero(); c])?,
            HeadParams::new(reject.scale(geo_gain), vec![T::zero(); c])?,
            T::zero(),
        )
    }

    pub fn channels(&self) -> usize {
        self.encoder.channels()
    }

    pub fn shared_trunk(&self) -> bool {
        self.geo_trunk.is_none()
    }

    fn trunk(&self, head: PredictorHead) -> (&AttentionParams<T>, &AttentionParams<T>) {
        match (head, &self.geo_trunk) {
            (PredictorHead::Geometry, Some((e, d))) => (e, d),
            _ => (&self.encoder, &self.decoder),
        }
    }

    fn head(&self, head: PredictorHead) -> &HeadParams<T> {
        match head {
            PredictorHead::Semantic => &self.head_sem,
            PredictorHead::Geometry => &self.head_geo,
        }
    }

    /// Loads a predictor saved by [`save_dir`](Self::save_dir). The trunk
    /// is separate when `geo_enc_wq.gted` exists.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let geo_trunk = if named_path(dir, &format!("{GEO_ENCODER}_wq")).exists() {
            Some((
                AttentionParams::load(dir, GEO_ENCODER)?,
                AttentionParams::load(dir, GEO_DECODER)?,
            ))
        } else {
            None
        };
        let pos = load_named::<T>(dir, POS_SCALE)?;
        expect_dims(&pos, POS_SCALE, &[1])?;
        Self::new(
            AttentionParams::load(dir, ENCODER)?,
            AttentionParams::load(dir, DECODER)?,
            geo_trunk,
            HeadParams::load(dir, HEAD_SEM_W, HEAD_SEM_B)?,
            HeadParams::load(dir, HEAD_GEO_W, HEAD_GEO_B)?,
            pos.data()[0],
        )
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        self.encoder.save(dir, ENCODER)?;
        self.decoder.save(dir, DECODER)?;
        if let Some((e, d)) = &self.geo_trunk {
            e.save(dir, GEO_ENCODER)?;
            d.save(dir, GEO_DECODER)?;
        }
        self.head_sem.save(dir, HEAD_SEM_W, HEAD_SEM_B)?;
        self.head_geo.save(dir, HEAD_GEO_W, HEAD_GEO_B)?;
        save_named(dir, POS_SCALE, &Tensor::new(vec![1], vec![self.pos_scale])?)
    }
}

/// 2D sinusoidal encoding: the first `C/2` channels encode the row, the
/// rest the column, alternating `sin`/`cos` with geometric frequencies.
pub fn positional_encoding<T: Real>(channels: usize, h: usize, w: usize) -> Vec<T> {
    let half = channels / 2;
    (0..channels)
        .map(|c| {
            let (pos, j, d) = if c < half {
                (h, c, half)
            } else {
                (w, c - half, channels - half)
            };
            let freq = 10000f64.powf(-((2 * (j / 2)) as f64) / d as f64);
            let a = pos as f64 * freq;
            T::lit(if j % 2 == 0 { a.sin() } else { a.cos() })
        })
        .collect()
}

/// Constant offset added to every token of one frame. Slot 0 is the
/// current frame, slot `k + 1` the `k`-th reference.
pub fn slot_offset<T: Real>(channels: usize, slot: usize) -> Vec<T> {
    (0..channels)
        .map(|c| T::lit((0.7 * ((slot + 1) * (c + 1)) as f64).sin()))
        .collect()
}

/// Token matrix (one row per cell) for the given frames in order.
fn tokens<T: Real>(frames: &[(&FeatureMap<T>, usize)], pos_scale: T) -> Matrix<T> {
    let [c, h, w] = frames[0].0.dims();
    let cells = h * w;
    let pe: Vec<Vec<T>> = if pos_scale == T::zero() {
        Vec::new()
    } else {
        (0..cells).map(|i| positional_encoding(c, i / w, i % w)).collect()
    };
    let mut x = Matrix::zeros(frames.len() * cells, c);
    for (f, &(map, slot)) in frames.iter().enumerate() {
        let offset = slot_offset::<T>(c, slot);
        for i in 0..cells {
            let row = x.row_mut(f * cells + i);
            for (ch, r) in row.iter_mut().enumerate() {
                *r = map.data()[ch * cells + i];
            }
            if pos_scale != T::zero() {
                for ((r, &p), &o) in row.iter_mut().zip(&pe[i]).zip(&offset) {
                    *r += pos_scale * (p + o);
                }
            }
        }
    }
    x
}

/// `x @ m^T`: applies `m` to every token row.
fn apply_rows<T: Real>(x: &Matrix<T>, m: &Matrix<T>) -> Matrix<T> {
    x.matmul(&m.transpose()).expect("token width matches map")
}

/// Numerically stable softmax in place.
fn softmax<T: Real>(logits: &mut [T]) {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut sum = T::zero();
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

/// Residual single-head self-attention over token rows.
fn self_attention<T: Real>(x: &Matrix<T>, p: &AttentionParams<T>) -> Matrix<T> {
    let (n, c) = (x.rows(), x.cols());
    let mut y = x.clone();
    if p.wo.data().iter().all(|&v| v == T::zero()) {
        return y;
    }
    let q = apply_rows(x, &p.wq);
    let k = apply_rows(x, &p.wk);
    let v = apply_rows(x, &p.wv);
    let inv_sqrt = T::one() / T::from_usize(c).unwrap().sqrt();
    let mut a = vec![T::zero(); n];
    let mut ctx = vec![T::zero(); c];
    for i in 0..n {
        let qi = q.row(i);
        for (j, aj) in a.iter_mut().enumerate() {
            *aj = dot(qi, k.row(j)) * inv_sqrt;
        }
        softmax(&mut a);
        ctx.fill(T::zero());
        for (j, &aj) in a.iter().enumerate() {
            for (o, &vj) in ctx.iter_mut().zip(v.row(j)) {
                *o += aj * vj;
            }
        }
        let out = p.wo.matvec(&ctx).expect("context width matches wo");
        for (yi, o) in y.row_mut(i).iter_mut().zip(out) {
            *yi += o;
        }
    }
    y
}

/// Residual cross-attention with a single query vector.
fn cross_attention<T: Real>(query: &[T], x: &Matrix<T>, p: &AttentionParams<T>) -> Vec<T> {
    let c = x.cols();
    let q = p.wq.matvec(query).expect("query width matches wq");
    // q . (Wk x_j) = (Wk^T q) . x_j
    let kq = p.wk.transpose().matvec(&q).expect("square key map");
    let inv_sqrt = T::one() / T::from_usize(c).unwrap().sqrt();
    let mut a: Vec<T> = (0..x.rows()).map(|j| dot(&kq, x.row(j)) * inv_sqrt).collect();
    softmax(&mut a);
    let mut pooled = vec![T::zero(); c];
    for (j, &aj) in a.iter().enumerate() {
        for (o, &xj) in pooled.iter_mut().zip(x.row(j)) {
            *o += aj * xj;
        }
    }
    let ctx = p.wv.matvec(&pooled).expect("square value map");
    let out = p.wo.matvec(&ctx).expect("square output map");
    query.iter().zip(out).map(|(&e, o)| e + o).collect()
}

/// Runs the encoder-decoder over the encoded references and the current
/// map and returns the selected head's weights.
pub fn predict_weights<T: Real>(
    refs: &[FeatureMap<T>],
    cur: &FeatureMap<T>,
    e_fg: &EmbeddingVector<T>,
    params: &PredictorParams<T>,
    head: PredictorHead,
) -> Result<WeightVector<T>> {
    if refs.is_empty() {
        return Err(validation("predictor needs at least one reference map"));
    }
    let c = cur.channels();
    ensure_eq("predictor channels", params.channels(), c)?;
    ensure_eq("embedding length", e_fg.len(), c)?;
    for r in refs {
        r.ensure_same_dims(cur, "reference map")?;
    }
    let mut frames: Vec<(&FeatureMap<T>, usize)> =
        refs.iter().enumerate().map(|(k, r)| (r, k + 1)).collect();
    frames.push((cur, 0));
    let x = tokens(&frames, params.pos_scale);
    let (enc, dec) = params.trunk(head);
    let y = self_attention(&x, enc);
    let u = cross_attention(e_fg.values(), &y, dec);
    let hp = params.head(head);
    let mut w = hp.w.matvec(&u)?;
    for (wi, &bi) in w.iter_mut().zip(&hp.b) {
        *wi += bi;
    }
    let role = match head {
        PredictorHead::Semantic => WeightRole::Semantic,
        PredictorHead::Geometry => WeightRole::Perturbation,
    };
    WeightVector::new(w, role)
}
