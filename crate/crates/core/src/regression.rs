//! Box regression from score-modulated features, box overlap measures and
//! the evaluation losses.

use std::path::Path;

use crate::editing::ScoreMap;
use crate::error::{ensure_eq, validation, Result};
use crate::init::{fan_in_std, gaussian_matrix, seeded_rng};
use crate::linalg::Matrix;
use crate::predictor::LabelMap;
use crate::scalar::Real;
use crate::tensor::{expect_dims, load_named, save_named, FeatureMap, Tensor};

pub const REGDEC_W: &str = "regdec_w";
pub const REGDEC_B: &str = "regdec_b";
/// Default split between the foreground and background regimes of the
/// classification loss.
pub const HINGE_THRESHOLD: f64 = 0.25;

/// Coordinate system a box is expressed in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum CoordFrame {
    /// Feature-grid cells; cell `(h, w)` sits at `x = w`, `y = h`.
    #[default]
    Feature,
    Image,
}

/// Axis-aligned box with `right > left` and `bottom > top`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxLTRB<T> {
    left: T,
    top: T,
    right: T,
    bottom: T,
    frame: CoordFrame,
}

impl<T: Real> BoxLTRB<T> {
    /// A feature-frame box.
    pub fn new(left: T, top: T, right: T, bottom: T) -> Result<Self> {
        Self::in_frame(left, top, right, bottom, CoordFrame::Feature)
    }

    pub fn in_frame(left: T, top: T, right: T, bottom: T, frame: CoordFrame) -> Result<Self> {
        if ![left, top, right, bottom].iter().all(|v| v.is_finite()) {
            return Err(validation("box coordinates must be finite"));
        }
        if !(right > left && bottom > top) {
            return Err(validation(format!(
                "degenerate box ({left}, {top}, {right}, {bottom})"
            )));
        }
        Ok(Self {
            left,
            top,
            right,
            bottom,
            frame,
        })
    }

    /// Box of the given full width and height centred on `(cx, cy)`.
    pub fn from_center(cx: T, cy: T, width: T, height: T) -> Result<Self> {
        let hw = width * T::lit(0.5);
        let hh = height * T::lit(0.5);
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    pub fn left(&self) -> T {
        self.left
    }

    pub fn top(&self) -> T {
        self.top
    }

    pub fn right(&self) -> T {
        self.right
    }

    pub fn bottom(&self) -> T {
        self.bottom
    }

    pub fn frame(&self) -> CoordFrame {
        self.frame
    }

    pub fn width(&self) -> T {
        self.right - self.left
    }

    pub fn height(&self) -> T {
        self.bottom - self.top
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    /// `(x, y)` of the centre.
    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (half * (self.left + self.right), half * (self.top + self.bottom))
    }

    pub fn translated(&self, dx: T, dy: T) -> Result<Self> {
        Self::in_frame(
            self.left + dx,
            self.top + dy,
            self.right + dx,
            self.bottom + dy,
            self.frame,
        )
    }

    pub fn scaled(&self, s: T) -> Result<Self> {
        Self::in_frame(
            self.left * s,
            self.top * s,
            self.right * s,
            self.bottom * s,
            self.frame,
        )
    }
}

fn same_frame<T: Real>(a: &BoxLTRB<T>, b: &BoxLTRB<T>) -> Result<()> {
    if a.frame != b.frame {
        return Err(validation(format!(
            "cannot compare a {:?} box with a {:?} box",
            a.frame, b.frame
        )));
    }
    if !(a.area() > T::zero() && b.area() > T::zero()) {
        return Err(validation("box has zero area"));
    }
    Ok(())
}

fn intersection<T: Real>(a: &BoxLTRB<T>, b: &BoxLTRB<T>) -> T {
    let w = (a.right.min(b.right) - a.left.max(b.left)).max(T::zero());
    let h = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(T::zero());
    w * h
}

pub fn iou<T: Real>(a: &BoxLTRB<T>, b: &BoxLTRB<T>) -> Result<T> {
    same_frame(a, b)?;
    let inter = intersection(a, b);
    Ok(inter / (a.area() + b.area() - inter))
}

/// Generalized IoU: IoU minus the fraction of the enclosing box covered by
/// neither input. Lies in `(-1, 1]`.
pub fn giou<T: Real>(a: &BoxLTRB<T>, b: &BoxLTRB<T>) -> Result<T> {
    same_frame(a, b)?;
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    let hull = (a.right.max(b.right) - a.left.min(b.left))
        * (a.bottom.max(b.bottom) - a.top.min(b.top));
    Ok(inter / union - (hull - union) / hull)
}

/// `1 - giou(a, b)`.
pub fn giou_loss<T: Real>(a: &BoxLTRB<T>, b: &BoxLTRB<T>) -> Result<T> {
    Ok(T::one() - giou(a, b)?)
}

/// Per-location distances to the left, top, right and bottom edges.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMaps<T> {
    d: Tensor<T>,
}

impl<T: Real> RegressionMaps<T> {
    pub fn new(d: Tensor<T>) -> Result<Self> {
        if d.dims().len() != 3 || d.dims()[0] != 4 {
            return Err(validation(format!(
                "regression maps need dims [4,H,W], got {:?}",
                d.dims()
            )));
        }
        if d.data().iter().any(|&v| v < T::zero()) {
            return Err(validation("regression distances must be nonnegative"));
        }
        Ok(Self { d })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.d
    }

    /// `[d_l, d_t, d_r, d_b]` at cell `(h, w)`.
    pub fn at(&self, h: usize, w: usize) -> [T; 4] {
        let (hh, ww) = (self.d.dims()[1], self.d.dims()[2]);
        let cells = hh * ww;
        let i = h * ww + w;
        let data = self.d.data();
        [data[i], data[cells + i], data[2 * cells + i], data[3 * cells + i]]
    }
}

/// Four per-pixel linear maps from `C` channels to the ltrb distances,
/// followed by `exp`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegDecParams<T> {
    weights: Matrix<T>,
    bias: [T; 4],
}

impl<T: Real> RegDecParams<T> {
    pub fn new(weights: Matrix<T>, bias: [T; 4]) -> Result<Self> {
        ensure_eq("regression weight rows", weights.rows(), 4)?;
        if weights.data().iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(validation("regression parameters must be finite"));
        }
        Ok(Self { weights, bias })
    }

    /// Gaussian weights with std `1/sqrt(C)`, zero biases.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        Self {
            weights: gaussian_matrix(4, channels, fan_in_std(channels), &mut rng),
            bias: [T::zero(); 4],
        }
    }

    /// Ignores the features and always predicts a box of the given
    /// half-extents around the score peak.
    pub fn size_prior(channels: usize, half_width: T, half_height: T) -> Result<Self> {
        if !(half_width > T::zero() && half_height > T::zero()) {
            return Err(validation("size prior half-extents must be positive"));
        }
        let (lw, lh) = (half_width.ln(), half_height.ln());
        Self::new(Matrix::zeros(4, channels), [lw, lh, lw, lh])
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn bias(&self) -> [T; 4] {
        self.bias
    }

    pub fn channels(&self) -> usize {
        self.weights.cols()
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let w = Matrix::from_tensor(&load_named::<T>(dir, REGDEC_W)?)?;
        let b = load_named::<T>(dir, REGDEC_B)?;
        expect_dims(&b, REGDEC_B, &[4])?;
        let b = b.data();
        Self::new(w, [b[0], b[1], b[2], b[3]])
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        save_named(dir, REGDEC_W, &self.weights.to_tensor()?)?;
        save_named(dir, REGDEC_B, &Tensor::new(vec![4], self.bias.to_vec())?)
    }
}

/// Decodes ltrb maps from the score-modulated features and reads the box
/// out at the score argmax.
pub fn regress_box<T: Real>(
    p: &ScoreMap<T>,
    z: &FeatureMap<T>,
    params: &RegDecParams<T>,
) -> Result<(RegressionMaps<T>, BoxLTRB<T>)> {
    let [c, h, w] = z.dims();
    ensure_eq("regression channels", params.channels(), c)?;
    if p.height() != h || p.width() != w {
        return Err(validation(format!(
            "score map {}x{} does not match features {h}x{w}",
            p.height(),
            p.width()
        )));
    }
    let cells = h * w;
    let scores = p.data();
    let mut d = vec![T::zero(); 4 * cells];
    for k in 0..4 {
        let wk = params.weights.row(k);
        let out = &mut d[k * cells..(k + 1) * cells];
        out.fill(params.bias[k]);
        for (ch, &wc) in wk.iter().enumerate() {
            if wc == T::zero() {
                continue;
            }
            for ((o, &zv), &pv) in out.iter_mut().zip(z.channel(ch)).zip(scores) {
                *o += wc * (pv * zv);
            }
        }
        for o in out.iter_mut() {
            *o = o.exp();
        }
    }
    if let Some(i) = d.iter().position(|v| !v.is_finite()) {
        return Err(validation(format!(
            "regression distance overflowed at map index {i}"
        )));
    }
    let maps = RegressionMaps::new(Tensor::new(vec![4, h, w], d)?)?;
    let (h0, w0) = p.argmax();
    let [dl, dt, dr, db] = maps.at(h0, w0);
    let (x, y) = (T::from_usize(w0).unwrap(), T::from_usize(h0).unwrap());
    let bx = BoxLTRB::new(x - dl, y - dt, x + dr, y + db)?;
    Ok((maps, bx))
}

/// Classification loss: squared error on cells whose label exceeds `tau`,
/// squared hinge `max(0, pred)^2` elsewhere, averaged over all cells.
///
/// This is an approximation of a compound hinge loss whose exact form is
/// not pinned down; it keeps the foreground-regression / background-hinge
/// split.
pub fn hinge_cls_loss<T: Real>(pred: &ScoreMap<T>, target: &LabelMap<T>, tau: T) -> Result<T> {
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(validation("score map and label map shapes differ"));
    }
    let total: T = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            if y > tau {
                (p - y) * (p - y)
            } else {
                let h = p.max(T::zero());
                h * h
            }
        })
        .sum();
    Ok(total / T::from_usize(pred.data().len()).unwrap())
}

/// Weights of the classification and GIoU terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_cls: f64,
    pub lambda_giou: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_cls: 100.0,
            lambda_giou: 1.0,
        }
    }
}

impl LossConfig {
    pub fn new(lambda_cls: f64, lambda_giou: f64) -> Result<Self> {
        let cfg = Self {
            lambda_cls,
            lambda_giou,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cls", self.lambda_cls), ("lambda_giou", self.lambda_giou)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(validation(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn total_loss<T: Real>(cls: T, giou_term: T, cfg: &LossConfig) -> T {
    T::lit(cfg.lambda_cls) * cls + T::lit(cfg.lambda_giou) * giou_term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::FeatureKind;
    use approx::assert_abs_diff_eq;

    fn b(l: f64, t: f64, r: f64, bt: f64) -> BoxLTRB<f64> {
        BoxLTRB::new(l, t, r, bt).unwrap()
    }

    #[test]
    fn hand_giou_case() {
        let g = giou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert_abs_diff_eq!(g, 1.0 / 7.0 - 2.0 / 9.0, epsilon = 1e-12);
        let i = iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)).unwrap();
        assert_abs_diff_eq!(i, 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn giou_identity_and_far_apart() {
        let a = b(0.0, 0.0, 1.0, 1.0);
        assert_eq!(giou(&a, &a).unwrap(), 1.0);
        let far = a.translated(100.0, 0.0).unwrap();
        assert!(giou(&a, &far).unwrap() <= -0.96);
    }

    #[test]
    fn degenerate_and_mixed_frames_are_rejected() {
        assert!(BoxLTRB::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoxLTRB::new(0.0, 0.0, 1.0, f64::NAN).is_err());
        let img = BoxLTRB::in_frame(0.0, 0.0, 1.0, 1.0, CoordFrame::Image).unwrap();
        assert!(iou(&img, &b(0.0, 0.0, 1.0, 1.0)).is_err());
        let tiny = b(0.0, 0.0, 1e-200, 1e-200);
        assert!(giou(&tiny, &tiny).is_err());
    }

    #[test]
    fn zero_scores_give_unit_box_at_origin() {
        let z = FeatureMap::from_fn(FeatureKind::Fused, [3, 2, 2], |c, h, w| (c + h + w) as f64)
            .unwrap();
        let p = ScoreMap::new(Tensor::zeros(vec![2, 2]).unwrap()).unwrap();
        let params = RegDecParams::<f64>::seeded(3, 4);
        let (maps, bx) = regress_box(&p, &z, &params).unwrap();
        assert!(maps.tensor().data().iter().all(|&v| v == 1.0));
        assert_eq!(bx, b(-1.0, -1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_regression_at_argmax() {
        // C = 2, 2x2 grid, peak at (1, 0).
        let z = FeatureMap::from_vec(
            FeatureKind::Fused,
            [2, 2, 2],
            vec![0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 3.0],
        )
        .unwrap();
        let p = ScoreMap::new(Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.9, 0.3]).unwrap()).unwrap();
        let w = Matrix::from_rows(&[[0.2, -0.1], [0.0, 0.3], [-0.4, 0.5], [0.1, 0.1]]).unwrap();
        let bias = [0.1, -0.2, 0.0, 0.3];
        let params = RegDecParams::new(w, bias).unwrap();
        let (maps, bx) = regress_box(&p, &z, &params).unwrap();
        // Modulated column at (1,0): 0.9 * [2.0, -0.5] = [1.8, -0.45].
        let expect = [
            (0.2 * 1.8 - 0.1 * -0.45 + 0.1_f64).exp(),
            (0.3 * -0.45 - 0.2_f64).exp(),
            (-0.4 * 1.8 + 0.5 * -0.45_f64).exp(),
            (0.1 * 1.8 + 0.1 * -0.45 + 0.3_f64).exp(),
        ];
        let got = maps.at(1, 0);
        for k in 0..4 {
            assert_abs_diff_eq!(got[k], expect[k], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(bx.left(), -expect[0], epsilon = 1e-12);
        assert_abs_diff_eq!(bx.top(), 1.0 - expect[1], epsilon = 1e-12);
        assert_abs_diff_eq!(bx.right(), expect[2], epsilon = 1e-12);
        assert_abs_diff_eq!(bx.bottom(), 1.0 + expect[3], epsilon = 1e-12);
    }

    #[test]
    fn one_cell_shift_moves_the_box_one_cell() {
        let (c, h, w) = (3, 5, 6);
        let base = |c: usize, y: usize, x: usize| ((c * 7 + y * 3 + x * 5) % 11) as f64 * 0.1;
        let z0 = FeatureMap::from_fn(FeatureKind::Fused, [c, h, w], |c, y, x| {
            if x == 0 { 0.0 } else { base(c, y, x - 1) }
        })
        .unwrap();
        let z1 = FeatureMap::from_fn(FeatureKind::Fused, [c, h, w], |c, y, x| {
            if x <= 1 { 0.0 } else { base(c, y, x - 2) }
        })
        .unwrap();
        let score = |x: usize, y: usize| -(((x as f64) - 2.0).powi(2) + ((y as f64) - 2.0).powi(2));
        let p0 = ScoreMap::new(Tensor::from_fn(vec![h, w], |i| score(i % w, i / w)).unwrap()).unwrap();
        let p1 = ScoreMap::new(
            Tensor::from_fn(vec![h, w], |i| score((i % w).saturating_sub(1), i / w)).unwrap(),
        )
        .unwrap();
        let params = RegDecParams::<f64>::seeded(c, 9);
        let (_, b0) = regress_box(&p0, &z0, &params).unwrap();
        let (_, b1) = regress_box(&p1, &z1, &params).unwrap();
        assert_eq!(p1.argmax(), (2, 3));
        assert_eq!(b1.left() - b0.left(), 1.0);
        assert_eq!(b1.right() - b0.right(), 1.0);
        assert_eq!(b1.top(), b0.top());
    }

    #[test]
    fn size_prior_ignores_features() {
        let params = RegDecParams::size_prior(2, 1.5, 2.5).unwrap();
        let z = FeatureMap::from_fn(FeatureKind::Fused, [2, 3, 3], |c, h, w| (c * h + w) as f64)
            .unwrap();
        let p = ScoreMap::new(Tensor::from_fn(vec![3, 3], |i| (i == 4) as u8 as f64).unwrap())
            .unwrap();
        let (_, bx) = regress_box(&p, &z, &params).unwrap();
        assert_abs_diff_eq!(bx.width(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bx.height(), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bx.center().0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hinge_loss_cases() {
        let grid = |v: Vec<f64>| ScoreMap::new(Tensor::new(vec![1, v.len()], v).unwrap()).unwrap();
        let label = |v: Vec<f64>| LabelMap::new(Tensor::new(vec![1, v.len()], v).unwrap()).unwrap();
        let l = hinge_cls_loss(&grid(vec![0.3]), &label(vec![0.0]), 0.25).unwrap();
        assert_abs_diff_eq!(l, 0.09, epsilon = 1e-15);
        let l = hinge_cls_loss(&grid(vec![1.0, 0.5]), &label(vec![1.0, 0.5]), 0.25).unwrap();
        assert_eq!(l, 0.0);
        let l = hinge_cls_loss(&grid(vec![-1.0, 0.0, 1.0]), &label(vec![0.0, 0.1, 1.0]), 0.25)
            .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(0.3, 0.4, &LossConfig::new(0.0, 0.0).unwrap()), 0.0);
        assert_eq!(total_loss(0.5, 0.9, &LossConfig::new(1.0, 0.0).unwrap()), 0.5);
        assert_abs_diff_eq!(
            total_loss(0.1, 0.2, &LossConfig::new(2.0, 3.0).unwrap()),
            0.8,
            epsilon = 1e-15
        );
        assert!(LossConfig::new(-1.0, 0.0).is_err());
    }

    #[test]
    fn params_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = RegDecParams::<f64>::size_prior(3, 2.0, 4.0).unwrap();
        p.save_dir(dir.path()).unwrap();
        let back = RegDecParams::<f64>::load_dir(dir.path()).unwrap();
        assert_abs_diff_eq!(back.bias()[1], 4.0_f64.ln(), epsilon = 1e-6);
    }
}
