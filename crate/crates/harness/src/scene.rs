//! Seeded synthetic scenes: a target, look-alike distractors, occluders,
//! static semantic and geometric clutter and additive noise.

use nsedit_core::init::seeded_rng;
use nsedit_core::regression::BoxLTRB;
use nsedit_core::{FeatureKind, FeatureMap};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Centre `(x, y)` per frame, in feature-cell coordinates.
pub type Trajectory = Vec<(f64, f64)>;

/// A distractor's path and how much it resembles the target.
#[derive(Clone, Debug, PartialEq)]
pub struct DistractorSpec {
    pub trajectory: Trajectory,
    /// Semantic similarity: emits `alpha * s_t + (1 - alpha) * s_d`.
    pub alpha: f64,
    /// Geometric similarity: emits `beta * g_t + (1 - beta) * g_d`.
    pub beta: f64,
    /// Per-frame amplitude factor in `[0, 1]`; 0 means off screen.
    pub visibility: Vec<f64>,
}

/// Semantic corruption of a fraction `rho` of channels inside `region`
/// for frames `start..end`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionEvent {
    pub start: usize,
    pub end: usize,
    pub region: BoxLTRB<f64>,
    pub rho: f64,
}

impl OcclusionEvent {
    pub fn active(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }

    pub fn covers(&self, x: f64, y: f64) -> bool {
        let r = &self.region;
        x >= r.left() && x <= r.right() && y >= r.top() && y <= r.bottom()
    }
}

/// Everything needed to render one sequence deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub sem_channels: usize,
    pub geo_channels: usize,
    pub target: Trajectory,
    /// Full box extent `(width, height)` of the target.
    pub target_size: (f64, f64),
    pub distractors: Vec<DistractorSpec>,
    pub occlusions: Vec<OcclusionEvent>,
    /// Peak semantic amplitude of an object blob.
    pub semantic_amp: f64,
    /// Peak geometric amplitude of an object blob.
    pub geometric_amp: f64,
    /// Number of static clutter directions and their per-cell std.
    pub clutter_rank: usize,
    pub clutter_amp: f64,
    pub geo_clutter_rank: usize,
    pub geo_clutter_amp: f64,
    /// Blob std as a fraction of the box side.
    pub blob_sigma_frac: f64,
    pub noise_std: f64,
    /// Distractor-centre distance at or below which a frame counts as
    /// distractor-near.
    pub proximity: f64,
    pub seed: u64,
}

/// Frame attribute used to partition metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Occlusion,
    Distractor,
    Clean,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Occlusion, Attribute::Distractor, Attribute::Clean];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Occlusion => "occlusion",
            Attribute::Distractor => "distractor",
            Attribute::Clean => "clean",
        }
    }
}

/// One rendered frame.
#[derive(Clone, Debug)]
pub struct Frame {
    pub semantic: FeatureMap<f64>,
    pub geometric: FeatureMap<f64>,
    pub gt: BoxLTRB<f64>,
    pub attribute: Attribute,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(invalid("frames", "must be at least 1"));
        }
        if self.height < 2 || self.width < 2 {
            return Err(invalid("grid", "height and width must be at least 2"));
        }
        if self.sem_channels == 0 || self.geo_channels == 0 {
            return Err(invalid("channels", "must be at least 1"));
        }
        let (tw, th) = self.target_size;
        if !(tw > 0.0 && th > 0.0) {
            return Err(invalid("target_size", "must be positive"));
        }
        self.check_path("target", &self.target)?;
        for (i, d) in self.distractors.iter().enumerate() {
            self.check_path(&format!("distractor {i}"), &d.trajectory)?;
            unit(&format!("distractor {i} alpha"), d.alpha)?;
            unit(&format!("distractor {i} beta"), d.beta)?;
            if d.visibility.len() != self.frames {
                return Err(invalid(&format!("distractor {i}"), "visibility length must equal frames"));
            }
            for &v in &d.visibility {
                unit(&format!("distractor {i} visibility"), v)?;
            }
        }
        for (i, o) in self.occlusions.iter().enumerate() {
            unit(&format!("occlusion {i} rho"), o.rho)?;
            if o.start >= o.end {
                return Err(invalid(&format!("occlusion {i}"), "start must precede end"));
            }
        }
        for (name, v) in [
            ("semantic_amp", self.semantic_amp),
            ("geometric_amp", self.geometric_amp),
            ("clutter_amp", self.clutter_amp),
            ("geo_clutter_amp", self.geo_clutter_amp),
            ("noise_std", self.noise_std),
            ("proximity", self.proximity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and nonnegative"));
            }
        }
        if !(self.blob_sigma_frac > 0.0 && self.blob_sigma_frac.is_finite()) {
            return Err(invalid("blob_sigma_frac", "must be positive"));
        }
        Ok(())
    }

    fn check_path(&self, what: &str, path: &Trajectory) -> Result<()> {
        if path.len() != self.frames {
            return Err(invalid(what, "trajectory length must equal frames"));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for &(x, y) in path {
            if !(x >= 0.0 && x < w && y >= 0.0 && y < h) {
                return Err(invalid(what, "trajectory leaves the grid"));
            }
        }
        Ok(())
    }

    pub fn gt_box(&self, t: usize) -> BoxLTRB<f64> {
        let (x, y) = self.target[t];
        BoxLTRB::from_center(x, y, self.target_size.0, self.target_size.1)
            .expect("validated positive size")
    }

    /// Occlusion wins over distractor proximity.
    pub fn attribute(&self, t: usize) -> Attribute {
        let (x, y) = self.target[t];
        if self.occlusions.iter().any(|o| o.active(t) && o.covers(x, y)) {
            return Attribute::Occlusion;
        }
        let near = self.distractors.iter().any(|d| {
            if d.visibility[t] <= 0.0 {
                return false;
            }
            let (dx, dy) = d.trajectory[t];
            ((dx - x).powi(2) + (dy - y).powi(2)).sqrt() <= self.proximity
        });
        if near {
            Attribute::Distractor
        } else {
            Attribute::Clean
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(name, "must lie in [0, 1]"));
    }
    Ok(())
}

/// Random `+-1/sqrt(C)` vector.
fn signature(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let s = 1.0 / (c as f64).sqrt();
    (0..c).map(|_| if rng.gen::<bool>() { s } else { -s }).collect()
}

fn mix(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| wa * x + wb * y).collect()
}

/// Adds `amp * blob(x, y) * sig` to a `[C, H, W]` buffer.
fn add_blob(buf: &mut [f64], dims: [usize; 3], centre: (f64, f64), sigma: (f64, f64), sig: &[f64], amp: f64) {
    let [c, h, w] = dims;
    let cells = h * w;
    let (x0, y0) = centre;
    for yy in 0..h {
        let ey = (yy as f64 - y0).powi(2) / (2.0 * sigma.1 * sigma.1);
        if ey > 30.0 {
            continue;
        }
        for xx in 0..w {
            let e = ey + (xx as f64 - x0).powi(2) / (2.0 * sigma.0 * sigma.0);
            if e > 30.0 {
                continue;
            }
            let a = amp * (-e).exp();
            let i = yy * w + xx;
            for ch in 0..c {
                buf[ch * cells + i] += a * sig[ch];
            }
        }
    }
}

/// Static clutter: `rank` random directions with i.i.d. per-cell weights.
fn clutter(dims: [usize; 3], rank: usize, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let [c, h, w] = dims;
    let cells = h * w;
    let mut out = vec![0.0; c * cells];
    if rank == 0 || amp == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, amp).expect("finite amplitude");
    for _ in 0..rank {
        let dir = signature(c, rng);
        for i in 0..cells {
            let k = normal.sample(rng);
            for ch in 0..c {
                out[ch * cells + i] += k * dir[ch];
            }
        }
    }
    out
}

/// Renders every frame of `spec`. The same spec always yields bit-identical
/// tensors.
pub fn gen_scene(spec: &SequenceSpec) -> Result<Vec<Frame>> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed ^ 0x5eed_5ce0e);
    let sd = [spec.sem_channels, spec.height, spec.width];
    let gd = [spec.geo_channels, spec.height, spec.width];
    let s_t = signature(spec.sem_channels, &mut rng);
    let g_t = signature(spec.geo_channels, &mut rng);
    let distractor_sigs: Vec<(Vec<f64>, Vec<f64>)> = spec
        .distractors
        .iter()
        .map(|d| {
            let s_d = signature(spec.sem_channels, &mut rng);
            let g_d = signature(spec.geo_channels, &mut rng);
            (
                mix(&s_t, d.alpha, &s_d, 1.0 - d.alpha),
                mix(&g_t, d.beta, &g_d, 1.0 - d.beta),
            )
        })
        .collect();
    let sem_bg = clutter(sd, spec.clutter_rank, spec.clutter_amp, &mut rng);
    let geo_bg = clutter(gd, spec.geo_clutter_rank, spec.geo_clutter_amp, &mut rng);
    let occluded_channels: Vec<Vec<usize>> = spec
        .occlusions
        .iter()
        .map(|o| {
            let k = (o.rho * spec.sem_channels as f64).round() as usize;
            let mut chans: Vec<usize> = (0..spec.sem_channels).collect();
            chans.shuffle(&mut rng);
            chans.truncate(k);
            chans.sort_unstable();
            chans
        })
        .collect();
    let sigma = (
        spec.target_size.0 * spec.blob_sigma_frac,
        spec.target_size.1 * spec.blob_sigma_frac,
    );
    let noise = (spec.noise_std > 0.0).then(|| Normal::new(0.0, spec.noise_std).expect("finite"));
    let cells = spec.height * spec.width;

    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut sem = sem_bg.clone();
        let mut geo = geo_bg.clone();
        add_blob(&mut sem, sd, spec.target[t], sigma, &s_t, spec.semantic_amp);
        add_blob(&mut geo, gd, spec.target[t], sigma, &g_t, spec.geometric_amp);
        for (d, (s, g)) in spec.distractors.iter().zip(&distractor_sigs) {
            let v = d.visibility[t];
            if v > 0.0 {
                add_blob(&mut sem, sd, d.trajectory[t], sigma, s, v * spec.semantic_amp);
                add_blob(&mut geo, gd, d.trajectory[t], sigma, g, v * spec.geometric_amp);
            }
        }
        if let Some(n) = &noise {
            for v in sem.iter_mut().chain(geo.iter_mut()) {
                *v += n.sample(&mut rng);
            }
        }
        for (o, chans) in spec.occlusions.iter().zip(&occluded_channels) {
            if !o.active(t) {
                continue;
            }
            for i in 0..cells {
                let (x, y) = ((i % spec.width) as f64, (i / spec.width) as f64);
                if o.covers(x, y) {
                    for &ch in chans {
                        sem[ch * cells + i] = 0.0;
                    }
                }
            }
        }
        frames.push(Frame {
            semantic: FeatureMap::from_vec(FeatureKind::Semantic, sd, sem)?,
            geometric: FeatureMap::from_vec(FeatureKind::Geometric, gd, geo)?,
            gt: spec.gt_box(t),
            attribute: spec.attribute(t),
        });
    }
    Ok(frames)
}

/// Knobs of the random scene preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub sem_channels: usize,
    pub geo_channels: usize,
    pub target_size: f64,
    pub semantic_amp: f64,
    pub geometric_amp: f64,
    pub clutter_rank: usize,
    pub clutter_amp: f64,
    pub geo_clutter_rank: usize,
    pub geo_clutter_amp: f64,
    pub blob_sigma_frac: f64,
    pub noise_std: f64,
    /// Amplitude range of the target's sinusoidal motion, in cells.
    pub motion_amp: [f64; 2],
    /// Period range of the target's motion, in frames.
    pub motion_period: [f64; 2],
    pub distractors: usize,
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    /// Distractor distance from the target outside and inside its approach.
    pub far_distance: f64,
    pub near_distance: f64,
    /// Frames of one distractor approach (including ramps).
    pub approach_frames: usize,
    pub occlusions: usize,
    pub occlusion_frames: usize,
    pub rho: f64,
    pub proximity: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            frames: 60,
            height: 18,
            width: 18,
            sem_channels: 16,
            geo_channels: 16,
            target_size: 4.0,
            semantic_amp: 1.0,
            geometric_amp: 3.0,
            clutter_rank: 4,
            clutter_amp: 0.25,
            geo_clutter_rank: 2,
            geo_clutter_amp: 0.25,
            blob_sigma_frac: 0.3,
            noise_std: 0.01,
            motion_amp: [1.5, 3.5],
            motion_period: [40.0, 90.0],
            distractors: 1,
            alpha: [0.35, 0.5],
            beta: [0.85, 1.0],
            far_distance: 9.0,
            near_distance: 5.0,
            approach_frames: 16,
            occlusions: 1,
            occlusion_frames: 10,
            rho: 1.0,
            proximity: 6.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(invalid("scene.frames", "must be at least 1"));
        }
        if self.height < 2 || self.width < 2 {
            return Err(invalid("scene.height/width", "must be at least 2"));
        }
        if self.sem_channels == 0 || self.geo_channels == 0 {
            return Err(invalid("scene.channels", "must be at least 1"));
        }
        let margin = self.target_size / 2.0 + 0.5;
        if !(self.target_size > 0.0) || 2.0 * margin >= self.height.min(self.width) as f64 {
            return Err(invalid("scene.target_size", "target does not fit the grid"));
        }
        for (name, [lo, hi]) in [("scene.alpha", self.alpha), ("scene.beta", self.beta)] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(invalid(name, "needs 0 <= lo <= hi <= 1"));
            }
        }
        for (name, [lo, hi]) in [
            ("scene.motion_amp", self.motion_amp),
            ("scene.motion_period", self.motion_period),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(invalid(name, "needs 0 <= lo <= hi"));
            }
        }
        if self.motion_period[0] <= 0.0 {
            return Err(invalid("scene.motion_period", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(invalid("scene.rho", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("scene.semantic_amp", self.semantic_amp),
            ("scene.geometric_amp", self.geometric_amp),
            ("scene.clutter_amp", self.clutter_amp),
            ("scene.geo_clutter_amp", self.geo_clutter_amp),
            ("scene.noise_std", self.noise_std),
            ("scene.far_distance", self.far_distance),
            ("scene.near_distance", self.near_distance),
            ("scene.proximity", self.proximity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "must be finite and nonnegative"));
            }
        }
        if !(self.blob_sigma_frac > 0.0) {
            return Err(invalid("scene.blob_sigma_frac", "must be positive"));
        }
        Ok(())
    }

    /// Draws a sequence: a target drifting sinusoidally, distractors that
    /// approach the target once, and occlusions that cover it for a span.
    /// Events are laid out one after another so frames carry one attribute.
    pub fn sample(&self, seed: u64) -> Result<SequenceSpec> {
        self.validate()?;
        let mut rng = seeded_rng(seed);
        let (w, h) = (self.width as f64, self.height as f64);
        let margin = self.target_size / 2.0 + 0.5;
        let clamp = |v: f64, hi: f64| v.clamp(margin, hi - 1.0 - margin);

        let span = |rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]| {
            if hi > lo { rng.gen_range(lo..=hi) } else { lo }
        };
        let cx = rng.gen_range(w * 0.4..=w * 0.6 - 1.0);
        let cy = rng.gen_range(h * 0.4..=h * 0.6 - 1.0);
        let (ax, ay) = (span(&mut rng, self.motion_amp), span(&mut rng, self.motion_amp));
        let (px, py) = (span(&mut rng, self.motion_period), span(&mut rng, self.motion_period));
        let (fx, fy) = (
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        let target: Trajectory = (0..self.frames)
            .map(|t| {
                let t = t as f64;
                (
                    clamp(cx + ax * (std::f64::consts::TAU * t / px + fx).sin(), w),
                    clamp(cy + ay * (std::f64::consts::TAU * t / py + fy).sin(), h),
                )
            })
            .collect();

        // Event slots after a clean lead-in, in random order.
        let lead = 4.min(self.frames.saturating_sub(1));
        let mut events: Vec<bool> = std::iter::repeat(true)
            .take(self.distractors)
            .chain(std::iter::repeat(false).take(self.occlusions))
            .collect();
        // Distractor approaches come first so their frames are not
        // affected by drift caused by an earlier occlusion.
        events.sort_by_key(|&is_distractor| !is_distractor);
        let mut cursor = lead + 2;
        let mut approaches = Vec::new();
        let mut occlusion_spans = Vec::new();
        for is_distractor in events {
            let len = if is_distractor { self.approach_frames } else { self.occlusion_frames };
            let start = cursor.min(self.frames);
            let end = (start + len).min(self.frames);
            if is_distractor {
                approaches.push((start, end));
            } else {
                occlusion_spans.push((start, end));
            }
            cursor = end + 4;
        }

        let mut distractors = Vec::new();
        for &(start, end) in &approaches {
            let alpha = span(&mut rng, self.alpha);
            let beta = span(&mut rng, self.beta);
            let angle0 = rng.gen_range(0.0..std::f64::consts::TAU);
            let spin = rng.gen_range(-0.05..0.05);
            let ramp = 4.0;
            // 1 inside the approach, fading linearly to 0 over `ramp`
            // frames on either side.
            let closeness: Vec<f64> = (0..self.frames)
                .map(|t| {
                    let tf = t as f64;
                    if t < start || t >= end {
                        let gap = if t < start { start as f64 - tf } else { tf - (end as f64 - 1.0) };
                        (1.0 - gap / ramp).max(0.0)
                    } else {
                        1.0
                    }
                })
                .collect();
            let trajectory = (0..self.frames)
                .map(|t| {
                    let tf = t as f64;
                    let dist = self.far_distance + (self.near_distance - self.far_distance) * closeness[t];
                    let angle = angle0 + spin * tf;
                    let (tx, ty) = target[t];
                    (clamp(tx + dist * angle.cos(), w), clamp(ty + dist * angle.sin(), h))
                })
                .collect();
            distractors.push(DistractorSpec {
                trajectory,
                alpha,
                beta,
                visibility: closeness,
            });
        }

        let half = self.target_size / 2.0;
        let mut occlusions = Vec::new();
        for &(start, end) in &occlusion_spans {
            if start >= end {
                continue;
            }
            let (mut l, mut t_, mut r, mut b) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for &(x, y) in &target[start..end] {
                l = l.min(x - half);
                t_ = t_.min(y - half);
                r = r.max(x + half);
                b = b.max(y + half);
            }
            occlusions.push(OcclusionEvent {
                start,
                end,
                region: BoxLTRB::new(l - 0.5, t_ - 0.5, r + 0.5, b + 0.5)?,
                rho: self.rho,
            });
        }

        let spec = SequenceSpec {
            frames: self.frames,
            height: self.height,
            width: self.width,
            sem_channels: self.sem_channels,
            geo_channels: self.geo_channels,
            target,
            target_size: (self.target_size, self.target_size),
            distractors,
            occlusions,
            semantic_amp: self.semantic_amp,
            geometric_amp: self.geometric_amp,
            clutter_rank: self.clutter_rank,
            clutter_amp: self.clutter_amp,
            geo_clutter_rank: self.geo_clutter_rank,
            geo_clutter_amp: self.geo_clutter_amp,
            blob_sigma_frac: self.blob_sigma_frac,
            noise_std: self.noise_std,
            proximity: self.proximity,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}
