//! Multi-sequence studies: every mode on every seeded sequence, plus the
//! CSV tables and directional tests built from them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::{evaluate, sign_test, Claim, RunMetrics, SignTest, SliceStats};
use crate::scene::{gen_scene, Attribute, SceneConfig};
use crate::tracker::{run_tracker, Mode, ModelConfig, PreparedSequence, TrackRun, TrackerConfig, TrackerModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySettings {
    /// Number of sequences; sequence `i` uses scene seed `seed + i`.
    pub sequences: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Significance level of the directional sign tests.
    pub alpha: f64,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            sequences: 100,
            seed: 0,
            modes: Mode::ALL.to_vec(),
            alpha: 0.05,
        }
    }
}

/// Everything a study needs. Each section maps to a table of the config
/// file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub study: StudySettings,
    pub scene: SceneConfig,
    pub tracker: TrackerConfig,
    pub model: ModelConfig,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.study.sequences == 0 {
            return Err(invalid("study.sequences", "must be at least 1"));
        }
        if self.study.modes.is_empty() {
            return Err(invalid("study.modes", "must list at least one mode"));
        }
        if !(self.study.alpha > 0.0 && self.study.alpha < 1.0) {
            return Err(invalid("study.alpha", "must lie in (0, 1)"));
        }
        self.scene.validate()?;
        self.tracker.validate()?;
        self.model.validate()
    }

    pub fn build_model(&self) -> Result<TrackerModel> {
        TrackerModel::build(
            &self.model,
            self.scene.sem_channels,
            self.scene.geo_channels,
            (self.scene.height, self.scene.width),
        )
    }
}

#[derive(Clone, Debug)]
pub struct ModeRun {
    pub run: TrackRun,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug)]
pub struct SequenceResult {
    pub index: usize,
    pub seed: u64,
    pub attributes: Vec<Attribute>,
    pub runs: Vec<ModeRun>,
}

impl SequenceResult {
    pub fn mode(&self, mode: Mode) -> Option<&ModeRun> {
        self.runs.iter().find(|r| r.run.mode == mode)
    }
}

/// Generates sequence `index` and tracks it in every configured mode.
pub fn run_sequence(cfg: &StudyConfig, model: &TrackerModel, index: usize) -> Result<SequenceResult> {
    let seed = cfg.study.seed.wrapping_add(index as u64);
    let spec = cfg.scene.sample(seed)?;
    let frames = gen_scene(&spec)?;
    let attributes: Vec<Attribute> = frames.iter().map(|f| f.attribute).collect();
    let prepared = PreparedSequence::new(frames, model)?;
    let runs = cfg
        .study
        .modes
        .iter()
        .map(|&mode| {
            let run = run_tracker(&prepared, mode, &cfg.tracker, model)?;
            let metrics = evaluate(&run, &attributes)?;
            Ok(ModeRun { run, metrics })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceResult {
        index,
        seed,
        attributes,
        runs,
    })
}

#[derive(Clone, Debug)]
pub struct StudyResult {
    pub sequences: Vec<SequenceResult>,
}

/// Runs every sequence. With `parallel` the sequences are spread over the
/// current rayon pool; results keep sequence order either way.
pub fn run_study(cfg: &StudyConfig, parallel: bool) -> Result<StudyResult> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let n = cfg.study.sequences;
    let sequences = if parallel {
        (0..n)
            .into_par_iter()
            .map(|i| run_sequence(cfg, &model, i))
            .collect::<Result<Vec<_>>>()?
    } else {
        (0..n).map(|i| run_sequence(cfg, &model, i)).collect::<Result<Vec<_>>>()?
    };
    Ok(StudyResult { sequences })
}

/// Row of the per-run table: one sequence tracked in one mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub sequence: usize,
    pub seed: u64,
    pub mode: &'static str,
    pub frames: usize,
    pub mean_iou: f64,
    pub suc_auc: f64,
    pub occlusion_frames: usize,
    pub occlusion_iou: f64,
    pub distractor_frames: usize,
    pub distractor_iou: f64,
    pub clean_frames: usize,
    pub clean_iou: f64,
    pub argmax_preservation: f64,
    pub span_argmax_preservation: f64,
    pub mean_retained_rank: f64,
}

/// Row of the aggregate table: frames of one attribute (or `all`) pooled
/// over every sequence for one mode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub mode: &'static str,
    pub slice: &'static str,
    pub sequences: usize,
    pub frames: usize,
    pub mean_iou: f64,
    pub suc_auc: f64,
}

/// Row of the per-frame table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameRow {
    pub sequence: usize,
    pub seed: u64,
    pub mode: &'static str,
    pub frame: usize,
    pub attribute: &'static str,
    pub iou: f64,
    pub argmax_agree: bool,
    pub span_argmax_agree: bool,
    pub peak: f64,
    pub retained_rank: usize,
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

/// Stage wall-clock times of one frame, in milliseconds. Kept apart from
/// [`FrameRow`] because timings differ between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub sequence: usize,
    pub mode: &'static str,
    pub frame: usize,
    pub fuse_ms: f64,
    pub predict_ms: f64,
    pub edit_ms: f64,
    pub localize_ms: f64,
    pub regress_ms: f64,
}

/// A directional claim between two modes on one slice of frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    pub slice: Attribute,
    pub left: Mode,
    pub claim: Claim,
    pub right: Mode,
}

/// The expected ordering of the three modes on hard frames.
pub const DIRECTIONAL_CLAIMS: [Comparison; 4] = [
    Comparison {
        slice: Attribute::Occlusion,
        left: Mode::NullspaceEdit,
        claim: Claim::AtLeast,
        right: Mode::NaiveFusion,
    },
    Comparison {
        slice: Attribute::Occlusion,
        left: Mode::NaiveFusion,
        claim: Claim::Greater,
        right: Mode::SemanticOnly,
    },
    Comparison {
        slice: Attribute::Distractor,
        left: Mode::NullspaceEdit,
        claim: Claim::Greater,
        right: Mode::NaiveFusion,
    },
    Comparison {
        slice: Attribute::Distractor,
        left: Mode::NaiveFusion,
        claim: Claim::Less,
        right: Mode::SemanticOnly,
    },
];

impl Comparison {
    pub fn describe(&self) -> String {
        format!(
            "{} iou: {} {} {}",
            self.slice.as_str(),
            self.left.as_str(),
            self.claim.symbol(),
            self.right.as_str()
        )
    }
}

impl StudyResult {
    pub fn run_rows(&self) -> Vec<RunRow> {
        let mut rows = Vec::new();
        for s in &self.sequences {
            for r in &s.runs {
                let m = &r.metrics;
                let occ = m.attribute(Attribute::Occlusion);
                let dis = m.attribute(Attribute::Distractor);
                let clean = m.attribute(Attribute::Clean);
                let ranks = &r.run.records;
                let mean_rank = if ranks.is_empty() {
                    0.0
                } else {
                    ranks.iter().map(|x| x.retained_rank as f64).sum::<f64>() / ranks.len() as f64
                };
                rows.push(RunRow {
                    sequence: s.index,
                    seed: s.seed,
                    mode: r.run.mode.as_str(),
                    frames: m.overall.frames,
                    mean_iou: m.overall.mean_iou,
                    suc_auc: m.overall.suc_auc,
                    occlusion_frames: occ.frames,
                    occlusion_iou: occ.mean_iou,
                    distractor_frames: dis.frames,
                    distractor_iou: dis.mean_iou,
                    clean_frames: clean.frames,
                    clean_iou: clean.mean_iou,
                    argmax_preservation: m.argmax_preservation,
                    span_argmax_preservation: m.span_argmax_preservation,
                    mean_retained_rank: mean_rank,
                });
            }
        }
        rows
    }

    pub fn frame_rows(&self) -> Vec<FrameRow> {
        let mut rows = Vec::new();
        for s in &self.sequences {
            for r in &s.runs {
                for (rec, a) in r.run.records.iter().zip(&s.attributes) {
                    rows.push(FrameRow {
                        sequence: s.index,
                        seed: s.seed,
                        mode: r.run.mode.as_str(),
                        frame: rec.frame,
                        attribute: a.as_str(),
                        iou: rec.iou,
                        argmax_agree: rec.argmax_agree,
                        span_argmax_agree: rec.span_argmax_agree,
                        peak: rec.peak,
                        retained_rank: rec.retained_rank,
                        left: rec.pred.left(),
                        top: rec.pred.top(),
                        right: rec.pred.right(),
                        bottom: rec.pred.bottom(),
                    });
                }
            }
        }
        rows
    }

    pub fn timing_rows(&self) -> Vec<TimingRow> {
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        let mut rows = Vec::new();
        for s in &self.sequences {
            for r in &s.runs {
                for (rec, t) in r.run.records.iter().zip(&r.run.timings) {
                    rows.push(TimingRow {
                        sequence: s.index,
                        mode: r.run.mode.as_str(),
                        frame: rec.frame,
                        fuse_ms: ms(t.fuse),
                        predict_ms: ms(t.predict),
                        edit_ms: ms(t.edit),
                        localize_ms: ms(t.localize),
                        regress_ms: ms(t.regress),
                    });
                }
            }
        }
        rows
    }

    fn modes(&self) -> Vec<Mode> {
        self.sequences
            .first()
            .map(|s| s.runs.iter().map(|r| r.run.mode).collect())
            .unwrap_or_default()
    }

    pub fn aggregate_rows(&self) -> Vec<AggregateRow> {
        let mut rows = Vec::new();
        let slices: [(&'static str, Option<Attribute>); 4] = [
            ("all", None),
            (Attribute::Occlusion.as_str(), Some(Attribute::Occlusion)),
            (Attribute::Distractor.as_str(), Some(Attribute::Distractor)),
            (Attribute::Clean.as_str(), Some(Attribute::Clean)),
        ];
        for mode in self.modes() {
            for (name, slice) in slices {
                let mut ious = Vec::new();
                let mut sequences = 0;
                for s in &self.sequences {
                    let Some(r) = s.mode(mode) else { continue };
                    let before = ious.len();
                    ious.extend(
                        r.run
                            .records
                            .iter()
                            .zip(&s.attributes)
                            .filter(|(_, &a)| slice.map_or(true, |want| a == want))
                            .map(|(rec, _)| rec.iou),
                    );
                    if ious.len() > before {
                        sequences += 1;
                    }
                }
                let stats = SliceStats::from_ious(&ious);
                rows.push(AggregateRow {
                    mode: mode.as_str(),
                    slice: name,
                    sequences,
                    frames: stats.frames,
                    mean_iou: stats.mean_iou,
                    suc_auc: stats.suc_auc,
                });
            }
        }
        rows
    }

    /// Paired per-sequence mean IoU on `slice` for two modes. Sequences
    /// without frames of that attribute are skipped.
    pub fn paired_slice_ious(&self, slice: Attribute, left: Mode, right: Mode) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.sequences {
            let (Some(l), Some(r)) = (s.mode(left), s.mode(right)) else { continue };
            let (a, b) = (l.metrics.attribute(slice), r.metrics.attribute(slice));
            if a.frames == 0 {
                continue;
            }
            xs.push(a.mean_iou);
            ys.push(b.mean_iou);
        }
        (xs, ys)
    }

    pub fn test(&self, cmp: &Comparison) -> Result<SignTest> {
        let (x, y) = self.paired_slice_ious(cmp.slice, cmp.left, cmp.right);
        sign_test(&x, &y, cmp.claim)
    }

    /// Outcome of every directional claim whose modes were both run.
    pub fn directional_tests(&self) -> Result<Vec<(Comparison, SignTest)>> {
        let modes = self.modes();
        DIRECTIONAL_CLAIMS
            .iter()
            .filter(|c| modes.contains(&c.left) && modes.contains(&c.right))
            .map(|c| Ok((*c, self.test(c)?)))
            .collect()
    }
}

pub fn write_csv<R: Serialize, W: Write>(rows: &[R], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> StudyConfig {
        let mut cfg = StudyConfig::default();
        cfg.study.sequences = 3;
        cfg.scene.frames = 40;
        cfg
    }

    #[test]
    fn serial_and_parallel_studies_agree() {
        let cfg = small();
        let a = run_study(&cfg, false).unwrap();
        let b = run_study(&cfg, true).unwrap();
        assert_eq!(a.run_rows(), b.run_rows());
        assert_eq!(a.aggregate_rows(), b.aggregate_rows());
    }

    #[test]
    fn tables_have_one_row_per_run_and_slice() {
        let cfg = small();
        let res = run_study(&cfg, false).unwrap();
        assert_eq!(res.run_rows().len(), 3 * 3);
        assert_eq!(res.aggregate_rows().len(), 3 * 4);
        assert_eq!(res.frame_rows().len(), 3 * 3 * 40);
        assert_eq!(res.timing_rows().len(), 3 * 3 * 40);
        let mut buf = Vec::new();
        write_csv(&res.run_rows(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sequence,seed,mode,frames,mean_iou"));
        assert_eq!(text.lines().count(), 1 + 9);
    }

    #[test]
    fn invalid_study_settings_are_rejected() {
        let mut cfg = small();
        cfg.study.modes.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = small();
        cfg.study.alpha = 1.5;
        assert!(cfg.validate().is_err());
    }
}
