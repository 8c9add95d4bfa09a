//! Per-run scores and paired sign tests.

use std::collections::BTreeMap;

use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{invalid, Result};
use crate::scene::Attribute;
use crate::tracker::TrackRun;

/// Overlap thresholds of the success curve: 0.05, 0.10, ..., 0.95.
pub fn success_thresholds() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// Area under the success curve: the fraction of frames with
/// `iou >= threshold`, averaged over [`success_thresholds`]. Empty input
/// scores 0.
pub fn success_auc(ious: &[f64]) -> f64 {
    if ious.is_empty() {
        return 0.0;
    }
    let thresholds = success_thresholds();
    let n = ious.len() as f64;
    let total: f64 = thresholds
        .iter()
        .map(|&thr| ious.iter().filter(|&&v| v >= thr).count() as f64 / n)
        .sum();
    total / thresholds.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SliceStats {
    pub frames: usize,
    pub mean_iou: f64,
    pub suc_auc: f64,
}

impl SliceStats {
    pub fn from_ious(ious: &[f64]) -> Self {
        Self {
            frames: ious.len(),
            mean_iou: mean(ious),
            suc_auc: success_auc(ious),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub overall: SliceStats,
    pub by_attribute: BTreeMap<Attribute, SliceStats>,
    /// Fraction of frames whose argmax matches the semantic-only argmax.
    pub argmax_preservation: f64,
    /// The same rate with scores taken on the in-span semantic features.
    pub span_argmax_preservation: f64,
}

impl RunMetrics {
    /// Stats for one attribute; absent attributes read as an empty slice.
    pub fn attribute(&self, a: Attribute) -> SliceStats {
        self.by_attribute.get(&a).copied().unwrap_or_default()
    }
}

/// Scores a run against the per-frame attribute labels.
pub fn evaluate(run: &TrackRun, attributes: &[Attribute]) -> Result<RunMetrics> {
    if attributes.len() != run.records.len() {
        return Err(invalid(
            "attributes",
            format!("{} labels for {} frames", attributes.len(), run.records.len()),
        ));
    }
    let ious: Vec<f64> = run.records.iter().map(|r| r.iou).collect();
    let mut grouped: BTreeMap<Attribute, Vec<f64>> = BTreeMap::new();
    for (&a, &v) in attributes.iter().zip(&ious) {
        grouped.entry(a).or_default().push(v);
    }
    let rate = |hits: usize| if ious.is_empty() { 0.0 } else { hits as f64 / ious.len() as f64 };
    let agree = run.records.iter().filter(|r| r.argmax_agree).count();
    let span_agree = run.records.iter().filter(|r| r.span_argmax_agree).count();
    Ok(RunMetrics {
        overall: SliceStats::from_ious(&ious),
        by_attribute: grouped.iter().map(|(&a, v)| (a, SliceStats::from_ious(v))).collect(),
        argmax_preservation: rate(agree),
        span_argmax_preservation: rate(span_agree),
    })
}

/// Direction asserted by a paired comparison `x` vs `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// `x > y`; ties are dropped.
    Greater,
    /// `x < y`; ties are dropped.
    Less,
    /// `x >= y`; ties count in favour.
    AtLeast,
}

impl Claim {
    pub fn symbol(self) -> &'static str {
        match self {
            Claim::Greater => ">",
            Claim::Less => "<",
            Claim::AtLeast => ">=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SignTest {
    pub claim: Claim,
    pub favour: u64,
    pub against: u64,
    pub ties: u64,
    /// One-sided `P(Binomial(n, 1/2) >= favour)` over the counted pairs.
    pub p_value: f64,
}

impl SignTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// One-sided paired sign test of `claim` over `(x_i, y_i)` pairs.
pub fn sign_test(x: &[f64], y: &[f64], claim: Claim) -> Result<SignTest> {
    if x.len() != y.len() {
        return Err(invalid("sign_test", format!("{} vs {} samples", x.len(), y.len())));
    }
    let (mut favour, mut against, mut ties) = (0u64, 0u64, 0u64);
    for (&a, &b) in x.iter().zip(y) {
        let d = match claim {
            Claim::Less => b - a,
            Claim::Greater | Claim::AtLeast => a - b,
        };
        if d > 0.0 {
            favour += 1;
        } else if d < 0.0 {
            against += 1;
        } else {
            ties += 1;
        }
    }
    if claim == Claim::AtLeast {
        favour += ties;
    }
    let n = favour + against;
    let p_value = if n == 0 {
        1.0
    } else if favour == 0 {
        1.0
    } else {
        let binom = Binomial::new(0.5, n).map_err(|e| invalid("sign_test", e.to_string()))?;
        (1.0 - binom.cdf(favour - 1)).clamp(0.0, 1.0)
    };
    Ok(SignTest {
        claim,
        favour,
        against,
        ties,
        p_value,
    })
}
