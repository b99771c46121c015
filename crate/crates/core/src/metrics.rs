//! Out-of-distribution detection metrics and threshold calibration.
//!
//! Scores are oriented so that higher means "more in-distribution". A sample
//! is flagged out-of-distribution when `score <= delta`. Thresholds are
//! searched over a finite candidate set: `-inf`, the midpoints between
//! adjacent distinct pooled scores, and `+inf`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trainer::EvalRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    In,
    Out,
}

pub fn detect<T: Scalar>(score: T, delta: T) -> Detection {
    if score <= delta {
        Detection::Out
    } else {
        Detection::In
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMethod {
    TrueOod,
    MisclassifiedProxy,
    Manual,
}

impl CalibrationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CalibrationMethod::TrueOod => "true-ood",
            CalibrationMethod::MisclassifiedProxy => "misclassified-proxy",
            CalibrationMethod::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig<T> {
    pub delta: T,
    pub method: CalibrationMethod,
}

impl<T: Scalar> DetectorConfig<T> {
    pub fn detect(&self, score: T) -> Detection {
        detect(score, self.delta)
    }
}

fn check_nonempty<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<()> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::Empty("both score lists must be nonempty".into()));
    }
    if in_scores.iter().chain(out_scores).any(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: "detection scores".into(),
        });
    }
    Ok(())
}

/// One candidate threshold with the number of in/out scores at or below it.
#[derive(Debug, Clone, Copy)]
struct Cut<T> {
    delta: T,
    in_below: usize,
    out_below: usize,
}

/// Candidate thresholds in ascending order.
fn sweep<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Vec<Cut<T>> {
    let mut pooled: Vec<(T, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(out_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores are not NaN"));

    let mut cuts = vec![Cut {
        delta: T::neg_infinity(),
        in_below: 0,
        out_below: 0,
    }];
    let (mut in_below, mut out_below) = (0, 0);
    let mut i = 0;
    while i < pooled.len() {
        let value = pooled[i].0;
        while i < pooled.len() && pooled[i].0 == value {
            if pooled[i].1 {
                in_below += 1;
            } else {
                out_below += 1;
            }
            i += 1;
        }
        let delta = match pooled.get(i) {
            Some(&(next, _)) => midpoint(value, next),
            None => T::infinity(),
        };
        cuts.push(Cut {
            delta,
            in_below,
            out_below,
        });
    }
    cuts
}

fn midpoint<T: Scalar>(a: T, b: T) -> T {
    let two = T::lit(2.0);
    let m = a / two + b / two;
    // Adjacent floats have no representable midpoint; `a` keeps the cut counts exact.
    if m > a && m < b {
        m
    } else {
        a
    }
}

fn ratio<T: Scalar>(num: usize, den: usize) -> T {
    T::from_usize_lossy(num) / T::from_usize_lossy(den)
}

/// Smallest false-positive rate over thresholds whose true-positive rate is
/// at least `level`. In-distribution is the positive class.
pub fn fpr_at_tpr<T: Scalar>(in_scores: &[T], out_scores: &[T], level: T) -> Result<T> {
    check_nonempty(in_scores, out_scores)?;
    let (n_in, n_out) = (in_scores.len(), out_scores.len());
    let fp = sweep(in_scores, out_scores)
        .into_iter()
        .filter(|c| ratio::<T>(n_in - c.in_below, n_in) >= level)
        .map(|c| n_out - c.out_below)
        .min()
        .expect("delta = -inf always reaches TPR 1");
    Ok(ratio(fp, n_out))
}

pub fn fpr_at_95_tpr<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    fpr_at_tpr(in_scores, out_scores, T::lit(0.95))
}

/// `2 * n_in * n_out` times the detection error at a cut, as an integer so
/// that ties are exact.
fn scaled_error<T>(c: &Cut<T>, n_in: usize, n_out: usize) -> u128 {
    c.in_below as u128 * n_out as u128 + (n_out - c.out_below) as u128 * n_in as u128
}

fn best_cut<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<Cut<T>> {
    check_nonempty(in_scores, out_scores)?;
    let (n_in, n_out) = (in_scores.len(), out_scores.len());
    let mut best: Option<(u128, Cut<T>)> = None;
    for cut in sweep(in_scores, out_scores) {
        let e = scaled_error(&cut, n_in, n_out);
        // Ascending sweep with `<=`: ties resolve to the larger threshold.
        if best.is_none_or(|(b, _)| e <= b) {
            best = Some((e, cut));
        }
    }
    Ok(best.expect("sweep is never empty").1)
}

/// `min_delta 0.5*P_in(score <= delta) + 0.5*P_out(score > delta)`.
pub fn detection_error<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    let cut = best_cut(in_scores, out_scores)?;
    let half = T::lit(0.5);
    Ok(half * ratio(cut.in_below, in_scores.len()) + half * ratio(out_scores.len() - cut.out_below, out_scores.len()))
}

/// Detection error of the fixed detector with threshold `delta`.
pub fn detection_error_at<T: Scalar>(in_scores: &[T], out_scores: &[T], delta: T) -> Result<T> {
    check_nonempty(in_scores, out_scores)?;
    let in_below = in_scores.iter().filter(|&&s| s <= delta).count();
    let out_above = out_scores.iter().filter(|&&s| s > delta).count();
    let half = T::lit(0.5);
    Ok(half * ratio(in_below, in_scores.len()) + half * ratio(out_above, out_scores.len()))
}

/// Threshold minimizing the detection error; ties go to the larger threshold.
pub fn calibrate_threshold<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    Ok(best_cut(in_scores, out_scores)?.delta)
}

/// Calibrates on a holdout's correctly classified samples (treated as
/// in-distribution) against its misclassified ones, scored by confidence.
pub fn calibrate_threshold_misclassified<T: Scalar>(records: &[EvalRecord<T>]) -> Result<T> {
    calibrate_threshold_misclassified_by(records, |r| r.confidence)
}

pub fn calibrate_threshold_misclassified_by<T: Scalar>(
    records: &[EvalRecord<T>],
    score: impl Fn(&EvalRecord<T>) -> T,
) -> Result<T> {
    let (correct, wrong): (Vec<_>, Vec<_>) = records.iter().partition(|r| r.correct);
    if correct.is_empty() || wrong.is_empty() {
        return Err(Error::CannotCalibrate(format!(
            "holdout has {} correct and {} misclassified samples; need at least one of each",
            correct.len(),
            wrong.len()
        )));
    }
    let correct: Vec<T> = correct.into_iter().map(&score).collect();
    let wrong: Vec<T> = wrong.into_iter().map(&score).collect();
    calibrate_threshold(&correct, &wrong)
}

/// Probability that an in-distribution score exceeds an out-of-distribution
/// one, with ties counted as one half.
pub fn auroc<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    check_nonempty(in_scores, out_scores)?;
    let mut sorted_out = out_scores.to_vec();
    sorted_out.sort_by(|a, b| a.partial_cmp(b).expect("scores are not NaN"));
    // Twice the Mann-Whitney statistic, so ties stay integral.
    let doubled: u128 = in_scores
        .iter()
        .map(|&s| {
            let below = sorted_out.partition_point(|&o| o < s);
            let at_or_below = sorted_out.partition_point(|&o| o <= s);
            (2 * below + (at_or_below - below)) as u128
        })
        .sum();
    let pairs = 2 * in_scores.len() as u128 * out_scores.len() as u128;
    Ok(T::from_u128(doubled).expect("count fits") / T::from_u128(pairs).expect("count fits"))
}

/// Step-wise average precision with `pos_scores` as the positive class.
///
/// Scores are visited in descending order, grouped by value; every group
/// containing positives contributes `(recall gain) * precision`.
pub fn aupr<T: Scalar>(pos_scores: &[T], neg_scores: &[T]) -> Result<T> {
    check_nonempty(pos_scores, neg_scores)?;
    let mut pooled: Vec<(T, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("scores are not NaN"));

    let n_pos = pos_scores.len();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = T::zero();
    let mut i = 0;
    while i < pooled.len() {
        let value = pooled[i].0;
        let tp_before = tp;
        while i < pooled.len() && pooled[i].0 == value {
            if pooled[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > tp_before {
            ap = ap + ratio::<T>(tp - tp_before, n_pos) * ratio::<T>(tp, tp + fp);
        }
    }
    Ok(ap)
}

pub fn aupr_in<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    aupr(in_scores, out_scores)
}

/// Out-of-distribution samples as the positive class, ranked by `-score`.
pub fn aupr_out<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<T> {
    let neg_out: Vec<T> = out_scores.iter().map(|&s| -s).collect();
    let neg_in: Vec<T> = in_scores.iter().map(|&s| -s).collect();
    aupr(&neg_out, &neg_in)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport<T> {
    pub fpr_at_95_tpr: T,
    pub detection_error: T,
    pub auroc: T,
    pub aupr_in: T,
    pub aupr_out: T,
    pub calibrated_delta: T,
    /// Set when the calibrated threshold is a `+-inf` sentinel.
    pub degenerate: bool,
}

pub fn metric_report<T: Scalar>(in_scores: &[T], out_scores: &[T]) -> Result<MetricReport<T>> {
    let calibrated_delta = calibrate_threshold(in_scores, out_scores)?;
    Ok(MetricReport {
        fpr_at_95_tpr: fpr_at_95_tpr(in_scores, out_scores)?,
        detection_error: detection_error(in_scores, out_scores)?,
        auroc: auroc(in_scores, out_scores)?,
        aupr_in: aupr_in(in_scores, out_scores)?,
        aupr_out: aupr_out(in_scores, out_scores)?,
        calibrated_delta,
        degenerate: !calibrated_delta.is_finite(),
    })
}
