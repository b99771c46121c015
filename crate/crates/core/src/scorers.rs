//! Detection scores: learned confidence, max softmax, and ODIN.
//!
//! Every scorer is oriented so that a higher score means "more
//! in-distribution". Confidence scores lie in `(0, 1)`, softmax and ODIN
//! scores in `[1/M, 1]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::detection_error;
use crate::netcore::{backward, forward, NetworkParams};
use crate::objective::one_hot;
use crate::scalar::{argmax, sign, softmax, Scalar};

/// Temperature used for ODIN scoring.
pub const ODIN_TEMPERATURE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Confidence,
    Softmax,
    Odin { temperature: f64 },
}

impl Scorer {
    pub fn odin() -> Self {
        Scorer::Odin {
            temperature: ODIN_TEMPERATURE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scorer::Confidence => "confidence",
            Scorer::Softmax => "softmax",
            Scorer::Odin { .. } => "odin",
        }
    }

    pub fn all() -> [Scorer; 3] {
        [Scorer::Confidence, Scorer::Softmax, Scorer::odin()]
    }

    /// Scores one input. `Softmax` ignores `epsilon`.
    pub fn score<T: Scalar>(&self, params: &NetworkParams<T>, x: &[T], epsilon: T) -> Result<T> {
        match *self {
            Scorer::Confidence => score_confidence(params, x, epsilon),
            Scorer::Softmax => score_softmax_baseline(params, x),
            Scorer::Odin { temperature } => score_odin(params, x, T::lit(temperature), epsilon),
        }
    }

    pub fn score_all<T: Scalar>(&self, params: &NetworkParams<T>, xs: &[Vec<T>], epsilon: T) -> Result<Vec<T>> {
        xs.iter().map(|x| self.score(params, x, epsilon)).collect()
    }
}

impl fmt::Display for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Scorer::Confidence),
            "softmax" | "baseline" => Ok(Scorer::Softmax),
            "odin" => Ok(Scorer::odin()),
            other => Err(Error::InvalidArgument(format!(
                "unknown scorer {other:?} (expected confidence, softmax or odin)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig<T> {
    pub epsilon: T,
    pub temperature: T,
    /// Optional per-coordinate clamp applied after perturbation, for inputs
    /// bounded to a known range.
    pub clip: Option<(T, T)>,
}

impl<T: Scalar> PerturbConfig<T> {
    pub fn new(epsilon: T, temperature: T) -> Result<Self> {
        if !(epsilon >= T::zero()) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon {epsilon} must be finite and >= 0"
            )));
        }
        if !(temperature >= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "temperature {temperature} must be >= 1"
            )));
        }
        Ok(Self {
            epsilon,
            temperature,
            clip: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet<T> {
    pub scorer: Scorer,
    pub config: PerturbConfig<T>,
    pub in_scores: Vec<T>,
    pub out_scores: Vec<T>,
}

fn check_epsilon<T: Scalar>(epsilon: T) -> Result<()> {
    if epsilon >= T::zero() && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} must be finite and >= 0"
        )))
    }
}

fn step_against<T: Scalar>(x: &[T], grad: &[T], epsilon: T, clip: Option<(T, T)>) -> Vec<T> {
    x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| {
            let v = xi - epsilon * sign(gi);
            clip.map_or(v, |(lo, hi)| v.max(lo).min(hi))
        })
        .collect()
}

/// `x - epsilon * sign(grad_x(-log c))`: one sign-gradient step that raises
/// the confidence. Returns `x` unchanged when `epsilon` is zero.
pub fn preprocess_input<T: Scalar>(params: &NetworkParams<T>, x: &[T], epsilon: T) -> Result<Vec<T>> {
    preprocess_input_clipped(params, x, epsilon, None)
}

pub fn preprocess_input_clipped<T: Scalar>(
    params: &NetworkParams<T>,
    x: &[T],
    epsilon: T,
    clip: Option<(T, T)>,
) -> Result<Vec<T>> {
    check_epsilon(epsilon)?;
    if epsilon == T::zero() {
        return Ok(x.to_vec());
    }
    let (out, trace) = forward(params, x)?;
    let zeros = vec![T::zero(); out.probs.len()];
    let (_, grad_x) = backward(params, &trace, &zeros, -(T::one() - out.confidence))?;
    Ok(step_against(x, &grad_x, epsilon, clip))
}

pub fn score_confidence<T: Scalar>(params: &NetworkParams<T>, x: &[T], epsilon: T) -> Result<T> {
    let x_tilde = preprocess_input(params, x, epsilon)?;
    Ok(forward(params, &x_tilde)?.0.confidence)
}

pub fn score_softmax_baseline<T: Scalar>(params: &NetworkParams<T>, x: &[T]) -> Result<T> {
    Ok(forward(params, x)?.0.max_prob())
}

/// Largest entry of `softmax(logits / temperature)`.
pub fn max_tempered_softmax<T: Scalar>(logits: &[T], temperature: T) -> T {
    let scaled: Vec<T> = logits.iter().map(|&z| z / temperature).collect();
    softmax(&scaled).into_iter().fold(T::zero(), T::max)
}

/// ODIN: step the input toward its predicted class by descending the
/// temperature-scaled cross-entropy of the argmax label, then return the
/// largest temperature-scaled softmax probability.
pub fn score_odin<T: Scalar>(params: &NetworkParams<T>, x: &[T], temperature: T, epsilon: T) -> Result<T> {
    score_odin_clipped(params, x, temperature, epsilon, None)
}

pub fn score_odin_clipped<T: Scalar>(
    params: &NetworkParams<T>,
    x: &[T],
    temperature: T,
    epsilon: T,
    clip: Option<(T, T)>,
) -> Result<T> {
    PerturbConfig::new(epsilon, temperature)?;
    let (out, trace) = forward(params, x)?;
    if epsilon == T::zero() {
        return Ok(max_tempered_softmax(&out.class_logits, temperature));
    }
    let m = out.class_logits.len();
    let target = one_hot::<T>(argmax(&out.probs), m);
    let scaled: Vec<T> = out.class_logits.iter().map(|&z| z / temperature).collect();
    let grad_logits: Vec<T> = softmax(&scaled)
        .iter()
        .zip(&target)
        .map(|(&q, &y)| (q - y) / temperature)
        .collect();
    let (_, grad_x) = backward(params, &trace, &grad_logits, T::zero())?;
    let x_tilde = step_against(x, &grad_x, epsilon, clip);
    let (perturbed, _) = forward(params, &x_tilde)?;
    Ok(max_tempered_softmax(&perturbed.class_logits, temperature))
}

/// 21 evenly spaced magnitudes in `[0, 0.02 * scale]`, where `scale` is the
/// mean per-feature standard deviation of the training inputs.
pub fn default_epsilon_grid(feature_std: &[f64]) -> Vec<f64> {
    let scale = feature_std.iter().sum::<f64>() / feature_std.len().max(1) as f64;
    (0..=20).map(|i| 0.02 * scale * i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch<T> {
    pub best_epsilon: T,
    pub best_detection_error: T,
    /// `(epsilon, detection error)` for every grid entry, in grid order.
    pub table: Vec<(T, T)>,
}

/// Picks the perturbation magnitude with the smallest holdout detection
/// error; ties go to the smaller magnitude.
pub fn epsilon_grid_search<T: Scalar>(
    params: &NetworkParams<T>,
    holdout_in: &[Vec<T>],
    holdout_out: &[Vec<T>],
    grid: &[T],
    scorer: Scorer,
) -> Result<GridSearch<T>> {
    if grid.is_empty() {
        return Err(Error::Empty("epsilon grid".into()));
    }
    if holdout_in.is_empty() || holdout_out.is_empty() {
        return Err(Error::Empty("holdout sets for epsilon search".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &eps in grid {
        check_epsilon(eps)?;
        let ins = scorer.score_all(params, holdout_in, eps)?;
        let outs = scorer.score_all(params, holdout_out, eps)?;
        table.push((eps, detection_error(&ins, &outs)?));
    }
    let (best_epsilon, best_detection_error) = table
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 < best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .expect("grid is nonempty");
    Ok(GridSearch {
        best_epsilon,
        best_detection_error,
        table,
    })
}
