//! Confidence-learning objective.
//!
//! For a hinted sample the class probabilities are pulled toward the target,
//! `p' = c*p + (1 - c)*y`, and the task loss is the NLL of `p'`. Every sample
//! additionally pays `lambda * -log(c)`. A budget controller scales `lambda`
//! so that the batch confidence loss tracks `beta`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::netcore::PredictionOutput;
use crate::scalar::Scalar;

/// Floor applied to probabilities and confidences before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;
pub const LAMBDA_MIN: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 1e6;

/// Per-sample hint flags for one batch; `true` means the prediction is
/// interpolated toward the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HintMask(pub Vec<bool>);

impl HintMask {
    pub fn none(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn all(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn hinted_fraction(&self) -> f64 {
        self.0.iter().filter(|&&h| h).count() as f64 / self.0.len().max(1) as f64
    }
}

/// Independent Bernoulli(0.5) hint per sample.
pub fn draw_hint_mask<R: Rng + ?Sized>(batch_size: usize, rng: &mut R) -> HintMask {
    draw_hint_mask_with(batch_size, 0.5, rng)
}

pub fn draw_hint_mask_with<R: Rng + ?Sized>(batch_size: usize, probability: f64, rng: &mut R) -> HintMask {
    HintMask((0..batch_size).map(|_| rng.random_bool(probability)).collect())
}

fn one_hot_index<T: Scalar>(y: &[T]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in y.iter().enumerate() {
        if v == T::one() {
            if hot.is_some() {
                return Err(Error::InvalidArgument("target has more than one hot entry".into()));
            }
            hot = Some(i);
        } else if v != T::zero() {
            return Err(Error::InvalidArgument(format!("target entry {i} is {v}, not 0 or 1")));
        }
    }
    hot.ok_or_else(|| Error::InvalidArgument("target has no hot entry".into()))
}

pub fn one_hot<T: Scalar>(label: usize, num_classes: usize) -> Vec<T> {
    let mut y = vec![T::zero(); num_classes];
    y[label] = T::one();
    y
}

/// `p'_i = c*p_i + (1 - c)*y_i` when hinted, otherwise `p` unchanged.
pub fn interpolate_predictions<T: Scalar>(p: &[T], y: &[T], c: T, hinted: bool) -> Result<Vec<T>> {
    if p.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} classes, target {}",
            p.len(),
            y.len()
        )));
    }
    one_hot_index(y)?;
    if !(c >= T::zero() && c <= T::one()) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
    }
    if !hinted {
        return Ok(p.to_vec());
    }
    Ok(p.iter().zip(y).map(|(&pi, &yi)| c * pi + (T::one() - c) * yi).collect())
}

/// `-sum_i y_i log(max(p'_i, 1e-12))`.
pub fn task_loss<T: Scalar>(p_prime: &[T], y: &[T]) -> Result<T> {
    if p_prime.len() != y.len() {
        return Err(Error::ShapeMismatch("prediction and target lengths differ".into()));
    }
    let k = one_hot_index(y)?;
    Ok(-clamp_log_arg(p_prime[k]).ln())
}

/// `-log(max(c, 1e-12))`.
pub fn confidence_loss<T: Scalar>(c: T) -> T {
    -clamp_log_arg(c).ln()
}

fn clamp_log_arg<T: Scalar>(v: T) -> T {
    v.max(T::lit(LOG_FLOOR)).min(T::one())
}

/// `L_t + lambda * L_c`; `lambda` must be strictly positive.
pub fn total_loss<T: Scalar>(task: T, confidence: T, lambda: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(task + lambda * confidence)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    /// Batch-mean task loss.
    pub task: T,
    /// Batch-mean confidence loss.
    pub confidence: T,
    pub lambda: T,
    pub total: T,
    /// Per-sample probabilities after (optional) interpolation.
    pub p_prime: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradients<T> {
    pub loss: LossBreakdown<T>,
    /// `d(L_t,i + lambda*L_c,i) / d class_logits` for each sample.
    pub class_logits: Vec<Vec<T>>,
    /// `d(L_t,i + lambda*L_c,i) / d confidence_logit` for each sample.
    pub confidence_logit: Vec<T>,
}

/// Batch losses and the per-sample gradients of each sample's own loss
/// with respect to its two heads' logits.
///
/// The batch loss is the mean of the per-sample losses, so its gradient is
/// the mean of the returned per-sample gradients.
pub fn batch_loss_and_grads<T: Scalar>(
    outputs: &[PredictionOutput<T>],
    labels: &[usize],
    mask: &HintMask,
    lambda: T,
) -> Result<BatchGradients<T>> {
    if outputs.is_empty() {
        return Err(Error::Empty("batch has no samples".into()));
    }
    if labels.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs but {} labels",
            outputs.len(),
            labels.len()
        )));
    }
    if mask.len() != outputs.len() {
        return Err(Error::ShapeMismatch(format!(
            "hint mask has length {}, batch has {} samples",
            mask.len(),
            outputs.len()
        )));
    }
    if !(lambda > T::zero()) {
        return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
    }

    let n = T::from_usize_lossy(outputs.len());
    let mut task_sum = T::zero();
    let mut conf_sum = T::zero();
    let mut p_prime_all = Vec::with_capacity(outputs.len());
    let mut g_class_all = Vec::with_capacity(outputs.len());
    let mut g_conf_all = Vec::with_capacity(outputs.len());

    for ((out, &label), &hinted) in outputs.iter().zip(labels).zip(&mask.0) {
        let m = out.probs.len();
        if label >= m {
            return Err(Error::InvalidArgument(format!("label {label} outside [0, {m})")));
        }
        let p = &out.probs;
        let c = out.confidence;
        let y = one_hot::<T>(label, m);
        let p_prime = interpolate_predictions(p, &y, c, hinted)?;
        let pk_prime = clamp_log_arg(p_prime[label]);
        task_sum = task_sum + -pk_prime.ln();
        conf_sum = conf_sum + confidence_loss(c);

        // Only p'_k enters L_t, so dL_t/dp_i = -(scale / p'_k) [i == k]
        // with scale = c when hinted, 1 otherwise.
        let scale = if hinted { c } else { T::one() };
        let coeff = scale * p[label] / pk_prime;
        let g_class: Vec<T> = (0..m)
            .map(|j| {
                let delta = if j == label { T::one() } else { T::zero() };
                coeff * (p[j] - delta)
            })
            .collect();

        let dsig = c * (T::one() - c);
        let mut g_conf = lambda * -(T::one() - c);
        if hinted {
            // dL_t/dc = -(p_k - 1) / p'_k
            let dtask_dc = (T::one() - p[label]) / pk_prime;
            g_conf = g_conf + dtask_dc * dsig;
        }

        p_prime_all.push(p_prime);
        g_class_all.push(g_class);
        g_conf_all.push(g_conf);
    }

    let task = task_sum / n;
    let confidence = conf_sum / n;
    Ok(BatchGradients {
        loss: LossBreakdown {
            task,
            confidence,
            lambda,
            total: task + lambda * confidence,
            p_prime: p_prime_all,
        },
        class_logits: g_class_all,
        confidence_logit: g_conf_all,
    })
}

/// Budget controller for the confidence-loss weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetState {
    pub beta: f64,
    pub lambda: f64,
    pub adjust_factor: f64,
}

impl BudgetState {
    pub fn new(beta: f64, lambda: f64, adjust_factor: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("budget beta must be > 0, got {beta}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")));
        }
        if !(adjust_factor > 1.0) || !adjust_factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "adjust factor must be > 1, got {adjust_factor}"
            )));
        }
        Ok(Self {
            beta,
            lambda: lambda.clamp(LAMBDA_MIN, LAMBDA_MAX),
            adjust_factor,
        })
    }
}

/// Raises lambda when the observed confidence loss exceeds the budget and
/// lowers it when below, by one multiplicative step.
pub fn update_lambda(state: BudgetState, observed_confidence_loss: f64) -> BudgetState {
    let lambda = if observed_confidence_loss > state.beta {
        state.lambda * state.adjust_factor
    } else if observed_confidence_loss < state.beta {
        state.lambda / state.adjust_factor
    } else {
        state.lambda
    };
    BudgetState {
        lambda: lambda.clamp(LAMBDA_MIN, LAMBDA_MAX),
        ..state
    }
}
