//! Independent oracles shared by the integration tests and the acceptance run.

#![allow(dead_code)]

use conflearn::netcore::{self, init_network, Dense, NetworkParams, NetworkSpec, ParamGrads};
use conflearn::objective::{batch_loss_and_grads, HintMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Below this magnitude the error is measured against the floor instead of
/// the gradient. A central difference of a loss near 10 carries round-off of
/// about `10 * 1e-16 / FD_STEP = 1e-9`, which would swamp smaller gradients.
pub const FD_ABS_FLOOR: f64 = 1e-4;

// ---------------------------------------------------------------------------
// Gradient oracle

/// Plain re-implementation of the forward pass and objective. Returns the
/// mean loss over the batch and the sign pattern of every ReLU input.
pub fn oracle_loss(
    params: &NetworkParams<f64>,
    xs: &[Vec<f64>],
    labels: &[usize],
    hinted: &[bool],
    lambda: f64,
) -> (f64, Vec<bool>) {
    let layers = params.layers();
    let n_trunk = params.spec().trunk_widths.len();
    let mut pattern = Vec::new();
    let mut total = 0.0;
    for ((x, &k), &hint) in xs.iter().zip(labels).zip(hinted) {
        let mut h = x.clone();
        for layer in &layers[..n_trunk] {
            h = relu(dense(layer, &h), &mut pattern);
        }
        let ch = relu(dense(&layers[n_trunk], &h), &mut pattern);
        let z = dense(&layers[n_trunk + 1], &ch);
        let dh = relu(dense(&layers[n_trunk + 2], &h), &mut pattern);
        let s = dense(&layers[n_trunk + 3], &dh)[0];

        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let sum: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|v| v / sum).collect();
        let c = 1.0 / (1.0 + (-s).exp());
        let pk = if hint { c * p[k] + (1.0 - c) } else { p[k] };
        total += -pk.max(1e-12).ln() + lambda * -c.ln();
    }
    (total / xs.len() as f64, pattern)
}

fn dense(layer: &Dense<f64>, x: &[f64]) -> Vec<f64> {
    (0..layer.rows)
        .map(|r| {
            layer.bias[r]
                + (0..layer.cols)
                    .map(|c| layer.weights[r * layer.cols + c] * x[c])
                    .sum::<f64>()
        })
        .collect()
}

fn relu(z: Vec<f64>, pattern: &mut Vec<bool>) -> Vec<f64> {
    pattern.extend(z.iter().map(|&v| v > 0.0));
    z.into_iter().map(|v| v.max(0.0)).collect()
}

pub struct GradCase {
    pub params: NetworkParams<f64>,
    pub xs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub hinted: Vec<bool>,
    pub lambda: f64,
}

pub fn random_grad_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(1..=5);
    let trunk: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=5)).collect();
    let head = rng.random_range(1..=5);
    let m = rng.random_range(2..=4);
    let spec = NetworkSpec::new(input_dim, trunk, head, m);
    let mut params = init_network::<f64>(&spec, rng.random()).unwrap();
    for (_, bias) in params.layer_values_mut() {
        for b in bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let n = rng.random_range(1..=3);
    GradCase {
        params,
        xs: (0..n)
            .map(|_| (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect(),
        labels: (0..n).map(|_| rng.random_range(0..m)).collect(),
        hinted: (0..n).map(|_| rng.random_bool(0.5)).collect(),
        lambda: rng.random_range(0.05..2.0),
    }
}

/// Analytic batch gradient, assembled the way training does it.
pub fn analytic_grads(case: &GradCase) -> (ParamGrads<f64>, Vec<Vec<f64>>) {
    let n = case.xs.len() as f64;
    let mut outputs = Vec::new();
    let mut traces = Vec::new();
    for x in &case.xs {
        let (o, t) = netcore::forward(&case.params, x).unwrap();
        outputs.push(o);
        traces.push(t);
    }
    let mask = HintMask(case.hinted.clone());
    let bg = batch_loss_and_grads(&outputs, &case.labels, &mask, case.lambda).unwrap();
    let mut grads = ParamGrads::zeros_like(&case.params);
    let mut input_grads = Vec::new();
    for (i, trace) in traces.iter().enumerate() {
        let gc: Vec<f64> = bg.class_logits[i].iter().map(|g| g / n).collect();
        let gx = netcore::backward_into(&case.params, trace, &gc, bg.confidence_logit[i] / n, &mut grads).unwrap();
        input_grads.push(gx);
    }
    (grads, input_grads)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < FD_ABS_FLOOR {
        (analytic - numeric).abs() / FD_ABS_FLOOR
    } else {
        (analytic - numeric).abs() / scale
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst: f64,
}

impl GradCheck {
    fn record(&mut self, err: f64) {
        self.checked += 1;
        self.worst = self.worst.max(err);
    }
}

/// Central differences over every parameter and every input coordinate.
/// Coordinates whose perturbation moves any ReLU across its kink are skipped.
pub fn check_gradients(case: &GradCase) -> GradCheck {
    let (grads, input_grads) = analytic_grads(case);
    let (_, base_pattern) = oracle_loss(&case.params, &case.xs, &case.labels, &case.hinted, case.lambda);
    let mut report = GradCheck::default();
    let probe =
        |params: &NetworkParams<f64>, xs: &[Vec<f64>]| oracle_loss(params, xs, &case.labels, &case.hinted, case.lambda);

    let analytic: Vec<f64> = grads.values().collect();
    let mut params = case.params.clone();
    let mut index = 0;
    let n_layers = params.layers().len();
    for l in 0..n_layers {
        for bias_part in [false, true] {
            let len = {
                let layer = &params.layers()[l];
                if bias_part {
                    layer.bias.len()
                } else {
                    layer.weights.len()
                }
            };
            for j in 0..len {
                let original = get_param(&params, l, bias_part, j);
                set_param(&mut params, l, bias_part, j, original + FD_STEP);
                let (up, pu) = probe(&params, &case.xs);
                set_param(&mut params, l, bias_part, j, original - FD_STEP);
                let (down, pd) = probe(&params, &case.xs);
                set_param(&mut params, l, bias_part, j, original);
                if pu != base_pattern || pd != base_pattern {
                    report.skipped_kinks += 1;
                } else {
                    let numeric = (up - down) / (2.0 * FD_STEP);
                    report.record(relative_error(analytic[index], numeric));
                }
                index += 1;
            }
        }
    }

    let mut xs = case.xs.clone();
    for i in 0..xs.len() {
        for j in 0..xs[i].len() {
            let original = xs[i][j];
            xs[i][j] = original + FD_STEP;
            let (up, pu) = probe(&case.params, &xs);
            xs[i][j] = original - FD_STEP;
            let (down, pd) = probe(&case.params, &xs);
            xs[i][j] = original;
            if pu != base_pattern || pd != base_pattern {
                report.skipped_kinks += 1;
            } else {
                let numeric = (up - down) / (2.0 * FD_STEP);
                report.record(relative_error(input_grads[i][j], numeric));
            }
        }
    }
    report
}

fn get_param(params: &NetworkParams<f64>, layer: usize, bias: bool, j: usize) -> f64 {
    let l = &params.layers()[layer];
    if bias {
        l.bias[j]
    } else {
        l.weights[j]
    }
}

fn set_param(params: &mut NetworkParams<f64>, layer: usize, bias: bool, j: usize, value: f64) {
    let (w, b) = params.layer_values_mut().nth(layer).unwrap();
    if bias {
        b[j] = value;
    } else {
        w[j] = value;
    }
}

// ---------------------------------------------------------------------------
// Metric oracle

/// Score sets drawn from a small value pool so that ties are common.
pub fn random_score_sets(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = rng.random_range(2..=8);
    let offset: f64 = rng.random_range(-1.0..1.0);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| offset + rng.random_range(0..pool) as f64 / pool as f64)
            .collect()
    };
    let n_in = 1 + (seed as usize * 7) % 15;
    let n_out = 1 + (seed as usize * 11 + 3) % 15;
    let mut ins = draw(n_in);
    let mut outs = draw(n_out);
    // Force at least one duplicate across the two sets.
    outs[0] = ins[0];
    if ins.len() > 1 {
        ins[1] = ins[0];
    }
    (ins, outs)
}

/// Every pooled score as a threshold, plus minus infinity.
fn brute_thresholds(ins: &[f64], outs: &[f64]) -> Vec<f64> {
    std::iter::once(f64::NEG_INFINITY)
        .chain(ins.iter().chain(outs).copied())
        .collect()
}

fn below(scores: &[f64], delta: f64) -> usize {
    scores.iter().filter(|&&s| s <= delta).count()
}

pub fn brute_fpr_at_95(ins: &[f64], outs: &[f64]) -> f64 {
    brute_thresholds(ins, outs)
        .into_iter()
        .filter(|&d| (ins.len() - below(ins, d)) as f64 / ins.len() as f64 >= 0.95)
        .map(|d| (outs.len() - below(outs, d)) as f64 / outs.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_detection_error(ins: &[f64], outs: &[f64]) -> f64 {
    brute_thresholds(ins, outs)
        .into_iter()
        .map(|d| {
            0.5 * below(ins, d) as f64 / ins.len() as f64
                + 0.5 * (outs.len() - below(outs, d)) as f64 / outs.len() as f64
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_auroc(ins: &[f64], outs: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in ins {
        for &b in outs {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (ins.len() * outs.len()) as f64
}

/// Average precision: for each distinct score holding positives, precision
/// of "score >= t" times the recall contributed at t.
pub fn brute_aupr(pos: &[f64], neg: &[f64]) -> f64 {
    let mut values: Vec<f64> = pos.to_vec();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap());
    values.dedup();
    values
        .into_iter()
        .map(|t| {
            let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
            let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
            let gain = pos.iter().filter(|&&s| s == t).count() as f64 / pos.len() as f64;
            gain * tp / (tp + fp)
        })
        .sum()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct MetricCheck {
    pub sets: usize,
    pub worst: f64,
}

/// Compares the library metrics against the brute-force oracle on
/// `count` random score sets.
pub fn check_metrics(count: u64) -> MetricCheck {
    use conflearn::metrics::*;
    let mut report = MetricCheck::default();
    for seed in 0..count {
        let (ins, outs) = random_score_sets(seed);
        let neg = |v: &[f64]| v.iter().map(|s| -s).collect::<Vec<_>>();
        let pairs = [
            (fpr_at_95_tpr(&ins, &outs).unwrap(), brute_fpr_at_95(&ins, &outs)),
            (
                detection_error(&ins, &outs).unwrap(),
                brute_detection_error(&ins, &outs),
            ),
            (auroc(&ins, &outs).unwrap(), brute_auroc(&ins, &outs)),
            (aupr_in(&ins, &outs).unwrap(), brute_aupr(&ins, &outs)),
            (aupr_out(&ins, &outs).unwrap(), brute_aupr(&neg(&outs), &neg(&ins))),
        ];
        for (lib, oracle) in pairs {
            report.worst = report.worst.max((lib - oracle).abs());
        }
        report.sets += 1;
    }
    report
}
