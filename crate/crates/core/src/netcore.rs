//! Feedforward network with a shared rectifier trunk and two heads.
//!
//! The classification head emits `num_classes` logits, the confidence head a
//! single logit. Each head has one hidden rectifier layer of `head_width`
//! units. Gradients are computed by hand with respect to every parameter and
//! to the input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softmax, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub trunk_widths: Vec<usize>,
    pub head_width: usize,
    pub num_classes: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, trunk_widths: Vec<usize>, head_width: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            trunk_widths,
            head_width,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be at least 1".into()));
        }
        if let Some(i) = self.trunk_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidSpec(format!("trunk layer {i} has zero width")));
        }
        if self.head_width == 0 {
            return Err(Error::InvalidSpec("head_width must be at least 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// `(name, rows, cols)` of every dense layer, in storage order.
    pub fn layer_shapes(&self) -> Vec<(String, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.trunk_widths.len() + 4);
        let mut fan_in = self.input_dim;
        for (i, &w) in self.trunk_widths.iter().enumerate() {
            shapes.push((format!("trunk.{i}"), w, fan_in));
            fan_in = w;
        }
        shapes.push(("class.hidden".to_string(), self.head_width, fan_in));
        shapes.push(("class.out".to_string(), self.num_classes, self.head_width));
        shapes.push(("confidence.hidden".to_string(), self.head_width, fan_in));
        shapes.push(("confidence.out".to_string(), 1, self.head_width));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(_, r, c)| r * c + r).sum()
    }

    fn trunk_len(&self) -> usize {
        self.trunk_widths.len()
    }
}

/// Fully connected layer, `rows` outputs by `cols` inputs, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and returns `dL/dx`.
    fn backprop(&self, x: &[T], upstream: &[T], grad: &mut LayerGrad<T>) -> Vec<T> {
        let mut down = vec![T::zero(); self.cols];
        for (r, &g) in upstream.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grad.bias[r] = grad.bias[r] + g;
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weights[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] = grow[c] + g * x[c];
                down[c] = down[c] + g * row[c];
            }
        }
        down
    }
}

/// All trainable weights: trunk layers, then class hidden/out, then
/// confidence hidden/out.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    spec: NetworkSpec,
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Builds params from explicit layers, checking names, shapes and finiteness.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense<T>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "spec needs {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for ((name, rows, cols), layer) in shapes.iter().zip(&layers) {
            if layer.name != *name {
                return Err(Error::ShapeMismatch(format!(
                    "expected layer {name}, found {}",
                    layer.name
                )));
            }
            if layer.rows != *rows
                || layer.cols != *cols
                || layer.weights.len() != rows * cols
                || layer.bias.len() != *rows
            {
                return Err(Error::ShapeMismatch(format!(
                    "layer {name}: expected {rows}x{cols}, got {}x{} with {} weights and {} biases",
                    layer.rows,
                    layer.cols,
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("parameters of layer {name}"),
                });
            }
        }
        Ok(Self { spec, layers })
    }

    /// All-zero weights and biases.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(name, rows, cols)| Dense {
                name,
                rows,
                cols,
                weights: vec![T::zero(); rows * cols],
                bias: vec![T::zero(); rows],
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Mutable access to weight values. Shapes cannot be changed through it.
    pub fn layer_values_mut(&mut self) -> impl Iterator<Item = (&mut [T], &mut [T])> {
        self.layers
            .iter_mut()
            .map(|l| (l.weights.as_mut_slice(), l.bias.as_mut_slice()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn trunk(&self) -> &[Dense<T>] {
        &self.layers[..self.spec.trunk_len()]
    }

    fn head(&self, which: Head) -> (&Dense<T>, &Dense<T>) {
        let base = self.spec.trunk_len() + which.offset();
        (&self.layers[base], &self.layers[base + 1])
    }
}

#[derive(Debug, Clone, Copy)]
enum Head {
    Class,
    Confidence,
}

impl Head {
    fn offset(self) -> usize {
        match self {
            Head::Class => 0,
            Head::Confidence => 2,
        }
    }
}

/// He-style initialization: `N(0, 2 / fan_in)` weights, zero biases.
pub fn init_network<T: Scalar>(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams<T>> {
    let mut params = NetworkParams::<T>::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let std = (2.0 / layer.cols as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut layer.weights {
            *w = T::lit(normal.sample(&mut rng));
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activation<T> {
    pub pre: Vec<T>,
    pub post: Vec<T>,
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Vec<T>,
    pub trunk: Vec<Activation<T>>,
    pub class_hidden: Activation<T>,
    pub confidence_hidden: Activation<T>,
    pub class_logits: Vec<T>,
    pub confidence_logit: T,
}

impl<T: Scalar> ForwardTrace<T> {
    fn features(&self) -> &[T] {
        self.trunk.last().map_or(&self.input, |a| &a.post)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput<T> {
    /// Softmax of `class_logits`.
    pub probs: Vec<T>,
    /// Sigmoid of `confidence_logit`.
    pub confidence: T,
    pub class_logits: Vec<T>,
    pub confidence_logit: T,
}

impl<T: Scalar> PredictionOutput<T> {
    pub fn from_logits(class_logits: Vec<T>, confidence_logit: T) -> Self {
        Self {
            probs: softmax(&class_logits),
            confidence: sigmoid(confidence_logit),
            class_logits,
            confidence_logit,
        }
    }

    pub fn predicted_class(&self) -> usize {
        crate::scalar::argmax(&self.probs)
    }

    pub fn max_prob(&self) -> T {
        self.probs.iter().copied().fold(T::zero(), T::max)
    }
}

fn finite_or_err<T: Scalar>(values: &[T], layer: &Dense<T>) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: format!("output of layer {}", layer.name),
        })
    }
}

/// Checked before the ReLU, which would otherwise map NaN to zero.
fn relu_layer<T: Scalar>(layer: &Dense<T>, x: &[T]) -> Result<Activation<T>> {
    let pre = layer.apply(x);
    finite_or_err(&pre, layer)?;
    let post = pre.iter().map(|&z| z.max(T::zero())).collect();
    Ok(Activation { pre, post })
}

pub fn forward<T: Scalar>(params: &NetworkParams<T>, x: &[T]) -> Result<(PredictionOutput<T>, ForwardTrace<T>)> {
    if x.len() != params.spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, network expects {}",
            x.len(),
            params.spec.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "network input".into(),
        });
    }

    let mut trunk = Vec::with_capacity(params.trunk().len());
    for layer in params.trunk() {
        let input = trunk.last().map_or(x, |a: &Activation<T>| a.post.as_slice());
        let act = relu_layer(layer, input)?;
        trunk.push(act);
    }
    let features = trunk.last().map_or(x, |a| a.post.as_slice());

    let (class_hidden_layer, class_out) = params.head(Head::Class);
    let class_hidden = relu_layer(class_hidden_layer, features)?;
    let class_logits = class_out.apply(&class_hidden.post);
    finite_or_err(&class_logits, class_out)?;

    let (conf_hidden_layer, conf_out) = params.head(Head::Confidence);
    let confidence_hidden = relu_layer(conf_hidden_layer, features)?;
    let confidence_logit = conf_out.apply(&confidence_hidden.post)[0];
    finite_or_err(&[confidence_logit], conf_out)?;

    let output = PredictionOutput::from_logits(class_logits.clone(), confidence_logit);
    let trace = ForwardTrace {
        input: x.to_vec(),
        trunk,
        class_hidden,
        confidence_hidden,
        class_logits,
        confidence_logit,
    };
    Ok((output, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Gradients laid out exactly like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub layers: Vec<LayerGrad<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weights.iter_mut().zip(&b.weights) {
                *x = *x + scale * y;
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + scale * y;
            }
        }
    }

    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    fn matches(&self, params: &NetworkParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, p)| g.weights.len() == p.weights.len() && g.bias.len() == p.bias.len())
    }
}

fn relu_mask<T: Scalar>(act: &Activation<T>, upstream: &mut [T]) {
    for (g, &z) in upstream.iter_mut().zip(&act.pre) {
        if z <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Reverse pass for an objective whose gradients with respect to the class
/// logits and the confidence logit are `grad_class_logits`, `grad_conf_logit`.
///
/// Returns the parameter gradients and the gradient with respect to the input.
pub fn backward<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    grad_class_logits: &[T],
    grad_conf_logit: T,
) -> Result<(ParamGrads<T>, Vec<T>)> {
    let mut grads = ParamGrads::zeros_like(params);
    let input_grad = backward_into(params, trace, grad_class_logits, grad_conf_logit, &mut grads)?;
    Ok((grads, input_grad))
}

/// Like [`backward`], but adds the parameter gradients into `grads`.
pub fn backward_into<T: Scalar>(
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    grad_class_logits: &[T],
    grad_conf_logit: T,
    grads: &mut ParamGrads<T>,
) -> Result<Vec<T>> {
    if grad_class_logits.len() != params.spec.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "class logit gradient has length {}, network has {} classes",
            grad_class_logits.len(),
            params.spec.num_classes
        )));
    }
    if trace.input.len() != params.spec.input_dim || trace.trunk.len() != params.spec.trunk_len() {
        return Err(Error::ShapeMismatch("trace was not produced by this network".into()));
    }
    if !grads.matches(params) {
        return Err(Error::ShapeMismatch("gradient buffer does not match parameters".into()));
    }

    let n_trunk = params.spec.trunk_len();
    let features = trace.features();

    let mut feature_grad = vec![T::zero(); features.len()];
    for (head, hidden, upstream) in [
        (Head::Class, &trace.class_hidden, grad_class_logits),
        (
            Head::Confidence,
            &trace.confidence_hidden,
            std::slice::from_ref(&grad_conf_logit),
        ),
    ] {
        let (hidden_layer, out_layer) = params.head(head);
        let base = n_trunk + head.offset();
        let (lo, hi) = grads.layers.split_at_mut(base + 1);
        let mut g_hidden = out_layer.backprop(&hidden.post, upstream, &mut hi[0]);
        relu_mask(hidden, &mut g_hidden);
        let g_features = hidden_layer.backprop(features, &g_hidden, &mut lo[base]);
        for (a, b) in feature_grad.iter_mut().zip(g_features) {
            *a = *a + b;
        }
    }

    let mut upstream = feature_grad;
    for i in (0..n_trunk).rev() {
        relu_mask(&trace.trunk[i], &mut upstream);
        let input = if i == 0 { &trace.input } else { &trace.trunk[i - 1].post };
        upstream = params.layers[i].backprop(input, &upstream, &mut grads.layers[i]);
    }
    Ok(upstream)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: T,
    pub momentum: T,
    pub velocity: ParamGrads<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &NetworkParams<T>, learning_rate: T, momentum: T) -> Result<Self> {
        if !(learning_rate >= T::zero()) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate {learning_rate} must be finite and >= 0"
            )));
        }
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(Error::InvalidArgument(format!(
                "momentum {momentum} must lie in [0, 1)"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: ParamGrads::zeros_like(params),
        })
    }
}

/// Nesterov momentum: `v <- mu*v - lr*g; theta <- theta + mu*v - lr*g`.
///
/// Parameters are left untouched if any gradient entry is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut NetworkParams<T>,
    grads: &ParamGrads<T>,
    opt: &mut OptimizerState<T>,
) -> Result<()> {
    if !grads.matches(params) || !opt.velocity.matches(params) {
        return Err(Error::ShapeMismatch(
            "gradient or velocity shapes differ from parameters".into(),
        ));
    }
    for (layer, g) in params.layers.iter().zip(&grads.layers) {
        if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("gradient of layer {}", layer.name),
            });
        }
    }
    let (mu, lr) = (opt.momentum, opt.learning_rate);
    for ((layer, g), v) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
    {
        let pairs = layer
            .weights
            .iter_mut()
            .zip(&g.weights)
            .zip(v.weights.iter_mut())
            .chain(layer.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()));
        for ((theta, &grad), vel) in pairs {
            *vel = mu * *vel - lr * grad;
            *theta = *theta + mu * *vel - lr * grad;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overflow_is_reported_not_masked() {
        let spec = NetworkSpec::new(2, vec![4, 4], 4, 2);
        let mut p = init_network::<f64>(&spec, 1).unwrap();
        for (w, _) in p.layer_values_mut() {
            for v in w {
                *v *= 1e120;
            }
        }
        let err = forward(&p, &[0.5, -0.5]).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }

    fn xor_spec() -> NetworkSpec {
        NetworkSpec::new(2, vec![100, 100, 100], 100, 2)
    }

    #[test]
    fn parameter_count_by_shape() {
        let expected = (2 * 100 + 100)
            + (100 * 100 + 100)
            + (100 * 100 + 100)
            + (100 * 100 + 100 + 100 * 2 + 2)
            + (100 * 100 + 100 + 100 + 1);
        assert_eq!(expected, 41_003);
        assert_eq!(xor_spec().param_count(), expected);
        let params = init_network::<f64>(&xor_spec(), 1).unwrap();
        assert_eq!(params.param_count(), expected);
    }

    #[test]
    fn init_is_seeded_and_biases_zero() {
        let a = init_network::<f64>(&xor_spec(), 7).unwrap();
        let b = init_network::<f64>(&xor_spec(), 7).unwrap();
        let c = init_network::<f64>(&xor_spec(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in a.layers() {
            assert!(l.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let spec = NetworkSpec::new(400, vec![400], 400, 2);
        let p = init_network::<f64>(&spec, 3).unwrap();
        let w = &p.layers()[0].weights;
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 400.0).abs() < 0.05 * 2.0 / 400.0, "variance {var}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NetworkSpec::new(0, vec![3], 3, 2).validate().is_err());
        assert!(NetworkSpec::new(2, vec![3, 0], 3, 2).validate().is_err());
        assert!(NetworkSpec::new(2, vec![3], 0, 2).validate().is_err());
        assert!(NetworkSpec::new(2, vec![3], 3, 1).validate().is_err());
        assert!(init_network::<f64>(&NetworkSpec::new(2, vec![], 3, 1), 0).is_err());
    }

    #[test]
    fn zero_params_give_uniform_outputs() {
        let p = NetworkParams::<f64>::zeros(&xor_spec()).unwrap();
        let (out, _) = forward(&p, &[0.3, -0.7]).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.5]);
        assert_eq!(out.confidence, 0.5);
    }

    #[test]
    fn forced_logits_through_identity_chain() {
        let spec = NetworkSpec::new(1, vec![1], 1, 2);
        let mut p = NetworkParams::<f64>::zeros(&spec).unwrap();
        for (i, (w, _)) in p.layer_values_mut().enumerate() {
            match i {
                0 | 1 | 3 | 4 => w[0] = 1.0,
                2 => w.copy_from_slice(&[2.0, 0.0]),
                _ => unreachable!(),
            }
        }
        let (out, trace) = forward(&p, &[1.0]).unwrap();
        assert_eq!(out.class_logits, vec![2.0, 0.0]);
        assert_eq!(trace.confidence_logit, 1.0);
        assert!((out.probs[0] - 0.8808).abs() < 1e-4);
        assert!((out.probs[1] - 0.1192).abs() < 1e-4);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = NetworkParams::<f64>::zeros(&xor_spec()).unwrap();
        assert!(matches!(forward(&p, &[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
        assert!(matches!(forward(&p, &[0.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = NetworkSpec::new(3, vec![4, 5], 3, 3);
        let p = init_network::<f64>(&spec, 11).unwrap();
        let (_, trace) = forward(&p, &[0.1, -0.4, 0.9]).unwrap();
        let (g, gx) = backward(&p, &trace, &[0.0; 3], 0.0).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_wrong_gradient_shape() {
        let spec = NetworkSpec::new(2, vec![3], 3, 2);
        let p = init_network::<f64>(&spec, 1).unwrap();
        let (_, trace) = forward(&p, &[0.1, 0.2]).unwrap();
        assert!(matches!(
            backward(&p, &trace, &[0.0; 3], 0.0),
            Err(Error::ShapeMismatch(_))
        ));
    }

    fn scalar_net(theta: f64) -> NetworkParams<f64> {
        // Smallest network; only the first weight is used as "theta".
        let spec = NetworkSpec::new(1, vec![], 1, 2);
        let mut p = NetworkParams::zeros(&spec).unwrap();
        p.layer_values_mut().next().unwrap().0[0] = theta;
        p
    }

    fn unit_grad(p: &NetworkParams<f64>, g: f64) -> ParamGrads<f64> {
        let mut grads = ParamGrads::zeros_like(p);
        grads.layers[0].weights[0] = g;
        grads
    }

    #[test]
    fn plain_sgd_when_momentum_zero() {
        let mut p = scalar_net(0.0);
        let mut opt = OptimizerState::new(&p, 0.1, 0.0).unwrap();
        let g = unit_grad(&p, 1.0);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert_eq!(p.layers()[0].weights[0], -0.1);
    }

    #[test]
    fn nesterov_recurrence_two_steps() {
        let mut p = scalar_net(0.0);
        let mut opt = OptimizerState::new(&p, 0.1, 0.9).unwrap();
        let g = unit_grad(&p, 1.0);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert!((opt.velocity.layers[0].weights[0] + 0.1).abs() < 1e-15);
        assert!((p.layers()[0].weights[0] + 0.19).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut opt).unwrap();
        assert!((opt.velocity.layers[0].weights[0] + 0.19).abs() < 1e-15);
        assert!((p.layers()[0].weights[0] + 0.461).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let spec = NetworkSpec::new(2, vec![3], 3, 2);
        let mut p = init_network::<f64>(&spec, 5).unwrap();
        let before = p.clone();
        let mut grads = ParamGrads::zeros_like(&p);
        grads
            .layers
            .iter_mut()
            .for_each(|l| l.weights.iter_mut().for_each(|w| *w = 0.3));
        let mut opt = OptimizerState::new(&p, 0.0, 0.9).unwrap();
        sgd_step(&mut p, &grads, &mut opt).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let spec = NetworkSpec::new(2, vec![3], 3, 2);
        let mut p = init_network::<f64>(&spec, 5).unwrap();
        let before = p.clone();
        let mut grads = ParamGrads::zeros_like(&p);
        grads.layers[2].bias[1] = f64::INFINITY;
        let mut opt = OptimizerState::new(&p, 0.1, 0.9).unwrap();
        let err = sgd_step(&mut p, &grads, &mut opt).unwrap_err();
        assert!(err.to_string().contains("class.out"), "{err}");
        assert_eq!(p, before);
    }

    #[test]
    fn f32_network_runs() {
        let p = init_network::<f32>(&NetworkSpec::new(2, vec![8], 4, 3), 2).unwrap();
        let (out, _) = forward(&p, &[0.5, -0.5]).unwrap();
        let s: f32 = out.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
