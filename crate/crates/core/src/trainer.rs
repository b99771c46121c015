//! Seeded training loop, evaluation, model files and run history.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::netcore::{
    backward_into, forward, init_network, sgd_step, Dense, NetworkParams, NetworkSpec, OptimizerState, ParamGrads,
};
use crate::objective::{batch_loss_and_grads, draw_hint_mask_with, update_lambda, BudgetState};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub trunk_widths: Vec<usize>,
    pub head_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta: f64,
    pub lambda_init: f64,
    pub adjust_factor: f64,
    pub hint_probability: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// The XOR setup: 3x100 trunk, 100-unit branches, batches of 10 for 30
    /// epochs, budget 0.3.
    fn default() -> Self {
        Self {
            trunk_widths: vec![100, 100, 100],
            head_width: 100,
            epochs: 30,
            batch_size: 10,
            learning_rate: 0.002,
            momentum: 0.9,
            beta: 0.3,
            lambda_init: 0.1,
            adjust_factor: 1.01,
            hint_probability: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hint_probability) {
            return Err(Error::InvalidArgument(format!(
                "hint_probability {} outside [0, 1]",
                self.hint_probability
            )));
        }
        BudgetState::new(self.beta, self.lambda_init, self.adjust_factor)?;
        Ok(())
    }

    pub fn network_spec(&self, input_dim: usize, num_classes: usize) -> NetworkSpec {
        NetworkSpec::new(input_dim, self.trunk_widths.clone(), self.head_width, num_classes)
    }

    /// Applies one `key=value` setting. Keys match the CLI flag names with
    /// either `-` or `_` separators.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value {value:?} for {key}")))
        }
        match key.replace('-', "_").as_str() {
            "trunk_widths" => {
                self.trunk_widths = value.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?;
            }
            "head_width" => self.head_width = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "lambda_init" => self.lambda_init = parse(key, value)?,
            "adjust_factor" => self.adjust_factor = parse(key, value)?,
            "hint_probability" => self.hint_probability = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` file; blank lines and `#` comments are
    /// skipped.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch task losses.
    pub task_loss: f64,
    /// Sample-weighted mean of the batch confidence losses.
    pub confidence_loss: f64,
    /// Lambda at the end of the epoch.
    pub lambda: f64,
    /// Accuracy on the full training set after the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "task_loss", "confidence_loss", "lambda", "train_accuracy"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.task_loss.to_string(),
                e.confidence_loss.to_string(),
                e.lambda.to_string(),
                e.train_accuracy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn to_scalar<T: Scalar>(row: &[f64]) -> Vec<T> {
    row.iter().map(|&v| T::lit(v)).collect()
}

/// Trains a fresh network. Output is a pure function of `(config, dataset)`.
pub fn train<T: Scalar>(config: &TrainConfig, dataset: &LabeledDataset) -> Result<(NetworkParams<T>, TrainHistory)> {
    config.validate()?;
    dataset.validate()?;
    let spec = config.network_spec(dataset.dim(), dataset.num_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_network::<T>(&spec, rng.random())?;
    let mut opt = OptimizerState::new(&params, T::lit(config.learning_rate), T::lit(config.momentum))?;
    let mut budget = BudgetState::new(config.beta, config.lambda_init, config.adjust_factor)?;

    let inputs: Vec<Vec<T>> = dataset.features.iter().map(|r| to_scalar(r)).collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(config.epochs),
        lambda_min: budget.lambda,
        lambda_max: budget.lambda,
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut task_sum, mut conf_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut outputs = Vec::with_capacity(batch.len());
            let mut traces = Vec::with_capacity(batch.len());
            for &i in batch {
                let (out, trace) = forward(&params, &inputs[i])?;
                outputs.push(out);
                traces.push(trace);
            }
            let labels: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();
            let mask = draw_hint_mask_with(batch.len(), config.hint_probability, &mut rng);
            let lambda = T::lit(budget.lambda);
            let bg = batch_loss_and_grads(&outputs, &labels, &mask, lambda)?;

            let inv_n = T::one() / T::from_usize_lossy(batch.len());
            let mut grads = ParamGrads::zeros_like(&params);
            for ((trace, gc), &gz) in traces.iter().zip(&bg.class_logits).zip(&bg.confidence_logit) {
                let gc: Vec<T> = gc.iter().map(|&g| g * inv_n).collect();
                backward_into(&params, trace, &gc, gz * inv_n, &mut grads)?;
            }
            sgd_step(&mut params, &grads, &mut opt)?;

            let observed = bg.loss.confidence.to_f64().unwrap_or(f64::NAN);
            if !observed.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("confidence loss in epoch {}", epoch + 1),
                });
            }
            budget = update_lambda(budget, observed);
            history.lambda_min = history.lambda_min.min(budget.lambda);
            history.lambda_max = history.lambda_max.max(budget.lambda);

            let n = batch.len() as f64;
            task_sum += bg.loss.task.to_f64().unwrap_or(f64::NAN) * n;
            conf_sum += observed * n;
        }
        let eval = evaluate(&params, dataset)?;
        let n = dataset.len() as f64;
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            task_loss: task_sum / n,
            confidence_loss: conf_sum / n,
            lambda: budget.lambda,
            train_accuracy: eval.accuracy,
        });
    }
    Ok((params, history))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord<T> {
    /// Argmax of the class probabilities, lowest index on ties.
    pub predicted: usize,
    pub correct: bool,
    pub confidence: T,
    pub max_softmax: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub records: Vec<EvalRecord<T>>,
    pub accuracy: f64,
}

pub fn evaluate<T: Scalar>(params: &NetworkParams<T>, dataset: &LabeledDataset) -> Result<Evaluation<T>> {
    let records = dataset
        .features
        .iter()
        .zip(&dataset.labels)
        .map(|(x, &label)| {
            let (out, _) = forward(params, &to_scalar::<T>(x))?;
            let predicted = out.predicted_class();
            Ok(EvalRecord {
                predicted,
                correct: predicted == label,
                confidence: out.confidence,
                max_softmax: out.max_prob(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accuracy = records.iter().filter(|r| r.correct).count() as f64 / records.len().max(1) as f64;
    Ok(Evaluation { records, accuracy })
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: String,
    spec: NetworkSpec,
    layers: Vec<LayerRecord>,
}

pub fn write_model<T: Scalar, W: Write>(params: &NetworkParams<T>, out: W) -> Result<()> {
    let to_f64 = |v: &[T]| v.iter().map(|x| x.to_f64().expect("finite scalar")).collect();
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION.to_string(),
        spec: params.spec().clone(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerRecord {
                name: l.name.clone(),
                rows: l.rows,
                cols: l.cols,
                weights: to_f64(&l.weights),
                bias: to_f64(&l.bias),
            })
            .collect(),
    };
    let mut out = BufWriter::new(out);
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::Io(e.into()))?;
    out.flush()?;
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(input: R) -> Result<NetworkParams<T>> {
    let value: serde_json::Value =
        serde_json::from_reader(BufReader::new(input)).map_err(|e| Error::MalformedModel(e.to_string()))?;
    match value.get("version") {
        Some(serde_json::Value::String(v)) if v == MODEL_FORMAT_VERSION => {}
        Some(serde_json::Value::String(v)) => {
            return Err(Error::Version {
                found: v.clone(),
                expected: MODEL_FORMAT_VERSION.to_string(),
            })
        }
        Some(other) => {
            return Err(Error::Version {
                found: other.to_string(),
                expected: MODEL_FORMAT_VERSION.to_string(),
            })
        }
        None => return Err(Error::MalformedModel("missing \"version\" field".into())),
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::MalformedModel(e.to_string()))?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| Dense {
            name: l.name,
            rows: l.rows,
            cols: l.cols,
            weights: l.weights.into_iter().map(T::lit).collect(),
            bias: l.bias.into_iter().map(T::lit).collect(),
        })
        .collect();
    NetworkParams::from_layers(file.spec, layers)
}

pub fn save_model<T: Scalar>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    write_model(params, File::create(path)?)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkParams<T>> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_xor;
    use crate::netcore::NetworkParams;

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            trunk_widths: vec![16, 16],
            head_width: 8,
            epochs: 3,
            ..TrainConfig::with_seed(seed)
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_xor(120, 0.1, 5).unwrap();
        let (p1, h1) = train::<f64>(&small_config(2), &ds).unwrap();
        let (p2, h2) = train::<f64>(&small_config(2), &ds).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 3);
        let (p3, _) = train::<f64>(&small_config(3), &ds).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn partial_batches_are_kept() {
        let ds = gen_xor(23, 0.0, 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 10,
            epochs: 1,
            ..small_config(0)
        };
        let (_, h) = train::<f64>(&cfg, &ds).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h.epochs[0].task_loss.is_finite());
    }

    #[test]
    fn train_rejects_bad_config() {
        let ds = gen_xor(20, 0.0, 1).unwrap();
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..small_config(0)
            },
            TrainConfig {
                batch_size: 0,
                ..small_config(0)
            },
            TrainConfig {
                hint_probability: 1.5,
                ..small_config(0)
            },
            TrainConfig {
                beta: 0.0,
                ..small_config(0)
            },
        ] {
            assert!(train::<f64>(&cfg, &ds).is_err());
        }
        let mut bad = ds.clone();
        bad.labels[0] = 2;
        assert!(train::<f64>(&small_config(0), &bad).is_err());
    }

    #[test]
    fn evaluate_zero_params() {
        let spec = NetworkSpec::new(2, vec![4], 4, 2);
        let p = NetworkParams::<f64>::zeros(&spec).unwrap();
        let ds = gen_xor(40, 0.0, 3).unwrap();
        let eval = evaluate(&p, &ds).unwrap();
        for r in &eval.records {
            assert_eq!((r.predicted, r.confidence, r.max_softmax), (0, 0.5, 0.5));
        }
        let zeros = ds.labels.iter().filter(|&&l| l == 0).count() as f64 / 40.0;
        assert_eq!(eval.accuracy, zeros);
    }

    #[test]
    fn evaluate_is_pure_under_replication() {
        let ds = gen_xor(30, 0.2, 3).unwrap();
        let (p, _) = train::<f64>(&small_config(1), &ds).unwrap();
        let mut doubled = ds.clone();
        doubled.features.extend(ds.features.clone());
        doubled.labels.extend(ds.labels.clone());
        let once = evaluate(&p, &ds).unwrap();
        let twice = evaluate(&p, &doubled).unwrap();
        assert_eq!(&twice.records[..30], &once.records[..]);
        assert_eq!(&twice.records[30..], &once.records[..]);
    }

    /// Class-0 logit is |x1 + x2| - |x1 - x2|, positive exactly on quadrants I and III.
    fn hand_xor() -> NetworkParams<f64> {
        let spec = NetworkSpec::new(2, vec![4], 4, 2);
        let mut p = NetworkParams::zeros(&spec).unwrap();
        let mut layers = p.layer_values_mut();
        let (w, _) = layers.next().unwrap();
        w.copy_from_slice(&[1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0]);
        let (w, _) = layers.next().unwrap();
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let (w, _) = layers.next().unwrap();
        w.copy_from_slice(&[1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0]);
        drop(layers);
        p
    }

    #[test]
    fn hand_built_classifier_is_perfect_on_corners() {
        let ds = LabeledDataset::new(
            vec![vec![0.5, 0.5], vec![-0.5, 0.5], vec![-0.5, -0.5], vec![0.5, -0.5]],
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        assert_eq!(evaluate(&hand_xor(), &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let spec = NetworkSpec::new(2, vec![5, 3], 4, 3);
        let mut p = init_network::<f64>(&spec, 9).unwrap();
        p.layer_values_mut().next().unwrap().0[0] = 0.1 + 0.2;
        let mut buf = Vec::new();
        write_model(&p, &mut buf).unwrap();
        let back: NetworkParams<f64> = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, p);
        for (a, b) in back.layers().iter().zip(p.layers()) {
            assert!(a
                .weights
                .iter()
                .zip(&b.weights)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn model_file_errors_are_distinct() {
        let p = init_network::<f64>(&NetworkSpec::new(2, vec![3], 3, 2), 1).unwrap();
        let mut buf = Vec::new();
        write_model(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let v2 = text.replacen("\"version\":\"1\"", "\"version\":\"2\"", 1);
        assert!(matches!(
            read_model::<f64, _>(v2.as_bytes()),
            Err(Error::Version { .. })
        ));

        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            read_model::<f64, _>(truncated.as_bytes()),
            Err(Error::MalformedModel(_))
        ));

        let wrong_shape = text.replacen("\"input_dim\":2", "\"input_dim\":3", 1);
        assert!(matches!(
            read_model::<f64, _>(wrong_shape.as_bytes()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn config_text_and_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_config_text("# xor\nepochs = 12\nbatch-size=4\ntrunk_widths=8,8\nlr=0.05\n\n")
            .unwrap();
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.learning_rate), (12, 4, 0.05));
        assert_eq!(cfg.trunk_widths, vec![8, 8]);
        assert!(cfg.apply_config_text("nonsense").is_err());
        assert!(cfg.apply_config_text("colour=blue").is_err());
        assert!(cfg.apply_config_text("epochs=many").is_err());
    }

    #[test]
    fn history_csv_header() {
        let h = TrainHistory {
            epochs: vec![EpochRecord {
                epoch: 1,
                task_loss: 0.5,
                confidence_loss: 0.25,
                lambda: 0.1,
                train_accuracy: 1.0,
            }],
            lambda_min: 0.1,
            lambda_max: 0.1,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,task_loss,confidence_loss,lambda,train_accuracy\n1,0.5,0.25,0.1,1\n"
        );
    }
}
