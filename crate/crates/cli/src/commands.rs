use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use conflearn::data::{
    self, gen_grid, gen_noise_ood, gen_ring_ood, gen_xor_with, load_csv, load_features_csv, write_dataset_csv,
    write_features_csv,
};
use conflearn::metrics::{calibrate_threshold, calibrate_threshold_misclassified, detection_error, metric_report};
use conflearn::netcore::forward;
use conflearn::scorers::{default_epsilon_grid, epsilon_grid_search, Scorer};
use conflearn::trainer::{evaluate, load_model, train, write_model, TrainConfig};
use conflearn::{CalibrationMethod, EvalRecord, GridSpec, NetworkParams, NoiseKind, XorNoise};

use crate::args::*;
use crate::output::{json_number, write_atomic, write_json};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] conflearn::Error),
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(g) => gen_data(g),
        Command::Train(a) => train_cmd(a),
        Command::ConfidenceMap(a) => confidence_map(a),
        Command::OodEval(a) => ood_eval(a),
        Command::SweepEpsilon(a) => sweep_epsilon(a),
        Command::Calibrate(a) => calibrate(a),
    }
}

fn save_features(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    Ok(write_atomic(path, |w| write_features_csv(rows, w))?)
}

fn grid_spec(g: &GridArgs) -> GridSpec {
    GridSpec {
        bounds: vec![(g.min, g.max); g.dim],
        resolution: vec![g.resolution; g.dim],
    }
}

fn gen_data(cmd: GenData) -> Result<()> {
    match cmd {
        GenData::Xor {
            n,
            noise,
            noise_model,
            seed,
            out,
        } => {
            let model = match noise_model {
                NoiseModelArg::Uniform => XorNoise::Uniform,
                NoiseModelArg::Boundary => XorNoise::Boundary,
            };
            let ds = gen_xor_with(n, noise, model, seed)?;
            write_atomic(&out, |w| write_dataset_csv(&ds, w))?;
        }
        GenData::Noise {
            n,
            kind,
            dim,
            range,
            seed,
            out,
        } => {
            let kind = match kind {
                NoiseArg::Uniform => NoiseKind::Uniform,
                NoiseArg::Gaussian => NoiseKind::Gaussian,
            };
            save_features(&out, &gen_noise_ood(n, kind, dim, seed, range)?)?;
        }
        GenData::Ring {
            n,
            dim,
            inner,
            outer,
            seed,
            out,
        } => save_features(&out, &gen_ring_ood(n, dim, inner, outer, seed)?)?,
        GenData::Grid { grid, out } => save_features(&out, &gen_grid(&grid_spec(&grid))?)?,
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(conflearn::Error::from)?;
        config.apply_config_text(&text)?;
    }
    let overrides: [(&str, Option<String>); 10] = [
        ("trunk_widths", a.trunk_widths.clone()),
        ("head_width", a.head_width.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("learning_rate", a.learning_rate.map(|v| v.to_string())),
        ("momentum", a.momentum.map(|v| v.to_string())),
        ("beta", a.beta.map(|v| v.to_string())),
        ("lambda_init", a.lambda_init.map(|v| v.to_string())),
        ("adjust_factor", a.adjust_factor.map(|v| v.to_string())),
        ("hint_probability", a.hint_probability.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    config.seed = a.seed;

    let data = load_csv(&a.data, None)?;
    let (params, history) = train::<f64>(&config, &data)?;
    write_atomic(&a.model_out, |w| write_model(&params, w))?;
    if let Some(path) = &a.history_out {
        write_atomic(path, |w| history.write_csv(w))?;
    }
    if let Some(last) = history.epochs.last() {
        println!(
            "epochs {} train_accuracy {} task_loss {} confidence_loss {} lambda {}",
            last.epoch, last.train_accuracy, last.task_loss, last.confidence_loss, last.lambda
        );
    }
    Ok(())
}

fn load_params(path: &Path) -> Result<NetworkParams> {
    Ok(load_model::<f64>(path)?)
}

fn check_dim(params: &NetworkParams, rows: &[Vec<f64>], what: &str) -> Result<()> {
    let expected = params.spec().input_dim;
    match rows.first() {
        Some(r) if r.len() != expected => Err(conflearn::Error::ShapeMismatch(format!(
            "{what} has {} features, model expects {expected}",
            r.len()
        ))
        .into()),
        _ => Ok(()),
    }
}

fn confidence_map(a: MapArgs) -> Result<()> {
    let params = load_params(&a.model)?;
    let points = match &a.points {
        Some(p) => load_features_csv(p)?,
        None => gen_grid(&grid_spec(&a.grid))?,
    };
    check_dim(&params, &points, "grid")?;
    let m = params.spec().num_classes;
    let rows = points
        .iter()
        .map(|x| forward(&params, x).map(|(out, _)| (x, out)))
        .collect::<conflearn::Result<Vec<_>>>()?;
    write_atomic(&a.out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let header = (1..=points[0].len())
            .map(|i| format!("x{i}"))
            .chain((0..m).map(|k| format!("p{k}")))
            .chain(std::iter::once("c".to_string()));
        csv.write_record(header)?;
        for (x, out) in &rows {
            let fields = x.iter().chain(&out.probs).chain(std::iter::once(&out.confidence));
            csv.write_record(fields.map(f64::to_string))?;
        }
        csv.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn scorers_for(arg: ScorerArg, temperature: f64) -> Vec<Scorer> {
    let odin = Scorer::Odin { temperature };
    match arg {
        ScorerArg::Confidence => vec![Scorer::Confidence],
        ScorerArg::Softmax => vec![Scorer::Softmax],
        ScorerArg::Odin => vec![odin],
        ScorerArg::All => vec![Scorer::Confidence, Scorer::Softmax, odin],
    }
}

fn single_scorer(arg: ScorerArg, temperature: f64) -> Result<Scorer> {
    match scorers_for(arg, temperature).as_slice() {
        [s] => Ok(*s),
        _ => Err(CliError::Usage("this command takes a single scorer".into())),
    }
}

/// Softmax has no perturbation step, so its effective magnitude is zero.
fn effective_epsilon(scorer: Scorer, epsilon: f64) -> f64 {
    if scorer == Scorer::Softmax {
        0.0
    } else {
        epsilon
    }
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(conflearn::Error::from)?;
    let header = reader.headers().map_err(conflearn::Error::from)?.clone();
    let column = header
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| conflearn::Error::MissingHeader {
            path: path.to_path_buf(),
            reason: "expected a score column".into(),
        })?;
    let mut scores = Vec::new();
    for record in reader.records() {
        let record = record.map_err(conflearn::Error::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let text = record.get(column).unwrap_or("");
        let value = text
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| conflearn::Error::NonNumeric {
                path: path.to_path_buf(),
                line,
                column: column + 1,
                value: text.to_string(),
            })?;
        scores.push(value);
    }
    if scores.is_empty() {
        return Err(conflearn::Error::Empty(format!("{}: no scores", path.display())).into());
    }
    Ok(scores)
}

fn report_entry(scorer: &str, epsilon: f64, ins: &[f64], outs: &[f64]) -> Result<Value> {
    let r = metric_report(ins, outs)?;
    Ok(json!({
        "scorer": scorer,
        "epsilon": epsilon,
        "fpr_at_95_tpr": r.fpr_at_95_tpr,
        "detection_error": r.detection_error,
        "auroc": r.auroc,
        "aupr_in": r.aupr_in,
        "aupr_out": r.aupr_out,
        "delta": json_number(r.calibrated_delta),
        "calibration_method": CalibrationMethod::TrueOod.as_str(),
    }))
}

fn ood_eval(a: OodEvalArgs) -> Result<()> {
    let mut entries = Vec::new();
    let mut scored: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    if let (Some(i), Some(o)) = (&a.in_scores, &a.out_scores) {
        let (ins, outs) = (read_scores(i)?, read_scores(o)?);
        entries.push(report_entry("precomputed", 0.0, &ins, &outs)?);
        scored.push(("precomputed".into(), ins, outs));
    } else {
        let missing = || CliError::Usage("--model, --in and --out are required without precomputed scores".into());
        let params = load_params(a.model.as_deref().ok_or_else(missing)?)?;
        let ins_x = load_features_csv(a.in_data.as_deref().ok_or_else(missing)?)?;
        let outs_x = load_features_csv(a.out_data.as_deref().ok_or_else(missing)?)?;
        check_dim(&params, &ins_x, "--in")?;
        check_dim(&params, &outs_x, "--out")?;
        for scorer in scorers_for(a.scorer, a.temperature) {
            let eps = effective_epsilon(scorer, a.epsilon);
            let ins = scorer.score_all(&params, &ins_x, eps)?;
            let outs = scorer.score_all(&params, &outs_x, eps)?;
            entries.push(report_entry(scorer.name(), eps, &ins, &outs)?);
            scored.push((scorer.name().into(), ins, outs));
        }
    }
    write_json(&a.report, &Value::Array(entries.clone()))?;
    if let Some(path) = &a.scores_out {
        write_atomic(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["scorer", "set", "sample_id", "score"])?;
            for (name, ins, outs) in &scored {
                for (set, scores) in [("in", ins), ("out", outs)] {
                    for (i, s) in scores.iter().enumerate() {
                        csv.write_record([name.as_str(), set, &i.to_string(), &s.to_string()])?;
                    }
                }
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    for e in &entries {
        println!(
            "{} auroc {} detection_error {} fpr_at_95_tpr {}",
            e["scorer"].as_str().unwrap_or(""),
            e["auroc"],
            e["detection_error"],
            e["fpr_at_95_tpr"]
        );
    }
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad epsilon {v:?} in --grid")))
        })
        .collect()
}

fn sweep_epsilon(a: SweepArgs) -> Result<()> {
    let scorer = single_scorer(a.scorer, a.temperature)?;
    let params = load_params(&a.model)?;
    let ins = load_features_csv(&a.in_data)?;
    let outs = load_features_csv(&a.out_data)?;
    check_dim(&params, &ins, "--in")?;
    check_dim(&params, &outs, "--out")?;
    let grid = match &a.grid {
        Some(text) => parse_grid(text)?,
        None => default_epsilon_grid(&data::feature_std(&ins)),
    };
    let search = epsilon_grid_search(&params, &ins, &outs, &grid, scorer)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "epsilon,detection_error");
    for (eps, de) in &search.table {
        let _ = writeln!(stdout, "{eps},{de}");
    }
    let _ = writeln!(
        stdout,
        "best epsilon {} detection_error {}",
        search.best_epsilon, search.best_detection_error
    );
    if let Some(path) = &a.table_out {
        write_atomic(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["epsilon", "detection_error"])?;
            for (eps, de) in &search.table {
                csv.write_record([eps.to_string(), de.to_string()])?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let scorer = single_scorer(a.scorer, a.temperature)?;
    let eps = effective_epsilon(scorer, a.epsilon);
    let params = load_params(&a.model)?;
    let result = match a.method {
        MethodArg::TrueOod => {
            let out_path = a
                .out_data
                .as_deref()
                .ok_or_else(|| CliError::Usage("--method true-ood needs --out".into()))?;
            let ins_x = load_features_csv(&a.in_data)?;
            let outs_x = load_features_csv(out_path)?;
            check_dim(&params, &ins_x, "--in")?;
            check_dim(&params, &outs_x, "--out")?;
            let ins = scorer.score_all(&params, &ins_x, eps)?;
            let outs = scorer.score_all(&params, &outs_x, eps)?;
            let delta = calibrate_threshold(&ins, &outs)?;
            json!({
                "calibration_method": CalibrationMethod::TrueOod.as_str(),
                "scorer": scorer.name(),
                "epsilon": eps,
                "delta": json_number(delta),
                "detection_error": detection_error(&ins, &outs)?,
            })
        }
        MethodArg::Misclassified => {
            let holdout = load_csv(&a.in_data, Some(params.spec().num_classes))?;
            check_dim(&params, &holdout.features, "--in")?;
            let scores = scorer.score_all(&params, &holdout.features, eps)?;
            let records: Vec<EvalRecord> = evaluate(&params, &holdout)?
                .records
                .into_iter()
                .zip(scores)
                .map(|(r, s)| EvalRecord { confidence: s, ..r })
                .collect();
            let delta = calibrate_threshold_misclassified(&records)?;
            let wrong = records.iter().filter(|r| !r.correct).count();
            json!({
                "calibration_method": CalibrationMethod::MisclassifiedProxy.as_str(),
                "scorer": scorer.name(),
                "epsilon": eps,
                "delta": json_number(delta),
                "correct": records.len() - wrong,
                "misclassified": wrong,
            })
        }
    };
    println!("{result}");
    if let Some(path) = &a.report {
        write_json(path, &result)?;
    }
    Ok(())
}
