//! Synthetic datasets and CSV storage.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Where a dataset came from. `clean_labels` holds the labels before any
/// label-flip noise was applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    pub noise: f64,
    pub clean_labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            num_classes,
            provenance: Provenance::default(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Empty("dataset has no samples".into()));
        }
        if self.features.len() != self.labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                self.features.len(),
                self.labels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("a dataset needs at least 2 classes".into()));
        }
        let d = self.dim();
        if d == 0 {
            return Err(Error::ShapeMismatch("samples have no features".into()));
        }
        for (i, row) in self.features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} features, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("features of sample {i}"),
                });
            }
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has label {l} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Per-feature population standard deviation.
    pub fn feature_std(&self) -> Vec<f64> {
        feature_std(&self.features)
    }

    /// Indices whose label differs from the clean label, if known.
    pub fn flipped(&self) -> Option<Vec<bool>> {
        let clean = self.provenance.clean_labels.as_ref()?;
        Some(self.labels.iter().zip(clean).map(|(a, b)| a != b).collect())
    }
}

pub fn feature_std(features: &[Vec<f64>]) -> Vec<f64> {
    let n = features.len() as f64;
    let d = features.first().map_or(0, Vec::len);
    (0..d)
        .map(|j| {
            let mean = features.iter().map(|r| r[j]).sum::<f64>() / n;
            (features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

/// Clean XOR label: quadrants I and III are class 0, II and IV class 1.
/// Zero counts as positive.
pub fn xor_label(x: f64, y: f64) -> usize {
    usize::from((x < 0.0) != (y < 0.0))
}

/// How label noise is placed on XOR data. Both models flip a `noise`
/// fraction of labels in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XorNoise {
    /// Every label flips independently with probability `noise`.
    #[default]
    Uniform,
    /// Labels flip with probability 1/2 inside a band around the class
    /// boundaries (the coordinate axes) and never outside it. The band
    /// half-width `w = 1 - sqrt(1 - 2*noise)` gives an overall flip rate of
    /// `noise`; requires `noise <= 0.5`.
    Boundary,
}

impl XorNoise {
    pub fn as_str(self) -> &'static str {
        match self {
            XorNoise::Uniform => "uniform",
            XorNoise::Boundary => "boundary",
        }
    }
}

impl std::str::FromStr for XorNoise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(XorNoise::Uniform),
            "boundary" => Ok(XorNoise::Boundary),
            other => Err(Error::InvalidArgument(format!(
                "unknown XOR noise model {other:?} (expected uniform or boundary)"
            ))),
        }
    }
}

/// Half-width of the mixed-label band for [`XorNoise::Boundary`].
pub fn boundary_band_width(noise: f64) -> f64 {
    1.0 - (1.0 - 2.0 * noise).max(0.0).sqrt()
}

/// `n` points uniform on `[-1, 1]^2`, XOR-labelled, each label flipped
/// independently with probability `noise`.
pub fn gen_xor(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    gen_xor_with(n, noise, XorNoise::Uniform, seed)
}

pub fn gen_xor_with(n: usize, noise: f64, model: XorNoise, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::InvalidArgument(format!("noise {noise} outside [0, 1]")));
    }
    if model == XorNoise::Boundary && noise > 0.5 {
        return Err(Error::InvalidArgument(format!(
            "boundary noise cannot exceed 0.5, got {noise}"
        )));
    }
    let band = boundary_band_width(noise);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(-1.0..=1.0);
        let y = rng.random_range(-1.0..=1.0);
        let label = xor_label(x, y);
        let flip_probability = match model {
            XorNoise::Uniform => noise,
            XorNoise::Boundary if x.abs().min(y.abs()) < band => 0.5,
            XorNoise::Boundary => 0.0,
        };
        let flip = rng.random_bool(flip_probability);
        features.push(vec![x, y]);
        clean.push(label);
        labels.push(if flip { 1 - label } else { label });
    }
    Ok(LabeledDataset {
        features,
        labels,
        num_classes: 2,
        provenance: Provenance {
            generator: format!("xor/{}", model.as_str()),
            seed: Some(seed),
            noise,
            clean_labels: Some(clean),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, resolution: usize, dim: usize) -> Self {
        Self {
            bounds: vec![(lo, hi); dim],
            resolution: vec![resolution; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() || self.bounds.len() != self.resolution.len() {
            return Err(Error::InvalidArgument(
                "grid needs one bound pair and one resolution per axis".into(),
            ));
        }
        for (axis, (&(lo, hi), &r)) in self.bounds.iter().zip(&self.resolution).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("axis {axis}: need finite min < max")));
            }
            if r < 2 {
                return Err(Error::InvalidArgument(format!("axis {axis}: resolution must be >= 2")));
            }
        }
        Ok(())
    }
}

/// Row-major lattice spanning the bounds inclusively; the last axis varies
/// fastest.
pub fn gen_grid(spec: &GridSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    let axes: Vec<Vec<f64>> = spec
        .bounds
        .iter()
        .zip(&spec.resolution)
        .map(|(&(lo, hi), &r)| {
            (0..r)
                .map(|i| {
                    if i + 1 == r {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (r - 1) as f64
                    }
                })
                .collect()
        })
        .collect();
    let total: usize = spec.resolution.iter().product();
    let mut rows = Vec::with_capacity(total);
    for mut idx in 0..total {
        let mut row = vec![0.0; axes.len()];
        for (axis, values) in axes.iter().enumerate().rev() {
            row[axis] = values[idx % values.len()];
            idx /= values.len();
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// i.i.d. `U[0, 1]`.
    Uniform,
    /// i.i.d. `N(0.5, 1)` clipped to `[0, 1]`.
    Gaussian,
}

/// Noise samples on `[0, 1]^d`, optionally remapped affinely to `[lo, hi]`.
pub fn gen_noise_ood(
    n: usize,
    kind: NoiseKind,
    dim: usize,
    seed: u64,
    remap: Option<(f64, f64)>,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("n and dim must be at least 1".into()));
    }
    if let Some((lo, hi)) = remap {
        if !(lo < hi) {
            return Err(Error::InvalidArgument("remap bounds need lo < hi".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::<f64>::new(0.5, 1.0).expect("unit variance");
    let rows = (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let v: f64 = match kind {
                        NoiseKind::Uniform => rng.random::<f64>(),
                        NoiseKind::Gaussian => normal.sample(&mut rng).clamp(0.0, 1.0),
                    };
                    remap.map_or(v, |(lo, hi)| lo + (hi - lo) * v)
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// Uniform samples on `[-outer, outer]^d` with the box `[-inner, inner]^d`
/// removed, by rejection.
pub fn gen_ring_ood(n: usize, dim: usize, inner: f64, outer: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 || dim == 0 {
        return Err(Error::InvalidArgument("n and dim must be at least 1".into()));
    }
    if !(0.0 <= inner && inner < outer) {
        return Err(Error::InvalidArgument("need 0 <= inner < outer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let row: Vec<f64> = (0..dim).map(|_| rng.random_range(-outer..=outer)).collect();
        if row.iter().any(|v| v.abs() > inner) {
            rows.push(row);
        }
    }
    Ok(rows)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?)
}

fn check_feature_header(path: &Path, names: &[&str]) -> Result<()> {
    for (i, name) in names.iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(Error::MissingHeader {
                path: path.to_path_buf(),
                reason: format!("column {} is {name:?}, expected \"x{}\"", i + 1, i + 1),
            });
        }
    }
    Ok(())
}

fn parse_cell(path: &Path, line: u64, column: usize, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumeric {
            path: path.to_path_buf(),
            line,
            column,
            value: value.to_string(),
        })
}

/// Reads a dataset CSV with header `x1,...,xd,label`.
///
/// When `num_classes` is `None` it is inferred as `max(label) + 1` (at
/// least 2).
pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 2 || names.last() != Some(&"label") {
        return Err(Error::MissingHeader {
            path: path.to_path_buf(),
            reason: "expected x1,...,xd,label".into(),
        });
    }
    let d = names.len() - 1;
    check_feature_header(path, &names[..d])?;

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + 1 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: d + 1,
                found: record.len(),
            });
        }
        let row = (0..d)
            .map(|j| parse_cell(path, line, j + 1, &record[j]))
            .collect::<Result<Vec<_>>>()?;
        let label_text = &record[d];
        let label = label_text.parse::<usize>().map_err(|_| {
            if label_text.parse::<i64>().is_ok() {
                Error::LabelOutOfRange {
                    path: path.to_path_buf(),
                    line,
                    label: label_text.to_string(),
                    num_classes: num_classes.unwrap_or(0),
                }
            } else {
                Error::NonNumeric {
                    path: path.to_path_buf(),
                    line,
                    column: d + 1,
                    value: label_text.to_string(),
                }
            }
        })?;
        features.push(row);
        raw_labels.push((line, label));
    }
    if features.is_empty() {
        return Err(Error::Empty(format!("{}: no data rows", path.display())));
    }
    let m = num_classes.unwrap_or_else(|| raw_labels.iter().map(|&(_, l)| l + 1).max().unwrap_or(2).max(2));
    if let Some(&(line, label)) = raw_labels.iter().find(|&&(_, l)| l >= m) {
        return Err(Error::LabelOutOfRange {
            path: path.to_path_buf(),
            line,
            label: label.to_string(),
            num_classes: m,
        });
    }
    let labels = raw_labels.into_iter().map(|(_, l)| l).collect();
    let mut ds = LabeledDataset::new(features, labels, m)?;
    ds.provenance.generator = format!("csv:{}", path.display());
    Ok(ds)
}

/// Reads only the feature columns. Accepts headers `x1,...,xd` and
/// `x1,...,xd,label`; a label column is ignored.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    let d = if names.last() == Some(&"label") {
        names.len() - 1
    } else {
        names.len()
    };
    if d == 0 {
        return Err(Error::MissingHeader {
            path: path.to_path_buf(),
            reason: "expected x1,...,xd".into(),
        });
    }
    check_feature_header(path, &names[..d])?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                line,
                expected: names.len(),
                found: record.len(),
            });
        }
        rows.push(
            (0..d)
                .map(|j| parse_cell(path, line, j + 1, &record[j]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn feature_header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).collect()
}

/// Writes `x1,...,xd,label`. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_dataset_csv<W: Write>(dataset: &LabeledDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = feature_header(dataset.dim());
    header.push("label".into());
    w.write_record(&header)?;
    for (row, label) in dataset.features.iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_features_csv<W: Write>(rows: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header(rows.first().map_or(0, Vec::len)))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset_csv(dataset, File::create(path)?)
}
