//! Univariate series, labelled datasets, UCR-format ingestion and synthetic
//! generators.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Population standard deviations below this are treated as a constant series.
pub const STD_FLOOR: f64 = 1e-12;

/// A univariate series with an optional dense class index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries<S> {
    pub values: Vec<S>,
    pub label: Option<usize>,
}

impl<S: Scalar> TimeSeries<S> {
    pub fn new(values: Vec<S>, label: Option<usize>) -> Result<Self> {
        let series = Self { values, label };
        series.validate()?;
        Ok(series)
    }

    pub fn unlabeled(values: Vec<S>) -> Result<Self> {
        Self::new(values, None)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::data(format!(
                "series needs at least 2 points, got {}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "series value at index {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// Z-normalises one series (population standard deviation). A constant series
/// maps to all zeros.
pub fn znormalize<S: Scalar>(series: &TimeSeries<S>) -> TimeSeries<S> {
    let n = S::lit(series.values.len() as f64);
    let mean = series.values.iter().copied().sum::<S>() / n;
    let var = series
        .values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<S>()
        / n;
    let std = var.sqrt();
    let values = if std < S::lit(STD_FLOOR) {
        vec![S::zero(); series.values.len()]
    } else {
        series.values.iter().map(|&v| (v - mean) / std).collect()
    };
    TimeSeries {
        values,
        label: series.label,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A collection of equal-length series with dense labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub name: String,
    pub split: Split,
    pub num_classes: usize,
    pub samples: Vec<TimeSeries<S>>,
    /// Original label text for each dense class index.
    pub label_names: Vec<String>,
}

impl<S: Scalar> Dataset<S> {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        num_classes: usize,
        samples: Vec<TimeSeries<S>>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            split,
            num_classes,
            samples,
            label_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Shared series length; zero for an empty dataset.
    pub fn series_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::data(format!("dataset '{}' is empty", self.name)));
        }
        if self.label_names.len() != self.num_classes {
            return Err(Error::data(format!(
                "dataset '{}' has {} label names for {} classes",
                self.name,
                self.label_names.len(),
                self.num_classes
            )));
        }
        let t = self.series_len();
        for (i, s) in self.samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
            if s.len() != t {
                return Err(Error::data(format!(
                    "sample {i} has length {} but sample 0 has length {t}",
                    s.len()
                )));
            }
            match s.label {
                Some(l) if l >= self.num_classes => {
                    return Err(Error::data(format!(
                        "sample {i} label {l} outside [0, {})",
                        self.num_classes
                    )))
                }
                None => return Err(Error::data(format!("sample {i} has no label"))),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn znormalized(&self) -> Self {
        Self {
            samples: self.samples.iter().map(znormalize).collect(),
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            if let Some(l) = s.label {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            split: self.split,
            num_classes: self.num_classes,
            series_length: self.series_len(),
            num_samples: self.len(),
            class_counts: self.class_counts(),
            label_mapping: self.label_names.clone(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Dataset<T> {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            num_classes: self.num_classes,
            label_names: self.label_names.clone(),
            samples: self
                .samples
                .iter()
                .map(|s| TimeSeries {
                    values: s.values.iter().map(|v| T::lit(v.as_f64())).collect(),
                    label: s.label,
                })
                .collect(),
        }
    }

    /// Renders the dataset in UCR TSV form using the original label text.
    pub fn to_ucr_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            let label = s.label.map(|l| self.label_names[l].as_str()).unwrap_or("");
            out.push_str(label);
            for v in &s.values {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_ucr_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_ucr_tsv())?;
        Ok(())
    }
}

/// Machine-readable summary of a dataset, emitted alongside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub num_classes: usize,
    pub series_length: usize,
    pub num_samples: usize,
    pub class_counts: Vec<usize>,
    pub label_mapping: Vec<String>,
}

// ---------------------------------------------------------------------------
// UCR TSV

struct RawRow<S> {
    label: String,
    values: Vec<S>,
}

fn parse_rows<S: Scalar>(text: &str) -> Result<Vec<RawRow<S>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (r, line) in text.lines().enumerate() {
        let row = r + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields.next().unwrap_or("").trim().to_string();
        if label.is_empty() {
            return Err(Error::Parse {
                row,
                column: 1,
                message: "missing class label".into(),
            });
        }
        let mut values = Vec::new();
        for (c, field) in fields.enumerate() {
            let column = c + 2;
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                column,
                message: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column,
                    message: format!("'{field}' is missing or non-finite"),
                });
            }
            values.push(S::lit(v));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::data(format!(
                    "row {row} has {} values but earlier rows have {w}",
                    values.len()
                )))
            }
            _ => {}
        }
        rows.push(RawRow { label, values });
    }
    if rows.is_empty() {
        return Err(Error::data("no rows in UCR file"));
    }
    Ok(rows)
}

/// Sorted distinct labels: numerically when every label parses as a number,
/// lexicographically otherwise.
fn label_order(labels: impl Iterator<Item = String>) -> Vec<String> {
    let distinct: BTreeSet<String> = labels.collect();
    let mut out: Vec<String> = distinct.into_iter().collect();
    if out.iter().all(|l| l.parse::<f64>().is_ok()) {
        out.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    out
}

fn name_and_split(path: &Path) -> (String, Split) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let upper = stem.to_ascii_uppercase();
    if let Some(base) = upper.strip_suffix("_TEST") {
        (stem[..base.len()].to_string(), Split::Test)
    } else if let Some(base) = upper.strip_suffix("_TRAIN") {
        (stem[..base.len()].to_string(), Split::Train)
    } else {
        (stem, Split::Train)
    }
}

/// Parses UCR TSV text: one series per row, the class label first, then the
/// values, tab separated. Labels are remapped to dense indices.
pub fn parse_ucr_tsv<S: Scalar>(text: &str, name: &str, split: Split) -> Result<Dataset<S>> {
    let rows = parse_rows::<S>(text)?;
    let labels = label_order(rows.iter().map(|r| r.label.clone()));
    build_dataset(rows, name, split, labels)
}

/// Like [`parse_ucr_tsv`] but reuses an existing label mapping, so a test
/// split lines up with its training split.
pub fn parse_ucr_tsv_with_labels<S: Scalar>(
    text: &str,
    name: &str,
    split: Split,
    labels: &[String],
) -> Result<Dataset<S>> {
    let rows = parse_rows::<S>(text)?;
    build_dataset(rows, name, split, labels.to_vec())
}

fn build_dataset<S: Scalar>(
    rows: Vec<RawRow<S>>,
    name: &str,
    split: Split,
    labels: Vec<String>,
) -> Result<Dataset<S>> {
    let mut samples = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let idx = labels.iter().position(|l| *l == row.label).ok_or_else(|| {
            Error::data(format!(
                "row {}: label '{}' not in mapping {labels:?}",
                i + 1,
                row.label
            ))
        })?;
        samples.push(TimeSeries {
            values: row.values,
            label: Some(idx),
        });
    }
    let num_classes = labels.len();
    Dataset::new(name, split, num_classes, samples, labels)
}

pub fn load_ucr_tsv<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let (name, split) = name_and_split(path);
    parse_ucr_tsv(&text, &name, split)
}

pub fn load_ucr_tsv_with_labels<S: Scalar>(
    path: impl AsRef<Path>,
    labels: &[String],
) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let (name, split) = name_and_split(path);
    parse_ucr_tsv_with_labels(&text, &name, split, labels)
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Families of generated datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SyntheticKind {
    /// Two classes: a two-period sine and the square wave with the same zero crossings.
    SineVsSquare,
    /// One Gaussian bump per series; the class fixes both its centre and its
    /// width (class `k` has standard deviation `0.015 (k + 1) T`).
    ShiftedGaussianBumps { classes: usize },
    /// Cylinder / bell / funnel shapes with random onset, duration and
    /// amplitude. Unlike the other kinds this is random even without noise.
    CylinderBellFunnel,
}

impl SyntheticKind {
    pub fn num_classes(self) -> usize {
        match self {
            SyntheticKind::SineVsSquare => 2,
            SyntheticKind::ShiftedGaussianBumps { classes } => classes,
            SyntheticKind::CylinderBellFunnel => 3,
        }
    }

    fn name(self) -> String {
        match self {
            SyntheticKind::SineVsSquare => "sine-vs-square".into(),
            SyntheticKind::ShiftedGaussianBumps { classes } => format!("bumps-{classes}"),
            SyntheticKind::CylinderBellFunnel => "cbf".into(),
        }
    }
}

fn template(kind: SyntheticKind, class: usize, len: usize) -> Vec<f64> {
    let t = |i: usize| i as f64 / len as f64;
    match kind {
        SyntheticKind::SineVsSquare => (0..len)
            .map(|i| {
                let s = (2.0 * PI * 2.0 * t(i)).sin();
                match class {
                    0 => s,
                    _ if s >= 0.0 => 1.0,
                    _ => -1.0,
                }
            })
            .collect(),
        SyntheticKind::ShiftedGaussianBumps { classes } => {
            let centre = (class as f64 + 1.0) / (classes as f64 + 1.0);
            let sigma = 0.015 * (class as f64 + 1.0);
            (0..len)
                .map(|i| (-0.5 * ((t(i) - centre) / sigma).powi(2)).exp())
                .collect()
        }
        SyntheticKind::CylinderBellFunnel => unreachable!("cbf has no fixed template"),
    }
}

fn cbf_series(class: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Onset and duration scale with the length (a in [L/8, L/4], b - a in [L/4, 3L/4]).
    let l = len as f64;
    let a = rng.gen_range(l / 8.0..=l / 4.0);
    let b = a + rng.gen_range(l / 4.0..=3.0 * l / 4.0);
    let eta: f64 = Normal::new(0.0, 1.0).unwrap().sample(rng);
    let amp = 6.0 + eta;
    (0..len)
        .map(|i| {
            let x = i as f64;
            if x < a || x > b {
                return 0.0;
            }
            match class {
                0 => amp,
                1 => amp * (x - a) / (b - a),
                _ => amp * (b - x) / (b - a),
            }
        })
        .collect()
}

/// Generates `n_per_class` series per class of length `length`, with i.i.d.
/// Gaussian noise of standard deviation `noise_std`. Pure in its arguments.
pub fn make_synthetic<S: Scalar>(
    kind: SyntheticKind,
    n_per_class: usize,
    length: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset<S>> {
    if n_per_class == 0 || length < 2 || !(noise_std >= 0.0) {
        return Err(Error::config(format!(
            "synthetic data needs n_per_class > 0, length >= 2, noise_std >= 0 (got {n_per_class}, {length}, {noise_std})"
        )));
    }
    let classes = kind.num_classes();
    if classes < 2 {
        return Err(Error::config("synthetic data needs at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut samples = Vec::with_capacity(classes * n_per_class);
    for class in 0..classes {
        let fixed =
            (kind != SyntheticKind::CylinderBellFunnel).then(|| template(kind, class, length));
        for _ in 0..n_per_class {
            let base = match &fixed {
                Some(t) => t.clone(),
                None => cbf_series(class, length, &mut rng),
            };
            let values = base
                .into_iter()
                .map(|v| {
                    let e = if noise_std > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    S::lit(v + e)
                })
                .collect();
            samples.push(TimeSeries {
                values,
                label: Some(class),
            });
        }
    }
    Dataset::new(
        kind.name(),
        Split::Train,
        classes,
        samples,
        (0..classes).map(|c| c.to_string()).collect(),
    )
}

/// Deterministic shuffled split of a dataset into train and test parts.
pub fn train_test_split<S: Scalar>(
    ds: &Dataset<S>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<S>, Dataset<S>)> {
    use rand::seq::SliceRandom;
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config(format!(
            "test fraction {test_fraction} outside [0, 1)"
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((ds.len() as f64) * test_fraction).round() as usize;
    let pick = |ids: &[usize], split| Dataset {
        split,
        samples: ids.iter().map(|&i| ds.samples[i].clone()).collect(),
        ..ds.clone()
    };
    let test = pick(&idx[..n_test], Split::Test);
    let train = pick(&idx[n_test..], Split::Train);
    train.validate()?;
    test.validate()?;
    Ok((train, test))
}
