use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attack, derive_seed, AttackConfig};
use crate::classifier::ModelWeights;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::metrics::{ComparisonRow, MetricsReport, OutcomeRow, SampleError};
use crate::scalar::Scalar;

/// Which samples get attacked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleFilter {
    /// Only samples the clean model classifies correctly; the rest count as skipped.
    #[default]
    CorrectOnly,
    All,
}

impl FromStr for SampleFilter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "correct-only" => Ok(SampleFilter::CorrectOnly),
            "all" => Ok(SampleFilter::All),
            other => Err(Error::config(format!(
                "unknown sample filter '{other}', expected one of correct-only, all"
            ))),
        }
    }
}

impl fmt::Display for SampleFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleFilter::CorrectOnly => "correct-only",
            SampleFilter::All => "all",
        })
    }
}

/// Thread pool with `jobs` workers (`jobs >= 1`).
pub(crate) fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::config("jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Indices of the samples to attack, plus the number skipped.
pub fn select_samples<S: Scalar>(
    model: &ModelWeights<S>,
    dataset: &Dataset<S>,
    filter: SampleFilter,
) -> Result<(Vec<usize>, usize)> {
    if dataset.is_empty() {
        return Err(Error::data(format!("dataset '{}' is empty", dataset.name)));
    }
    let mut chosen = Vec::with_capacity(dataset.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let keep = match filter {
            SampleFilter::All => {
                model.predict(s)?;
                true
            }
            SampleFilter::CorrectOnly => {
                let label = s.label.ok_or_else(|| {
                    Error::data(format!("sample {i} has no label; use the 'all' filter"))
                })?;
                model.predict(s)? == label
            }
        };
        if keep {
            chosen.push(i);
        }
    }
    let skipped = dataset.len() - chosen.len();
    Ok((chosen, skipped))
}

/// Runs every attack over the selected samples of `dataset`.
///
/// Sample `i` is attacked with seed `derive_seed(base_seed, i)` whatever the
/// attack, and results are assembled in sample order, so reports do not
/// depend on `jobs`. Per-sample attack errors are recorded in the report.
pub fn run_benchmark<S: Scalar>(
    model: &ModelWeights<S>,
    dataset: &Dataset<S>,
    attacks: &[AttackConfig],
    base_seed: u64,
    filter: SampleFilter,
    jobs: usize,
) -> Result<Vec<MetricsReport>> {
    if attacks.is_empty() {
        return Err(Error::config("no attacks requested"));
    }
    for cfg in attacks {
        cfg.validate()?;
    }
    let (chosen, skipped) = select_samples(model, dataset, filter)?;
    let pool = pool(jobs)?;
    let work: Vec<(usize, usize)> = (0..attacks.len())
        .flat_map(|a| chosen.iter().map(move |&i| (a, i)))
        .collect();
    let results: Vec<_> = pool.install(|| {
        work.par_iter()
            .map(|&(a, i)| {
                let cfg = AttackConfig {
                    seed: derive_seed(base_seed, i as u64),
                    ..attacks[a].clone()
                };
                attack(model, &dataset.samples[i], &cfg)
            })
            .collect()
    });

    let mut results = results.into_iter();
    let mut reports = Vec::with_capacity(attacks.len());
    for cfg in attacks {
        let mut rows = Vec::new();
        let mut perturbed = Vec::new();
        let mut errors = Vec::new();
        for &i in &chosen {
            match results.next().expect("one result per work item") {
                Ok(o) => {
                    rows.push(OutcomeRow::from_outcome(&dataset.name, base_seed, i, &o));
                    perturbed.push(o.perturbed.values.iter().map(|v| v.as_f64()).collect());
                }
                Err(e) => errors.push(SampleError {
                    sample_index: i,
                    message: e.to_string(),
                }),
            }
        }
        let mut report =
            MetricsReport::from_rows(&dataset.name, cfg.clone(), base_seed, rows, skipped, errors);
        report.perturbed = perturbed;
        reports.push(report);
    }
    Ok(reports)
}

/// One comparison line per report.
pub fn comparison_rows(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    reports.iter().map(ComparisonRow::from).collect()
}
