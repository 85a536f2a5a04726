use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::classifier::ModelWeights;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::benchmark::{run_benchmark, SampleFilter};
use crate::scalar::Scalar;

/// Hyperparameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Gamma,
    Alpha,
}

impl FromStr for SweepParameter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gamma" => Ok(SweepParameter::Gamma),
            "alpha" => Ok(SweepParameter::Alpha),
            other => Err(Error::config(format!(
                "unknown sweep parameter '{other}', expected gamma or alpha"
            ))),
        }
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParameter::Gamma => "gamma",
            SweepParameter::Alpha => "alpha",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    /// Strictly increasing or strictly decreasing.
    pub values: Vec<f64>,
    pub base: AttackConfig,
    /// Base seeds; each value is benchmarked once per seed.
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    /// The base config with the swept parameter set to `value`.
    pub fn config_at(&self, value: f64) -> AttackConfig {
        let mut cfg = self.base.clone();
        match self.parameter {
            SweepParameter::Gamma => cfg.gamma = value,
            SweepParameter::Alpha => cfg.alpha = value,
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("sweep needs at least one seed"));
        }
        let up = self.values.windows(2).all(|w| w[0] < w[1]);
        let down = self.values.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(Error::config(format!(
                "sweep values must be strictly monotone, got {:?}",
                self.values
            )));
        }
        match self.parameter {
            SweepParameter::Gamma if !self.base.kind.is_swap() => {
                return Err(Error::config(format!(
                    "{} has no gamma to sweep",
                    self.base.kind
                )))
            }
            SweepParameter::Alpha if !self.base.kind.uses_alpha() => {
                return Err(Error::config(format!(
                    "{} has no alpha to sweep",
                    self.base.kind
                )))
            }
            _ => {}
        }
        for &v in &self.values {
            self.config_at(v).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub seed: u64,
    pub asr: Option<f64>,
    pub average_distance: Option<f64>,
    pub n_attacked: usize,
    pub n_success: usize,
}

/// Benchmarks every (value, seed) pair, values outer, in the order given.
pub fn run_sweep<S: Scalar>(
    model: &ModelWeights<S>,
    dataset: &Dataset<S>,
    spec: &SweepSpec,
    filter: SampleFilter,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.values.len() * spec.seeds.len());
    for &value in &spec.values {
        let cfg = spec.config_at(value);
        for &seed in &spec.seeds {
            let report = run_benchmark(
                model,
                dataset,
                std::slice::from_ref(&cfg),
                seed,
                filter,
                jobs,
            )?
            .pop()
            .expect("one report per attack");
            rows.push(SweepRow {
                parameter: spec.parameter,
                value,
                seed,
                asr: report.asr,
                average_distance: report.average_distance,
                n_attacked: report.n_attacked,
                n_success: report.n_success,
            });
        }
    }
    Ok(rows)
}

/// Mean over seeds for each swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepMean {
    pub value: f64,
    pub asr: Option<f64>,
    pub average_distance: Option<f64>,
}

pub fn sweep_means(rows: &[SweepRow]) -> Vec<SweepMean> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut values: Vec<f64> = Vec::new();
    for r in rows {
        if !values.contains(&r.value) {
            values.push(r.value);
        }
    }
    values
        .into_iter()
        .map(|value| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value).collect();
            SweepMean {
                value,
                asr: mean(at.iter().filter_map(|r| r.asr).collect()),
                average_distance: mean(at.iter().filter_map(|r| r.average_distance).collect()),
            }
        })
        .collect()
}
