use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind, AttackOutcome};
use crate::error::{Error, Result};

/// Anything that carries a success flag and a perturbation size.
pub trait Scored {
    fn success(&self) -> bool;
    fn euclidean_distance(&self) -> f64;
}

impl<S> Scored for AttackOutcome<S> {
    fn success(&self) -> bool {
        self.success
    }
    fn euclidean_distance(&self) -> f64 {
        self.euclidean_distance
    }
}

impl Scored for OutcomeRow {
    fn success(&self) -> bool {
        self.success
    }
    fn euclidean_distance(&self) -> f64 {
        self.euclidean_distance
    }
}

/// Fraction of attacked samples whose prediction changed.
pub fn compute_asr<T: Scored>(outcomes: &[T]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Metric(
            "attack success rate of an empty outcome set".into(),
        ));
    }
    let hits = outcomes.iter().filter(|o| o.success()).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// Mean Euclidean perturbation size over the successful outcomes; `None`
/// when nothing succeeded.
pub fn compute_average_distance<T: Scored>(outcomes: &[T]) -> Option<f64> {
    let dists: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success())
        .map(|o| o.euclidean_distance())
        .collect();
    if dists.is_empty() {
        None
    } else {
        Some(dists.iter().sum::<f64>() / dists.len() as f64)
    }
}

/// One attacked sample, as written to the per-sample CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OutcomeRow {
    pub dataset: String,
    pub attack: AttackKind,
    pub seed: u64,
    pub sample_index: usize,
    pub original_class: usize,
    pub final_class: usize,
    pub success: bool,
    pub euclidean_distance: f64,
    pub linf_distance: f64,
    pub kl_to_target: Option<f64>,
    pub kl_original_vs_perturbed: f64,
    pub iterations_used: usize,
}

impl OutcomeRow {
    pub fn from_outcome<S>(
        dataset: &str,
        seed: u64,
        sample_index: usize,
        o: &AttackOutcome<S>,
    ) -> Self {
        Self {
            dataset: dataset.to_string(),
            attack: o.kind,
            seed,
            sample_index,
            original_class: o.original_class,
            final_class: o.final_class,
            success: o.success,
            euclidean_distance: o.euclidean_distance,
            linf_distance: o.linf_distance,
            kl_to_target: o.kl_to_target,
            kl_original_vs_perturbed: o.kl_original_vs_perturbed,
            iterations_used: o.iterations_used,
        }
    }
}

/// A sample whose attack returned an error instead of an outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SampleError {
    pub sample_index: usize,
    pub message: String,
}

/// Results of one attack over one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MetricsReport {
    pub dataset: String,
    pub attack: AttackKind,
    /// Base seed the per-sample seeds were derived from.
    pub seed: u64,
    /// `None` when no sample was attacked.
    pub asr: Option<f64>,
    /// `None` when no attack succeeded.
    pub average_distance: Option<f64>,
    pub n_attacked: usize,
    pub n_success: usize,
    pub n_skipped: usize,
    pub n_errors: usize,
    pub config: AttackConfig,
    pub rows: Vec<OutcomeRow>,
    pub errors: Vec<SampleError>,
    /// Perturbed series, aligned with `rows`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbed: Vec<Vec<f64>>,
}

impl MetricsReport {
    /// Builds the summary fields from the rows.
    pub fn from_rows(
        dataset: &str,
        config: AttackConfig,
        seed: u64,
        rows: Vec<OutcomeRow>,
        n_skipped: usize,
        errors: Vec<SampleError>,
    ) -> Self {
        let n_success = rows.iter().filter(|r| r.success).count();
        Self {
            dataset: dataset.to_string(),
            attack: config.kind,
            seed,
            asr: compute_asr(&rows).ok(),
            average_distance: compute_average_distance(&rows),
            n_attacked: rows.len(),
            n_success,
            n_skipped,
            n_errors: errors.len(),
            config,
            rows,
            errors,
            perturbed: Vec::new(),
        }
    }

    /// Checks that the summary re-derives from the rows and that every row
    /// respects the perturbation budget.
    pub fn check_consistency(&self) -> Result<()> {
        let fail = |what: String| {
            Err(Error::Metric(format!(
                "{} on {}: {what}",
                self.attack, self.dataset
            )))
        };
        if self.n_attacked != self.rows.len() {
            return fail(format!(
                "n-attacked {} but {} rows",
                self.n_attacked,
                self.rows.len()
            ));
        }
        let successes = self.rows.iter().filter(|r| r.success).count();
        if successes != self.n_success {
            return fail(format!(
                "n-success {} but {successes} successful rows",
                self.n_success
            ));
        }
        if self.asr != compute_asr(&self.rows).ok() {
            return fail(format!("asr {:?} does not match rows", self.asr));
        }
        if self.average_distance != compute_average_distance(&self.rows) {
            return fail(format!(
                "average distance {:?} does not match rows",
                self.average_distance
            ));
        }
        let bound = self.config.epsilon + 1e-9;
        if let Some(r) = self.rows.iter().find(|r| !(r.linf_distance <= bound)) {
            return fail(format!(
                "sample {} has linf distance {} above {}",
                r.sample_index, r.linf_distance, self.config.epsilon
            ));
        }
        Ok(())
    }
}

/// One line of the cross-attack comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ComparisonRow {
    pub attack: AttackKind,
    pub asr: Option<f64>,
    pub average_distance: Option<f64>,
    pub n_attacked: usize,
    pub n_success: usize,
    pub n_skipped: usize,
}

impl From<&MetricsReport> for ComparisonRow {
    fn from(r: &MetricsReport) -> Self {
        Self {
            attack: r.attack,
            asr: r.asr,
            average_distance: r.average_distance,
            n_attacked: r.n_attacked,
            n_success: r.n_success,
            n_skipped: r.n_skipped,
        }
    }
}

/// Pools every sample of every report for each attack, in first-seen attack order.
pub fn aggregate_micro(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    group_by_attack(reports)
        .into_iter()
        .map(|(attack, group)| {
            let rows: Vec<&OutcomeRow> = group.iter().flat_map(|r| &r.rows).collect();
            let owned: Vec<OutcomeRow> = rows.into_iter().cloned().collect();
            ComparisonRow {
                attack,
                asr: compute_asr(&owned).ok(),
                average_distance: compute_average_distance(&owned),
                n_attacked: owned.len(),
                n_success: owned.iter().filter(|r| r.success).count(),
                n_skipped: group.iter().map(|r| r.n_skipped).sum(),
            }
        })
        .collect()
}

/// Averages the per-report ASR and distance for each attack; reports with an
/// undefined value are left out of that value's mean.
pub fn aggregate_macro(reports: &[MetricsReport]) -> Vec<ComparisonRow> {
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    group_by_attack(reports)
        .into_iter()
        .map(|(attack, group)| ComparisonRow {
            attack,
            asr: mean(group.iter().filter_map(|r| r.asr).collect()),
            average_distance: mean(group.iter().filter_map(|r| r.average_distance).collect()),
            n_attacked: group.iter().map(|r| r.n_attacked).sum(),
            n_success: group.iter().map(|r| r.n_success).sum(),
            n_skipped: group.iter().map(|r| r.n_skipped).sum(),
        })
        .collect()
}

fn group_by_attack(reports: &[MetricsReport]) -> Vec<(AttackKind, Vec<&MetricsReport>)> {
    let mut groups: Vec<(AttackKind, Vec<&MetricsReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(k, _)| *k == r.attack) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.attack, vec![r])),
        }
    }
    groups
}
