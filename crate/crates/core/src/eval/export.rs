use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::metrics::{ComparisonRow, MetricsReport, OutcomeRow};
use crate::eval::svg;
use crate::eval::sweep::{SweepMean, SweepRow};
use crate::scalar::Scalar;

/// Overlay plots written per report by [`export_results`].
pub const MAX_OVERLAYS_PER_REPORT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    SvgPlot,
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "svg" | "svg-plot" => Ok(ExportFormat::SvgPlot),
            other => Err(Error::config(format!(
                "unknown export format '{other}', expected csv, json or svg-plot"
            ))),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
            ExportFormat::SvgPlot => "svg-plot",
        })
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn from_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

fn check_all(reports: &[MetricsReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Metric("nothing to export".into()));
    }
    reports
        .iter()
        .try_for_each(MetricsReport::check_consistency)
}

/// Per-sample rows of every report, after checking each report's consistency.
pub fn outcomes_csv(reports: &[MetricsReport]) -> Result<String> {
    check_all(reports)?;
    let rows: Vec<&OutcomeRow> = reports.iter().flat_map(|r| &r.rows).collect();
    if rows.is_empty() {
        // Keep the header so the file still parses.
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(OUTCOME_COLUMNS)?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        return Ok(String::from_utf8(bytes).expect("csv output is utf-8"));
    }
    to_csv(&rows)
}

const OUTCOME_COLUMNS: [&str; 12] = [
    "dataset",
    "attack",
    "seed",
    "sample-index",
    "original-class",
    "final-class",
    "success",
    "euclidean-distance",
    "linf-distance",
    "kl-to-target",
    "kl-original-vs-perturbed",
    "iterations-used",
];

pub fn parse_outcomes_csv(text: &str) -> Result<Vec<OutcomeRow>> {
    from_csv(text)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Metric("empty comparison table".into()));
    }
    to_csv(rows)
}

pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    from_csv(text)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Metric("empty sweep table".into()));
    }
    to_csv(rows)
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    from_csv(text)
}

pub fn sweep_means_csv(means: &[SweepMean]) -> Result<String> {
    if means.is_empty() {
        return Err(Error::Metric("empty sweep table".into()));
    }
    to_csv(means)
}

pub fn reports_json(reports: &[MetricsReport]) -> Result<String> {
    check_all(reports)?;
    Ok(serde_json::to_string_pretty(reports)?)
}

/// ASR against average distance, one point per report.
pub fn scatter_svg(reports: &[MetricsReport]) -> String {
    let points: Vec<(String, f64, f64)> = reports
        .iter()
        .filter_map(|r| Some((r.attack.to_string(), r.average_distance?, r.asr?)))
        .collect();
    svg::scatter(
        "Attack success against perturbation size",
        "average distance",
        "ASR",
        &points,
    )
}

/// ASR and average distance against the swept value, one line per seed.
pub fn sweep_svgs(rows: &[SweepRow]) -> (String, String) {
    let mut seeds: Vec<u64> = Vec::new();
    for r in rows {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    let param = rows
        .first()
        .map(|r| r.parameter.to_string())
        .unwrap_or_default();
    let series = |pick: fn(&SweepRow) -> Option<f64>| -> Vec<(String, Vec<(f64, f64)>)> {
        seeds
            .iter()
            .map(|&s| {
                let pts = rows
                    .iter()
                    .filter(|r| r.seed == s)
                    .map(|r| (r.value, pick(r).unwrap_or(f64::NAN)))
                    .collect();
                (format!("seed {s}"), pts)
            })
            .collect()
    };
    (
        svg::line_plot(
            &format!("ASR over {param}"),
            &param,
            "ASR",
            &series(|r| r.asr),
        ),
        svg::line_plot(
            &format!("Average distance over {param}"),
            &param,
            "average distance",
            &series(|r| r.average_distance),
        ),
    )
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    written.push(path);
    Ok(())
}

fn file_stem(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `reports` into `dir` in the requested format and returns the paths.
///
/// CSV gives `outcomes.csv` and `comparison.csv`; JSON gives `reports.json`;
/// SVG gives `scatter.svg` plus, when the attacked dataset is supplied, a few
/// original-vs-perturbed overlays of successful samples per report.
pub fn export_results<S: Scalar>(
    reports: &[MetricsReport],
    format: ExportFormat,
    dir: impl AsRef<Path>,
    dataset: Option<&Dataset<S>>,
) -> Result<Vec<PathBuf>> {
    check_all(reports)?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        ExportFormat::Csv => {
            write(dir, "outcomes.csv", &outcomes_csv(reports)?, &mut written)?;
            let table: Vec<ComparisonRow> = reports.iter().map(ComparisonRow::from).collect();
            write(
                dir,
                "comparison.csv",
                &comparison_csv(&table)?,
                &mut written,
            )?;
        }
        ExportFormat::Json => write(dir, "reports.json", &reports_json(reports)?, &mut written)?,
        ExportFormat::SvgPlot => {
            write(dir, "scatter.svg", &scatter_svg(reports), &mut written)?;
            if let Some(ds) = dataset {
                for r in reports {
                    let picked = r
                        .rows
                        .iter()
                        .zip(&r.perturbed)
                        .filter(|(row, _)| row.success)
                        .take(MAX_OVERLAYS_PER_REPORT);
                    for (row, perturbed) in picked {
                        let original: Vec<f64> = ds
                            .samples
                            .get(row.sample_index)
                            .ok_or_else(|| {
                                Error::data(format!("sample {} not in dataset", row.sample_index))
                            })?
                            .values
                            .iter()
                            .map(|v| v.as_f64())
                            .collect();
                        let title = format!(
                            "{} on {} #{}: class {} to {}",
                            r.attack,
                            r.dataset,
                            row.sample_index,
                            row.original_class,
                            row.final_class
                        );
                        let name = format!(
                            "overlay-{}-{}-{}.svg",
                            file_stem(&r.dataset),
                            r.attack,
                            row.sample_index
                        );
                        write(
                            dir,
                            &name,
                            &svg::overlay(&title, &original, perturbed),
                            &mut written,
                        )?;
                    }
                }
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{AttackConfig, AttackKind};

    fn row(i: usize, success: bool, dist: f64) -> OutcomeRow {
        OutcomeRow {
            dataset: "toy".into(),
            attack: AttackKind::SwapL2,
            seed: 3,
            sample_index: i,
            original_class: 1,
            final_class: if success { 0 } else { 1 },
            success,
            euclidean_distance: dist,
            linf_distance: 0.1,
            kl_to_target: if success { Some(1.0 / 3.0) } else { None },
            kl_original_vs_perturbed: std::f64::consts::PI * 1e-7,
            iterations_used: 1000,
        }
    }

    fn report() -> MetricsReport {
        let rows = vec![
            row(0, true, 0.123456789012345678),
            row(2, false, 0.5),
            row(5, true, 1e-17),
        ];
        MetricsReport::from_rows(
            "toy",
            AttackConfig::defaults_for(AttackKind::SwapL2),
            3,
            rows,
            1,
            vec![],
        )
    }

    #[test]
    fn outcomes_csv_has_fixed_header_and_round_trips() {
        let r = report();
        let text = outcomes_csv(&[r.clone()]).unwrap();
        assert_eq!(text.lines().next().unwrap(), OUTCOME_COLUMNS.join(","));
        let back = parse_outcomes_csv(&text).unwrap();
        assert_eq!(back, r.rows);
        let asr = back.iter().filter(|r| r.success).count() as f64 / back.len() as f64;
        assert_eq!(Some(asr), r.asr);
    }

    #[test]
    fn empty_report_keeps_header() {
        let r = MetricsReport::from_rows("toy", AttackConfig::default(), 0, vec![], 4, vec![]);
        let text = outcomes_csv(&[r]).unwrap();
        assert_eq!(text.trim_end(), OUTCOME_COLUMNS.join(","));
        assert!(parse_outcomes_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn comparison_csv_round_trips() {
        let r = report();
        let table = vec![ComparisonRow::from(&r)];
        let text = comparison_csv(&table).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "attack,asr,average-distance,n-attacked,n-success,n-skipped"
        );
        assert_eq!(parse_comparison_csv(&text).unwrap(), table);
    }

    #[test]
    fn reports_json_round_trips_bit_exact() {
        let mut r = report();
        r.rows[1].kl_original_vs_perturbed = 2.4914284930572533e-8;
        r.rows[2].linf_distance = 0.10000000000000007;
        let back: Vec<MetricsReport> =
            serde_json::from_str(&reports_json(&[r.clone()]).unwrap()).unwrap();
        assert_eq!(back, vec![r]);
    }

    #[test]
    fn inconsistent_reports_are_not_exported() {
        let mut r = report();
        r.n_success = 0;
        assert!(outcomes_csv(&[r.clone()]).is_err());
        assert!(reports_json(&[r]).is_err());
        assert!(outcomes_csv(&[]).is_err());
    }

    #[test]
    fn export_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let ds: Dataset<f64> =
            crate::data::make_synthetic(crate::data::SyntheticKind::SineVsSquare, 3, 8, 0.0, 0)
                .unwrap();
        let mut with_series = r.clone();
        with_series.perturbed = vec![vec![0.0; 8]; 3];
        let mut all = Vec::new();
        for f in [ExportFormat::Csv, ExportFormat::Json, ExportFormat::SvgPlot] {
            all.extend(export_results(&[with_series.clone()], f, dir.path(), Some(&ds)).unwrap());
        }
        let names: Vec<String> = all
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"overlay-toy-swap-l2-0.svg".to_string()));
        assert_eq!(names.len(), 2 + 1 + 1 + 2);
        for p in all.iter().filter(|p| p.extension().unwrap() == "svg") {
            roxmltree::Document::parse(&fs::read_to_string(p).unwrap()).unwrap();
        }
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("reports.json")).unwrap())
                .unwrap();
        assert_eq!(json[0]["attack"], "swap-l2");
        assert_eq!(json[0]["n-success"], 2);
    }

    #[test]
    fn unwritable_path_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        fs::write(&file, "x").unwrap();
        let err = export_results::<f64>(&[report()], ExportFormat::Csv, file.join("sub"), None)
            .unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn format_names() {
        assert_eq!(
            "svg".parse::<ExportFormat>().unwrap(),
            ExportFormat::SvgPlot
        );
        assert!("png".parse::<ExportFormat>().is_err());
    }
}
