//! Run settings: an optional config file (TOML key-value or a previous
//! `manifest.json`) with command-line flags layered on top.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tsattack::attacks::{AttackConfig, AttackKind, AttackOverrides};
use tsattack::data::SyntheticKind;
use tsattack::eval::{SampleFilter, SweepParameter};

/// Bad command-line input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Keys of [`AttackOverrides`], kept flat in config files and manifests.
const ATTACK_PARAM_KEYS: [&str; 12] = [
    "beta",
    "epsilon",
    "iterations",
    "gamma",
    "alpha",
    "mu",
    "tv-weight",
    "clip-schedule",
    "early-stop",
    "gm-mode",
    "norm",
    "noise-init",
];

/// Reads a config file into a flat key map. A JSON file written as a run
/// manifest contributes its `config` object, and must come from `command`.
pub fn load_config_file(path: &Path, command: &str) -> Result<Map<String, Value>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: Value = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        serde_json::to_value(table)?
    };
    let Value::Object(mut map) = value else {
        return Err(usage(format!(
            "config {} is not a key-value table",
            path.display()
        )));
    };
    if let Some(Value::String(cmd)) = map.get("command") {
        if cmd != command {
            return Err(usage(format!(
                "{} is a manifest of a '{cmd}' run, not '{command}'",
                path.display()
            )));
        }
        map = match map.remove("config") {
            Some(Value::Object(inner)) => inner,
            _ => {
                return Err(usage(format!(
                    "manifest {} has no config object",
                    path.display()
                )))
            }
        };
    }
    map.remove("resolved-attacks");
    Ok(map)
}

/// File settings, then flags. Flags win.
pub fn merge(file: Option<Map<String, Value>>, flags: Map<String, Value>) -> Map<String, Value> {
    let mut out = file.unwrap_or_default();
    out.extend(flags);
    out
}

/// Collects flag values that were given; unset options are left out.
#[derive(Default)]
pub struct FlagMap(Map<String, Value>);

impl FlagMap {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(
                key.to_string(),
                serde_json::to_value(v).expect("flag values serialize"),
            );
        }
        self
    }

    pub fn switch(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.0.insert(key.to_string(), Value::Bool(true));
        }
        self
    }

    pub fn into_map(self) -> Map<String, Value> {
        self.0
    }
}

fn from_map<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T> {
    serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("invalid settings: {e}")))
}

/// Separates the attack hyperparameters from the run-level keys.
fn split_params(mut map: Map<String, Value>) -> Result<(Map<String, Value>, AttackOverrides)> {
    let mut params = Map::new();
    for key in ATTACK_PARAM_KEYS {
        if let Some(v) = map.remove(key) {
            params.insert(key.to_string(), v);
        }
    }
    let overrides = from_map(params)?;
    Ok((map, overrides))
}

fn join_params<T: Serialize>(run: &T, params: &AttackOverrides) -> Value {
    let mut map = match serde_json::to_value(run).expect("settings serialize") {
        Value::Object(m) => m,
        _ => unreachable!("settings are structs"),
    };
    if let Value::Object(p) = serde_json::to_value(params).expect("overrides serialize") {
        map.extend(p);
    }
    Value::Object(map)
}

fn default_true() -> bool {
    true
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSettings {
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default = "TrainSettings::default_blocks")]
    pub blocks: String,
    #[serde(default = "TrainSettings::default_epochs")]
    pub epochs: usize,
    #[serde(default = "TrainSettings::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainSettings::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub normalize: bool,
}

impl TrainSettings {
    pub const DEFAULT_BLOCKS: &'static str = "16:7,16:5";

    fn default_blocks() -> String {
        Self::DEFAULT_BLOCKS.into()
    }
    fn default_epochs() -> usize {
        tsattack::classifier::TrainConfig::default().epochs
    }
    fn default_batch_size() -> usize {
        tsattack::classifier::TrainConfig::default().batch_size
    }
    fn default_learning_rate() -> f64 {
        tsattack::classifier::TrainConfig::default().learning_rate
    }

    pub fn resolve(map: Map<String, Value>) -> Result<Self> {
        from_map(map)
    }

    /// `channels:width` pairs, comma separated.
    pub fn conv_blocks(&self) -> Result<Vec<tsattack::classifier::ConvBlock>> {
        self.blocks
            .split(',')
            .map(|b| {
                let (c, w) = b
                    .trim()
                    .split_once(':')
                    .ok_or_else(|| usage(format!("conv block '{b}' is not channels:width")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| usage(format!("bad conv block '{b}'")))
                };
                Ok(tsattack::classifier::ConvBlock {
                    channels: parse(c)?,
                    width: parse(w)?,
                })
            })
            .collect()
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}

/// Attack names: one name, a comma-separated list, or `all`.
pub fn parse_attack_list(text: &str) -> Result<Vec<AttackKind>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(AttackKind::ALL.to_vec());
    }
    let kinds = text
        .split(',')
        .map(|s| s.parse::<AttackKind>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(usage("no attack named"));
    }
    Ok(kinds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AttackRun {
    pub weights: PathBuf,
    pub dataset: PathBuf,
    #[serde(default = "AttackRun::default_attack")]
    pub attack: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub filter: SampleFilter,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub svg: bool,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl AttackRun {
    fn default_attack() -> String {
        "swap".into()
    }
}

pub struct AttackSettings {
    pub run: AttackRun,
    pub params: AttackOverrides,
    pub attacks: Vec<AttackConfig>,
}

impl AttackSettings {
    pub fn resolve(map: Map<String, Value>) -> Result<Self> {
        let (run_map, params) = split_params(map)?;
        let run: AttackRun = from_map(run_map)?;
        let attacks = parse_attack_list(&run.attack)?
            .into_iter()
            .map(|k| params.apply(k).map_err(|e| usage(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            run,
            params,
            attacks,
        })
    }

    /// Flat settings plus the fully resolved per-attack configs.
    pub fn echo(&self) -> Value {
        let mut v = join_params(&self.run, &self.params);
        v["resolved-attacks"] = serde_json::to_value(&self.attacks).expect("configs serialize");
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SweepRun {
    pub weights: PathBuf,
    pub dataset: PathBuf,
    pub param: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default = "SweepRun::default_seeds")]
    pub seeds: Vec<u64>,
    /// Defaults to swap for gamma and swap-l2 for alpha.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackKind>,
    #[serde(default)]
    pub filter: SampleFilter,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl SweepRun {
    fn default_seeds() -> Vec<u64> {
        vec![0]
    }
}

pub struct SweepSettings {
    pub run: SweepRun,
    pub params: AttackOverrides,
    pub base: AttackConfig,
}

impl SweepSettings {
    pub fn resolve(map: Map<String, Value>) -> Result<Self> {
        let (run_map, params) = split_params(map)?;
        let run: SweepRun = from_map(run_map)?;
        if run.values.is_empty() {
            return Err(usage("--values needs at least one value"));
        }
        if run.seeds.is_empty() {
            return Err(usage("--seeds needs at least one seed"));
        }
        let kind = run.attack.unwrap_or(match run.param {
            SweepParameter::Gamma => AttackKind::Swap,
            SweepParameter::Alpha => AttackKind::SwapL2,
        });
        let base = params.apply(kind).map_err(|e| usage(e.to_string()))?;
        Ok(Self { run, params, base })
    }

    pub fn echo(&self) -> Value {
        let mut v = join_params(&self.run, &self.params);
        v["resolved-attacks"] = serde_json::to_value([&self.base]).expect("configs serialize");
        v
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthSettings {
    /// `sine-vs-square`, `bumps` or `cbf`.
    #[serde(default = "SynthSettings::default_kind")]
    pub kind: String,
    /// Class count for `bumps`.
    #[serde(default = "SynthSettings::default_classes")]
    pub classes: usize,
    #[serde(default = "SynthSettings::default_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "SynthSettings::default_length")]
    pub length: usize,
    #[serde(default = "SynthSettings::default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "SynthSettings::default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl SynthSettings {
    fn default_kind() -> String {
        "bumps".into()
    }
    fn default_classes() -> usize {
        4
    }
    fn default_n_per_class() -> usize {
        20
    }
    fn default_length() -> usize {
        64
    }
    fn default_noise() -> f64 {
        0.1
    }
    fn default_test_fraction() -> f64 {
        0.5
    }

    pub fn resolve(map: Map<String, Value>) -> Result<Self> {
        let s: Self = from_map(map)?;
        if !(s.test_fraction > 0.0 && s.test_fraction < 1.0) {
            return Err(usage(format!(
                "--test-fraction {} must lie strictly between 0 and 1",
                s.test_fraction
            )));
        }
        s.synthetic_kind()?;
        Ok(s)
    }

    pub fn synthetic_kind(&self) -> Result<SyntheticKind> {
        match self.kind.trim().to_ascii_lowercase().as_str() {
            "sine-vs-square" | "sine" => Ok(SyntheticKind::SineVsSquare),
            "bumps" => Ok(SyntheticKind::ShiftedGaussianBumps {
                classes: self.classes,
            }),
            "cbf" => Ok(SyntheticKind::CylinderBellFunnel),
            other => Err(usage(format!(
                "unknown synthetic kind '{other}', expected one of sine-vs-square, bumps, cbf"
            ))),
        }
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, Value)]) -> Map<String, Value> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn flags_override_file_values() {
        let file = map(&[
            ("weights", "a".into()),
            ("dataset", "b".into()),
            ("gamma", 0.3.into()),
        ]);
        let flags = map(&[("gamma", 0.45.into())]);
        let s = AttackSettings::resolve(merge(Some(file), flags)).unwrap();
        assert_eq!(s.attacks[0].gamma, 0.45);
        assert_eq!(s.attacks[0].kind, AttackKind::Swap);
    }

    #[test]
    fn echo_round_trips() {
        let m = map(&[
            ("weights", "w".into()),
            ("dataset", "d".into()),
            ("attack", "all".into()),
            ("iterations", 10.into()),
            ("filter", "all".into()),
        ]);
        let s = AttackSettings::resolve(m).unwrap();
        assert_eq!(s.attacks.len(), 7);
        let mut echoed = match s.echo() {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        echoed.remove("resolved-attacks");
        let again = AttackSettings::resolve(echoed).unwrap();
        assert_eq!(again.attacks, s.attacks);
        assert_eq!(again.run.filter, SampleFilter::All);
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let base = [("weights", Value::from("w")), ("dataset", Value::from("d"))];
        for extra in [
            ("gamma", Value::from(0.6)),
            ("attack", "pgd".into()),
            ("colour", "red".into()),
        ] {
            let mut m = map(&base);
            m.insert(extra.0.into(), extra.1);
            let err = AttackSettings::resolve(m).err().unwrap();
            assert!(err.downcast_ref::<UsageError>().is_some(), "{err}");
        }
    }

    #[test]
    fn sweep_defaults_follow_parameter() {
        let m = map(&[
            ("weights", "w".into()),
            ("dataset", "d".into()),
            ("param", "alpha".into()),
            ("values", serde_json::json!([0.001, 0.01])),
        ]);
        let s = SweepSettings::resolve(m.clone()).unwrap();
        assert_eq!(s.base.kind, AttackKind::SwapL2);
        assert_eq!(s.run.seeds, vec![0]);
        let mut empty = m;
        empty.insert("values".into(), serde_json::json!([]));
        assert!(SweepSettings::resolve(empty).is_err());
    }

    #[test]
    fn conv_block_parsing() {
        let mut t = TrainSettings::resolve(map(&[("dataset", "d".into())])).unwrap();
        assert_eq!(t.conv_blocks().unwrap().len(), 2);
        t.blocks = "8:3".into();
        assert_eq!(t.conv_blocks().unwrap()[0].channels, 8);
        t.blocks = "8x3".into();
        assert!(t.conv_blocks().is_err());
    }
}
