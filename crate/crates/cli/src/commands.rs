use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde_json::json;
use tsattack::attacks::{ClipSchedule, GmMode, NoiseInit, NormKind};
use tsattack::classifier::{self, ModelConfig, ModelWeights, TrainConfig};
use tsattack::data::{self, Dataset};
use tsattack::eval::{
    self, comparison_rows, export_results, run_benchmark, run_sweep, sweep_means, ExportFormat,
    MetricsReport, SampleFilter, SweepParameter, SweepSpec,
};

use crate::manifest::ManifestBuilder;
use crate::settings::{
    load_config_file, merge, usage, AttackSettings, FlagMap, SweepSettings, SynthSettings,
    TrainSettings,
};

pub const WEIGHTS_FILE: &str = "model.tsaw";

#[derive(Args, Debug)]
pub struct Common {
    /// Directory for every file the command writes.
    #[arg(long, env = "TSATTACK_OUT_DIR", default_value = "tsattack-out")]
    pub out_dir: PathBuf,
    /// TOML key-value file, or a `manifest.json` from an earlier run of the same command.
    /// Flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Common {
    fn settings(
        &self,
        command: &str,
        flags: FlagMap,
    ) -> Result<serde_json::Map<String, serde_json::Value>> {
        let file = self
            .config
            .as_deref()
            .map(|p| load_config_file(p, command))
            .transpose()?;
        Ok(merge(file, flags.into_map()))
    }
}

/// Attack hyperparameters shared by `attack` and `sweep`. Unset values fall
/// back to the per-attack defaults.
#[derive(Args, Debug)]
pub struct ParamFlags {
    /// Step size [default: 0.0005, fgsm 0.1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// L-infinity budget [default: 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Iteration cap [default: 1000, fgsm 1].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Share of the top-two mass kept by the leading class, in (0, 0.5] [default: 0.48].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weight of the perturbation norm [default: 0.01 swap-l2, 1.0 gm-l2 and sgm].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the gm term in gm-l2 and sgm [default: 1].
    #[arg(long)]
    pub mu: Option<f64>,
    /// Weight of the total-variation term in sgm [default: 0.1].
    #[arg(long)]
    pub tv_weight: Option<f64>,
    /// per-step or final-only [default: per-step].
    #[arg(long)]
    pub clip_schedule: Option<String>,
    /// Stop at the first iteration whose clipped series changes class.
    #[arg(long)]
    pub early_stop: bool,
    /// one-hot-ce or neg-kl [default: one-hot-ce].
    #[arg(long)]
    pub gm_mode: Option<String>,
    /// euclidean or sum-abs [default: euclidean].
    #[arg(long)]
    pub norm: Option<String>,
    /// zero or uniform [default: zero].
    #[arg(long)]
    pub noise_init: Option<String>,
}

fn parse_enum<T: std::str::FromStr<Err = tsattack::Error>>(
    v: &Option<String>,
) -> Result<Option<T>> {
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|e| usage(e.to_string())))
        .transpose()
}

impl ParamFlags {
    fn fill(&self, f: &mut FlagMap) -> Result<()> {
        f.set("beta", self.beta)
            .set("epsilon", self.epsilon)
            .set("iterations", self.iterations)
            .set("gamma", self.gamma)
            .set("alpha", self.alpha)
            .set("mu", self.mu)
            .set("tv-weight", self.tv_weight)
            .set(
                "clip-schedule",
                parse_enum::<ClipSchedule>(&self.clip_schedule)?,
            )
            .switch("early-stop", self.early_stop)
            .set("gm-mode", parse_enum::<GmMode>(&self.gm_mode)?)
            .set("norm", parse_enum::<NormKind>(&self.norm)?)
            .set("noise-init", parse_enum::<NoiseInit>(&self.noise_init)?);
        Ok(())
    }
}

fn parse_filter(v: &Option<String>) -> Result<Option<SampleFilter>> {
    parse_enum(v)
}

fn check_input(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn load_dataset(path: &Path, labels: &[String], normalize: bool) -> Result<Dataset<f64>> {
    check_input(path, "dataset")?;
    let ds: Dataset<f64> = if labels.is_empty() {
        data::load_ucr_tsv(path)
    } else {
        data::load_ucr_tsv_with_labels(path, labels)
    }
    .with_context(|| format!("loading {}", path.display()))?;
    Ok(if normalize { ds.znormalized() } else { ds })
}

fn load_model(path: &Path) -> Result<ModelWeights<f64>> {
    check_input(path, "weights file")?;
    classifier::load_weights(path).with_context(|| format!("loading {}", path.display()))
}

fn check_fits(model: &ModelWeights<f64>, ds: &Dataset<f64>) -> Result<()> {
    let cfg = model.config();
    if ds.series_len() != cfg.input_length || ds.num_classes > cfg.num_classes {
        return Err(usage(format!(
            "dataset {} ({} classes, length {}) does not fit a model with {} classes and input length {}",
            ds.name,
            ds.num_classes,
            ds.series_len(),
            cfg.num_classes,
            cfg.input_length
        )));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn print_comparison(reports: &[MetricsReport]) {
    println!(
        "{:<8} {:>8} {:>10} {:>9} {:>8} {:>8}",
        "attack", "asr", "avg-dist", "attacked", "success", "skipped"
    );
    for r in comparison_rows(reports) {
        println!(
            "{:<8} {:>8} {:>10} {:>9} {:>8} {:>8}",
            r.attack.name(),
            fmt_opt(r.asr),
            fmt_opt(r.average_distance),
            r.n_attacked,
            r.n_success,
            r.n_skipped
        );
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training split in UCR TSV format.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Held-out split, evaluated after every epoch.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Convolution blocks as channels:width pairs [default: 16:7,16:5].
    #[arg(long)]
    pub blocks: Option<String>,
    /// [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.05]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seeds initialisation and batch order [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the series as stored instead of z-normalising each one.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub common: Common,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut f = FlagMap::default();
    f.set("dataset", args.dataset.clone())
        .set("test", args.test.clone())
        .set("blocks", args.blocks.clone())
        .set("epochs", args.epochs)
        .set("batch-size", args.batch_size)
        .set("learning-rate", args.learning_rate)
        .set("seed", args.seed)
        .set("normalize", args.raw.then_some(false));
    let settings = TrainSettings::resolve(args.common.settings("train", f)?)?;
    let manifest = ManifestBuilder::start("train");

    let train_set = load_dataset(&settings.dataset, &[], settings.normalize)?;
    let test_set = settings
        .test
        .as_deref()
        .map(|p| load_dataset(p, &train_set.label_names, settings.normalize))
        .transpose()?;
    let model_cfg = ModelConfig {
        num_classes: train_set.num_classes,
        input_length: train_set.series_len(),
        conv_blocks: settings.conv_blocks()?,
        seed: settings.seed,
        label_names: train_set.label_names.clone(),
    };
    model_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let train_cfg = TrainConfig {
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        learning_rate: settings.learning_rate,
        seed: settings.seed,
    };
    let outcome = classifier::train(&train_set, test_set.as_ref(), &model_cfg, &train_cfg)?;

    let dir = &args.common.out_dir;
    create_dir(dir)?;
    classifier::save_weights(&outcome.weights, dir.join(WEIGHTS_FILE))?;
    write_file(dir, "train-log.csv", &outcome.log_csv()?)?;
    let mut datasets = vec![train_set.manifest()];
    datasets.extend(test_set.as_ref().map(Dataset::manifest));
    manifest.finish(dir, settings.echo(), datasets)?;

    if let Some(last) = outcome.log.last() {
        let test = last
            .test_acc
            .map_or_else(String::new, |a| format!(", test accuracy {a:.4}"));
        println!(
            "epoch {}: loss {:.4}, train accuracy {:.4}{test}",
            last.epoch, last.train_loss, last.train_acc
        );
    }
    println!("wrote {}", dir.join(WEIGHTS_FILE).display());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// Model written by `train`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Series to attack, in UCR TSV format.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Attack name, comma-separated list, or `all`; one of fgsm, bim, gm, gm-l2, sgm, swap, swap-l2
    /// [default: swap].
    #[arg(long)]
    pub attack: Option<String>,
    /// Base seed; each sample gets its own seed derived from it [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// correct-only or all [default: correct-only].
    #[arg(long)]
    pub filter: Option<String>,
    /// Worker threads; results do not depend on it [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Also write a distance-vs-success scatter plot and per-sample overlays.
    #[arg(long)]
    pub svg: bool,
    /// Use the series as stored instead of z-normalising each one.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub params: ParamFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn attack(args: AttackArgs) -> Result<()> {
    let mut f = FlagMap::default();
    f.set("weights", args.weights.clone())
        .set("dataset", args.dataset.clone())
        .set("attack", args.attack.clone())
        .set("seed", args.seed)
        .set("filter", parse_filter(&args.filter)?)
        .set("jobs", args.jobs)
        .switch("svg", args.svg)
        .set("normalize", args.raw.then_some(false));
    args.params.fill(&mut f)?;
    let settings = AttackSettings::resolve(args.common.settings("attack", f)?)?;
    let run = &settings.run;
    if run.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let manifest = ManifestBuilder::start("attack");

    let model = load_model(&run.weights)?;
    let ds = load_dataset(&run.dataset, &model.config().label_names, run.normalize)?;
    check_fits(&model, &ds)?;
    let reports = run_benchmark(
        &model,
        &ds,
        &settings.attacks,
        run.seed,
        run.filter,
        run.jobs,
    )?;

    let dir = &args.common.out_dir;
    create_dir(dir)?;
    export_results(&reports, ExportFormat::Csv, dir, Some(&ds))?;
    export_results(&reports, ExportFormat::Json, dir, Some(&ds))?;
    if run.svg {
        export_results(&reports, ExportFormat::SvgPlot, dir, Some(&ds))?;
    }
    manifest.finish(dir, settings.echo(), vec![ds.manifest()])?;

    print_comparison(&reports);
    for r in reports.iter().filter(|r| r.n_errors > 0) {
        eprintln!("warning: {} failed on {} samples", r.attack, r.n_errors);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// gamma or alpha.
    #[arg(long)]
    pub param: Option<String>,
    /// Comma-separated, strictly monotone.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Option<Vec<f64>>,
    /// Comma-separated base seeds [default: 0].
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub seeds: Option<Vec<u64>>,
    /// Attack to sweep [default: swap for gamma, swap-l2 for alpha].
    #[arg(long)]
    pub attack: Option<String>,
    /// correct-only or all [default: correct-only].
    #[arg(long)]
    pub filter: Option<String>,
    /// [default: 1]
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Use the series as stored instead of z-normalising each one.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub params: ParamFlags,
    #[command(flatten)]
    pub common: Common,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let mut f = FlagMap::default();
    let param = args
        .param
        .as_deref()
        .map(|p| {
            p.parse::<SweepParameter>()
                .map_err(|e| usage(e.to_string()))
        })
        .transpose()?;
    let kind = args
        .attack
        .as_deref()
        .map(|a| {
            a.parse::<tsattack::attacks::AttackKind>()
                .map_err(|e| usage(e.to_string()))
        })
        .transpose()?;
    f.set("weights", args.weights.clone())
        .set("dataset", args.dataset.clone())
        .set("param", param)
        .set("values", args.values.clone())
        .set("seeds", args.seeds.clone())
        .set("attack", kind)
        .set("filter", parse_filter(&args.filter)?)
        .set("jobs", args.jobs)
        .set("normalize", args.raw.then_some(false));
    args.params.fill(&mut f)?;
    let settings = SweepSettings::resolve(args.common.settings("sweep", f)?)?;
    let run = &settings.run;
    let spec = SweepSpec {
        parameter: run.param,
        values: run.values.clone(),
        base: settings.base.clone(),
        seeds: run.seeds.clone(),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if run.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let manifest = ManifestBuilder::start("sweep");

    let model = load_model(&run.weights)?;
    let ds = load_dataset(&run.dataset, &model.config().label_names, run.normalize)?;
    check_fits(&model, &ds)?;
    let rows = run_sweep(&model, &ds, &spec, run.filter, run.jobs)?;
    let means = sweep_means(&rows);

    let dir = &args.common.out_dir;
    create_dir(dir)?;
    write_file(dir, "sweep.csv", &eval::export::sweep_csv(&rows)?)?;
    write_file(
        dir,
        "sweep-means.csv",
        &eval::export::sweep_means_csv(&means)?,
    )?;
    let (asr_svg, dist_svg) = eval::export::sweep_svgs(&rows);
    write_file(dir, "sweep-asr.svg", &asr_svg)?;
    write_file(dir, "sweep-distance.svg", &dist_svg)?;
    manifest.finish(dir, settings.echo(), vec![ds.manifest()])?;

    println!("{:>10} {:>8} {:>10}", run.param, "asr", "avg-dist");
    for m in &means {
        println!(
            "{:>10} {:>8} {:>10}",
            m.value,
            fmt_opt(m.asr),
            fmt_opt(m.average_distance)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// `reports.json` written by `attack`.
    #[arg(long)]
    pub reports: PathBuf,
    /// Comma-separated: csv, json, svg-plot.
    #[arg(long, value_delimiter = ',', default_value = "csv")]
    pub format: Vec<String>,
    /// The attacked dataset, needed for original-vs-perturbed overlays.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// The dataset was attacked without z-normalisation.
    #[arg(long)]
    pub raw: bool,
    /// Directory for the exported files.
    #[arg(long, env = "TSATTACK_OUT_DIR", default_value = "tsattack-out")]
    pub out_dir: PathBuf,
}

pub fn export(args: ExportArgs) -> Result<()> {
    let formats = args
        .format
        .iter()
        .map(|s| s.parse::<ExportFormat>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    check_input(&args.reports, "reports file")?;
    let manifest = ManifestBuilder::start("export");
    let text = fs::read_to_string(&args.reports)?;
    let reports: Vec<MetricsReport> = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.reports.display()))?;
    let ds = args
        .dataset
        .as_deref()
        .map(|p| load_dataset(p, &[], !args.raw))
        .transpose()?;
    for r in &reports {
        r.check_consistency()?;
    }

    let dir = &args.out_dir;
    create_dir(dir)?;
    let mut written = Vec::new();
    for fmt in formats {
        written.extend(export_results(&reports, fmt, dir, ds.as_ref())?);
    }
    let config = json!({
        "reports": args.reports,
        "format": args.format,
        "dataset": args.dataset,
        "normalize": !args.raw,
    });
    manifest.finish(dir, config, ds.iter().map(Dataset::manifest).collect())?;
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// sine-vs-square, bumps or cbf [default: bumps].
    #[arg(long)]
    pub kind: Option<String>,
    /// Number of classes for bumps [default: 4].
    #[arg(long)]
    pub classes: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    pub n_per_class: Option<usize>,
    /// Series length [default: 64].
    #[arg(long)]
    pub length: Option<usize>,
    /// Standard deviation of the added Gaussian noise [default: 0.1].
    #[arg(long)]
    pub noise: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of the series held out as the test split [default: 0.5].
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// File stem for NAME_TRAIN.tsv and NAME_TEST.tsv [default: generator name].
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let mut f = FlagMap::default();
    f.set("kind", args.kind.clone())
        .set("classes", args.classes)
        .set("n-per-class", args.n_per_class)
        .set("length", args.length)
        .set("noise", args.noise)
        .set("seed", args.seed)
        .set("test-fraction", args.test_fraction)
        .set("name", args.name.clone());
    let s = SynthSettings::resolve(args.common.settings("synth", f)?)?;
    let manifest = ManifestBuilder::start("synth");
    let full: Dataset<f64> = data::make_synthetic(
        s.synthetic_kind()?,
        s.n_per_class,
        s.length,
        s.noise,
        s.seed,
    )
    .map_err(|e| usage(e.to_string()))?;
    let (mut train, mut test) = data::train_test_split(&full, s.test_fraction, s.seed)?;
    let name = s.name.clone().unwrap_or_else(|| full.name.clone());
    if name.is_empty() || name.contains(['/', '\\']) {
        bail!(usage(format!("'{name}' is not a usable file stem")));
    }
    train.name = name.clone();
    test.name = name.clone();

    let dir = &args.common.out_dir;
    create_dir(dir)?;
    for (ds, suffix) in [(&train, "TRAIN"), (&test, "TEST")] {
        let path = dir.join(format!("{name}_{suffix}.tsv"));
        ds.write_ucr_tsv(&path)?;
        println!("wrote {} ({} series)", path.display(), ds.len());
    }
    manifest.finish(dir, s.echo(), vec![train.manifest(), test.manifest()])?;
    Ok(())
}
