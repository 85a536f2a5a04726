//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsattack::attacks::{
    build_swap_target, kl_divergence, loss_and_noise_gradient, AttackConfig, AttackKind, ProbVector,
};
use tsattack::classifier::{train, ModelConfig, ModelWeights, TrainConfig};
use tsattack::data::{
    load_ucr_tsv, make_synthetic, train_test_split, Dataset, SyntheticKind, TimeSeries,
};
use tsattack::eval::{
    aggregate_micro, run_benchmark, run_sweep, MetricsReport, SampleFilter, SweepParameter,
    SweepRow, SweepSpec,
};

const SEEDS: [u64; 3] = [0, 1, 2];
const EPSILON: f64 = 0.1;
const GAMMAS: [f64; 5] = [0.30, 0.40, 0.45, 0.49, 0.50];
const ALPHAS: [f64; 4] = [0.001, 0.01, 0.1, 1.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------------------
// 1. gradients

fn random_model(classes: usize, length: usize, seed: u64) -> ModelWeights<f64> {
    let mut w = ModelWeights::<f64>::init(ModelConfig::small(classes, length, seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let names: Vec<String> = w
        .tensors()
        .keys()
        .filter(|n| n.ends_with("bias"))
        .cloned()
        .collect();
    for name in names {
        for v in w.tensor_mut(&name).unwrap().values_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
    w
}

fn gradient_oracle() -> Verdict {
    const CLASSES: usize = 3;
    const LEN: usize = 16;
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut worst_at, mut checks) = (0.0f64, String::new(), 0);
    for case in 0..50u64 {
        let model = random_model(CLASSES, LEN, case);
        let x =
            TimeSeries::unlabeled((0..LEN).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let r: Vec<f64> = (0..LEN).map(|_| rng.gen_range(-0.05..0.05)).collect();
        for kind in AttackKind::ALL {
            let cfg = AttackConfig {
                seed: case,
                ..AttackConfig::defaults_for(kind)
            };
            let loss = |noise: &[f64]| loss_and_noise_gradient(&model, &x, noise, &cfg).unwrap();
            let (_, grad) = loss(&r);
            let numeric: Vec<f64> = (0..LEN)
                .map(|i| {
                    let (mut up, mut down) = (r.clone(), r.clone());
                    up[i] += STEP;
                    down[i] -= STEP;
                    (loss(&up).0 - loss(&down).0) / (2.0 * STEP)
                })
                .collect();
            let diff = grad
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = grad
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt());
            let err = if scale < 1e-10 { diff } else { diff / scale };
            checks += 1;
            if err > worst {
                worst = err;
                worst_at = format!("{kind} instance {case}");
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && secs < 60.0,
        format!(
            "max relative error {worst:.2e} ({worst_at}) over {checks} gradients in {secs:.1} s"
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. KL

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Terms evaluated as `p ln(p / q)`, summed smallest-first with Neumaier compensation.
fn reference_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut terms: Vec<f64> = p
        .iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b.max(1e-12)).ln())
        .collect();
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for t in terms {
        let s = sum + t;
        comp += if sum.abs() >= t.abs() {
            (sum - s) + t
        } else {
            (t - s) + sum
        };
        sum = s;
    }
    (sum + comp).max(0.0)
}

fn kl_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut worst, mut floored) = (0.0f64, 0);
    for pair in 0..1000 {
        let n = rng.gen_range(2..=10);
        let p = random_simplex(&mut rng, n);
        let mut q = random_simplex(&mut rng, n);
        if pair % 3 == 0 {
            // push some entries to or below the floor, then move the mass elsewhere
            let k = rng.gen_range(1..n);
            let mut moved = 0.0;
            for v in q.iter_mut().take(k) {
                let tiny = [0.0, 1e-15, 1e-12][rng.gen_range(0..3)];
                moved += *v - tiny;
                *v = tiny;
            }
            q[n - 1] += moved;
            floored += 1;
        }
        let got = kl_divergence(
            &ProbVector::new(p.clone()).unwrap(),
            &ProbVector::new(q.clone()).unwrap(),
        )
        .unwrap();
        let expect = reference_kl(&p, &q);
        worst = worst.max((got - expect).abs());
    }
    verdict(
        worst <= 1e-9,
        format!(
            "max absolute deviation {worst:.2e} over 1000 pairs ({floored} with floored entries)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. target builder

fn target_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    for trial in 0..10_000 {
        let n = rng.gen_range(2..=12);
        let p = random_simplex(&mut rng, n);
        let gamma = if trial % 10 == 0 {
            0.5
        } else {
            rng.gen_range(f64::EPSILON..0.5)
        };
        let original = ProbVector::new(p.clone()).unwrap();
        let target = build_swap_target(&original, gamma).unwrap();
        let t = target.as_slice();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        let (i1, i2) = (order[0], order[1]);
        let mass_ok = (t.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() <= 1e-12
            && (t[i1] + t[i2] - (p[i1] + p[i2])).abs() <= 1e-12;
        let rest_ok = (0..n)
            .filter(|&i| i != i1 && i != i2)
            .all(|i| t[i].to_bits() == p[i].to_bits());
        let rank_ok = if gamma < 0.5 {
            target.argmax() == i2 && t[i2] > t[i1]
        } else {
            t[i1] == t[i2]
        };
        if !(mass_ok && rest_ok && rank_ok) && failures.len() < 3 {
            failures.push(format!(
                "trial {trial} (gamma {gamma}): mass {mass_ok} rest {rest_ok} rank {rank_ok}"
            ));
        }
    }
    let detail = if failures.is_empty() {
        "10000 vectors: mass preserved, other entries bit-identical, top two swapped (tied at gamma 0.5)".to_string()
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

// ---------------------------------------------------------------------------
// desk-scale benchmark shared by criteria 4 to 8

struct SeedRun {
    seed: u64,
    accuracies: Vec<(String, f64)>,
    reports: Vec<MetricsReport>,
    gamma_rows: Vec<SweepRow>,
    alpha_rows: Vec<SweepRow>,
}

fn desk_train(
    train_set: &Dataset<f64>,
    test_set: &Dataset<f64>,
    seed: u64,
) -> (ModelWeights<f64>, f64) {
    let model = ModelConfig::small(train_set.num_classes, train_set.series_len(), seed);
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 16,
        learning_rate: 0.2,
        seed,
    };
    let out = train(train_set, Some(test_set), &model, &cfg).unwrap();
    let acc = out.weights.accuracy(test_set).unwrap();
    (out.weights, acc)
}

fn datasets(seed: u64) -> Vec<(Dataset<f64>, Dataset<f64>)> {
    let bumps: Dataset<f64> = make_synthetic(
        SyntheticKind::ShiftedGaussianBumps { classes: 4 },
        40,
        64,
        0.1,
        seed,
    )
    .unwrap()
    .znormalized();
    let bumps = train_test_split(&bumps, 0.5, seed).unwrap();
    let cbf_train: Dataset<f64> = load_ucr_tsv(fixture("CBF_TRAIN.tsv")).unwrap();
    let cbf_test: Dataset<f64> =
        tsattack::data::load_ucr_tsv_with_labels(fixture("CBF_TEST.tsv"), &cbf_train.label_names)
            .unwrap();
    vec![bumps, (cbf_train.znormalized(), cbf_test.znormalized())]
}

fn run_seed(seed: u64) -> SeedRun {
    let attacks: Vec<AttackConfig> = AttackKind::ALL
        .into_iter()
        .map(AttackConfig::defaults_for)
        .collect();
    let mut run = SeedRun {
        seed,
        accuracies: Vec::new(),
        reports: Vec::new(),
        gamma_rows: Vec::new(),
        alpha_rows: Vec::new(),
    };
    for (train_set, test_set) in datasets(seed) {
        let (model, acc) = desk_train(&train_set, &test_set, seed);
        run.accuracies.push((test_set.name.clone(), acc));
        let filter = SampleFilter::CorrectOnly;
        run.reports
            .extend(run_benchmark(&model, &test_set, &attacks, seed, filter, jobs()).unwrap());
        for (param, values, kind, rows) in [
            (
                SweepParameter::Gamma,
                &GAMMAS[..],
                AttackKind::Swap,
                &mut run.gamma_rows,
            ),
            (
                SweepParameter::Alpha,
                &ALPHAS[..],
                AttackKind::SwapL2,
                &mut run.alpha_rows,
            ),
        ] {
            let spec = SweepSpec {
                parameter: param,
                values: values.to_vec(),
                base: AttackConfig::defaults_for(kind),
                seeds: vec![seed],
            };
            rows.extend(run_sweep(&model, &test_set, &spec, filter, jobs()).unwrap());
        }
    }
    run
}

/// Pools sweep rows of several datasets per swept value: (value, asr, average distance).
fn pool_sweep(rows: &[SweepRow], values: &[f64]) -> Vec<(f64, Option<f64>, Option<f64>)> {
    values
        .iter()
        .map(|&v| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v).collect();
            let attacked: usize = at.iter().map(|r| r.n_attacked).sum();
            let success: usize = at.iter().map(|r| r.n_success).sum();
            let dist_sum: f64 = at
                .iter()
                .filter_map(|r| r.average_distance.map(|d| d * r.n_success as f64))
                .sum();
            let asr = (attacked > 0).then(|| success as f64 / attacked as f64);
            let dist = (success > 0).then(|| dist_sum / success as f64);
            (v, asr, dist)
        })
        .collect()
}

fn budget(runs: &[SeedRun]) -> Verdict {
    let mut n = 0;
    let mut worst = 0.0f64;
    let mut bad = 0;
    for r in runs.iter().flat_map(|s| &s.reports) {
        for row in &r.rows {
            n += 1;
            worst = worst.max(row.linf_distance);
            if !(row.linf_distance <= EPSILON + 1e-9) {
                bad += 1;
            }
        }
    }
    verdict(
        bad == 0 && n > 0,
        format!("{n} outcomes, max linf {worst:.12}, {bad} above {EPSILON} + 1e-9"),
    )
}

fn directional(runs: &[SeedRun]) -> Verdict {
    let mut good_seeds = 0;
    let mut parts = Vec::new();
    let mut accuracy_ok = true;
    for run in runs {
        for (name, acc) in &run.accuracies {
            accuracy_ok &= *acc >= 0.85;
            println!("      seed {} {name}: test accuracy {acc:.4}", run.seed);
        }
        let table = aggregate_micro(&run.reports);
        let get = |k: AttackKind| table.iter().find(|r| r.attack == k).unwrap();
        for row in &table {
            println!(
                "      seed {} {:<8} asr {} avg-dist {} ({}/{})",
                run.seed,
                row.attack.name(),
                fmt_opt(row.asr),
                fmt_opt(row.average_distance),
                row.n_success,
                row.n_attacked
            );
        }
        let (swap, swap_l2, gm, bim) = (
            get(AttackKind::Swap),
            get(AttackKind::SwapL2),
            get(AttackKind::Gm),
            get(AttackKind::Bim),
        );
        let ge = |a: Option<f64>, b: Option<f64>| matches!((a, b), (Some(x), Some(y)) if x >= y);
        let le = |a: Option<f64>, b: Option<f64>| matches!((a, b), (Some(x), Some(y)) if x <= y);
        let checks = [
            ("asr swap>=gm", ge(swap.asr, gm.asr)),
            ("asr swap>=bim", ge(swap.asr, bim.asr)),
            (
                "dist swap<=gm",
                le(swap.average_distance, gm.average_distance),
            ),
            (
                "dist swap-l2<=swap",
                le(swap_l2.average_distance, swap.average_distance),
            ),
        ];
        if checks.iter().all(|(_, ok)| *ok) {
            good_seeds += 1;
        }
        let failed: Vec<&str> = checks
            .iter()
            .filter(|(_, ok)| !ok)
            .map(|(n, _)| *n)
            .collect();
        parts.push(format!(
            "seed {}: {}",
            run.seed,
            if failed.is_empty() {
                "all hold".to_string()
            } else {
                format!("fails {}", failed.join(", "))
            }
        ));
    }
    verdict(
        accuracy_ok && good_seeds >= 2,
        format!(
            "{good_seeds}/3 seeds satisfy every ordering, accuracy floor {}; {}",
            if accuracy_ok { "met" } else { "missed" },
            parts.join("; ")
        ),
    )
}

fn gamma_shape(runs: &[SeedRun]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for run in runs {
        let pooled = pool_sweep(&run.gamma_rows, &GAMMAS);
        let at_half = pooled.last().unwrap().1;
        let min_ok = match at_half {
            Some(h) => pooled.iter().all(|(_, a, _)| a.is_some_and(|a| h <= a)),
            None => false,
        };
        ok &= min_ok;
        let asrs: Vec<String> = pooled
            .iter()
            .map(|(v, a, _)| format!("{v}:{}", fmt_opt(*a)))
            .collect();
        parts.push(format!("seed {} [{}]", run.seed, asrs.join(" ")));
    }
    verdict(ok, format!("asr by gamma: {}", parts.join("; ")))
}

fn alpha_shape(runs: &[SeedRun]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for run in runs {
        let pooled = pool_sweep(&run.alpha_rows, &ALPHAS);
        // values with no successful attack have no distance and are left out of the chain
        let dists: Vec<f64> = pooled.iter().filter_map(|(_, _, d)| *d).collect();
        let monotone = dists.windows(2).all(|w| w[1] <= w[0]);
        let asr = |v: f64| pooled.iter().find(|p| p.0 == v).and_then(|p| p.1);
        let asr_ok = matches!((asr(1.0), asr(0.01)), (Some(a), Some(b)) if a <= b);
        ok &= monotone && asr_ok;
        let cells: Vec<String> = pooled
            .iter()
            .map(|(v, a, d)| format!("{v}:{}/{}", fmt_opt(*a), fmt_opt(*d)))
            .collect();
        parts.push(format!("seed {} [{}]", run.seed, cells.join(" ")));
    }
    verdict(ok, format!("asr/avg-dist by alpha: {}", parts.join("; ")))
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn diagnostics(runs: &[SeedRun]) -> Verdict {
    let (mut swap_kl, mut gm_kl) = (Vec::new(), Vec::new());
    for run in runs {
        for swap in run.reports.iter().filter(|r| r.attack == AttackKind::Swap) {
            let gm = run
                .reports
                .iter()
                .find(|r| r.attack == AttackKind::Gm && r.dataset == swap.dataset)
                .unwrap();
            for row in swap.rows.iter().filter(|r| r.success) {
                if let Some(g) = gm.rows.iter().find(|g| g.sample_index == row.sample_index) {
                    swap_kl.push(row.kl_original_vs_perturbed);
                    gm_kl.push(g.kl_original_vs_perturbed);
                }
            }
        }
    }
    let n = swap_kl.len();
    let (s, g) = (median(swap_kl), median(gm_kl));
    verdict(
        matches!((s, g), (Some(a), Some(b)) if a < b),
        format!(
            "median kl-original-vs-perturbed over {n} successful swap samples: swap {} vs gm {}",
            fmt_opt(s),
            fmt_opt(g)
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. determinism through the command-line tool

fn cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tsattack"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TSATTACK_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = fixture("CBF_TRAIN.tsv");
    let test = fixture("CBF_TEST.tsv");
    let (train, test) = (train.to_str().unwrap(), test.to_str().unwrap());
    let steps = || -> Result<Vec<Vec<u8>>, String> {
        cli(
            &[
                "train",
                "--dataset",
                train,
                "--epochs",
                "30",
                "--learning-rate",
                "0.2",
                "--out-dir",
                "model",
            ],
            d,
        )?;
        cli(
            &[
                "attack",
                "--weights",
                "model/model.tsaw",
                "--dataset",
                test,
                "--attack",
                "all",
                "--iterations",
                "100",
                "--beta",
                "0.002",
                "--noise-init",
                "uniform",
                "--seed",
                "5",
                "--jobs",
                "1",
                "--out-dir",
                "a",
            ],
            d,
        )?;
        cli(
            &["attack", "--config", "a/manifest.json", "--out-dir", "b"],
            d,
        )?;
        cli(
            &[
                "attack",
                "--config",
                "a/manifest.json",
                "--jobs",
                "4",
                "--out-dir",
                "c",
            ],
            d,
        )?;
        ["a", "b", "c"]
            .iter()
            .map(|r| fs::read(d.join(r).join("comparison.csv")).map_err(|e| e.to_string()))
            .collect()
    };
    match steps() {
        Ok(files) => {
            let same = files.windows(2).all(|w| w[0] == w[1]);
            verdict(
                same,
                format!(
                    "comparison.csv {} across replays at jobs 1, 1 and 4 ({} bytes)",
                    if same { "identical" } else { "differs" },
                    files[0].len()
                ),
            )
        }
        Err(e) => verdict(false, e),
    }
}

fn report(id: usize, name: &str, start: Instant, v: Verdict) -> bool {
    println!(
        "{} {id}. {name}: {} [{:.1} s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    v.pass
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    println!("acceptance suite ({} worker threads)", jobs());
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "gradient oracle", t, gradient_oracle());
    let t = Instant::now();
    all &= report(2, "kl oracle", t, kl_oracle());
    let t = Instant::now();
    all &= report(3, "swap target properties", t, target_properties());

    let t = Instant::now();
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    println!(
        "      desk benchmark for {} seeds took {:.1} s",
        SEEDS.len(),
        t.elapsed().as_secs_f64()
    );
    all &= report(4, "budget invariant", t, budget(&runs));
    all &= report(5, "directional comparison", t, directional(&runs));
    all &= report(6, "gamma sweep shape", t, gamma_shape(&runs));
    all &= report(7, "alpha sweep shape", t, alpha_shape(&runs));
    all &= report(8, "per-sample diagnostics", t, diagnostics(&runs));
    let t = Instant::now();
    all &= report(9, "determinism", t, determinism());

    if all {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}
