use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attacks::config::{AttackConfig, AttackKind, ClipSchedule, NoiseInit};
use crate::attacks::losses;
use crate::autodiff::{sign, Graph, NodeId};
use crate::classifier::ModelWeights;
use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::prob::{build_swap_target, kl_divergence, ProbVector};
use crate::scalar::{argmax, Scalar};
use crate::tensor::Tensor;

/// Result of attacking one series.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome<S> {
    pub kind: AttackKind,
    pub perturbed: TimeSeries<S>,
    /// `final_class != original_class`.
    pub success: bool,
    /// Prediction on the clean series.
    pub original_class: usize,
    pub final_class: usize,
    pub euclidean_distance: f64,
    pub linf_distance: f64,
    /// Divergence from the attack's target distribution to `f(x')`: the swap
    /// target for SWAP, the one-hot random class for GM in cross-entropy mode.
    pub kl_to_target: Option<f64>,
    /// `KL(f(x) ‖ f(x'))`.
    pub kl_original_vs_perturbed: f64,
    pub iterations_used: usize,
    pub gm_target_class: Option<usize>,
    /// Objective value before each update.
    pub loss_history: Vec<f64>,
    /// Set when the run stopped on a non-finite loss or gradient.
    pub abort_reason: Option<String>,
}

/// Per-run state shared by all objectives.
struct Context<S> {
    original: ProbVector<S>,
    original_class: usize,
    swap_target: Option<ProbVector<S>>,
    gm_class: Option<usize>,
}

/// Uniform draw over every class except `excluded`.
fn draw_other_class(rng: &mut ChaCha8Rng, num_classes: usize, excluded: usize) -> usize {
    let k = rng.gen_range(0..num_classes - 1);
    if k >= excluded {
        k + 1
    } else {
        k
    }
}

fn prepare<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Context<S>> {
    let original = model.predict_proba(x)?;
    let original_class = original.argmax();
    // Always consume the class draw so every attack sees the same noise stream.
    let gm_class = draw_other_class(rng, original.len(), original_class);
    let swap_target = if cfg.kind.is_swap() {
        Some(build_swap_target(&original, cfg.gamma)?)
    } else {
        None
    };
    Ok(Context {
        original,
        original_class,
        swap_target,
        gm_class: cfg.kind.is_gm().then_some(gm_class),
    })
}

fn objective<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &AttackConfig,
    ctx: &Context<S>,
    log_probs: NodeId,
    noise: NodeId,
) -> Result<NodeId> {
    let gm_class = || ctx.gm_class.expect("drawn for gradient-method attacks");
    match cfg.kind {
        AttackKind::Fgsm | AttackKind::Bim => {
            losses::cross_entropy(g, log_probs, ctx.original_class)
        }
        AttackKind::Gm => losses::loss_gm(g, log_probs, &ctx.original, gm_class(), cfg.gm_mode),
        AttackKind::GmL2 => losses::loss_gm_l2(
            g,
            log_probs,
            noise,
            &ctx.original,
            gm_class(),
            cfg.gm_mode,
            cfg.mu,
            cfg.alpha,
            cfg.norm,
        ),
        AttackKind::Sgm => losses::loss_sgm(
            g,
            log_probs,
            noise,
            &ctx.original,
            gm_class(),
            cfg.gm_mode,
            cfg.mu,
            cfg.alpha,
            cfg.norm,
            cfg.tv_weight,
        ),
        AttackKind::Swap => {
            losses::loss_swap(g, log_probs, ctx.swap_target.as_ref().expect("swap target"))
        }
        AttackKind::SwapL2 => losses::loss_swap_l2(
            g,
            log_probs,
            noise,
            ctx.swap_target.as_ref().expect("swap target"),
            cfg.alpha,
            cfg.norm,
        ),
    }
}

/// Builds the attack objective for noise `r` on input `x` and returns its value
/// and its gradient with respect to `r`.
pub fn loss_and_noise_gradient<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    noise: &[S],
    cfg: &AttackConfig,
) -> Result<(S, Vec<S>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = prepare(model, x, cfg, &mut rng)?;
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let xn = g.constant(Tensor::vector(x.values.clone()));
    eval_step(&mut g, model, &params, xn, noise, cfg, &ctx)
}

fn eval_step<S: Scalar>(
    g: &mut Graph<S>,
    model: &ModelWeights<S>,
    params: &crate::classifier::BoundParams,
    x: NodeId,
    noise: &[S],
    cfg: &AttackConfig,
    ctx: &Context<S>,
) -> Result<(S, Vec<S>)> {
    let r = g.variable(Tensor::vector(noise.to_vec()));
    let xp = g.add(x, r)?;
    let lp = model.log_probs_node(g, params, xp)?;
    let loss = objective(g, cfg, ctx, lp, r)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let grad = g.grad(r).expect("noise is a variable").values().to_vec();
    Ok((value, grad))
}

fn clip<S: Scalar>(noise: &mut [S], epsilon: S) {
    for v in noise {
        *v = v.max(-epsilon).min(epsilon);
    }
}

fn finish<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    noise: &[S],
    cfg: &AttackConfig,
    ctx: Context<S>,
    iterations_used: usize,
    loss_history: Vec<f64>,
    abort_reason: Option<String>,
) -> Result<AttackOutcome<S>> {
    let values: Vec<S> = x.values.iter().zip(noise).map(|(&a, &b)| a + b).collect();
    let perturbed = TimeSeries {
        values,
        label: x.label,
    };
    let after = model.predict_proba(&perturbed)?;
    let final_class = after.argmax();
    let (mut sq, mut linf) = (0.0f64, 0.0f64);
    for (&a, &b) in perturbed.values.iter().zip(&x.values) {
        let d = (a - b).as_f64();
        sq += d * d;
        linf = linf.max(d.abs());
    }
    let kl_to_target = match (&ctx.swap_target, ctx.gm_class) {
        (Some(t), _) => Some(kl_divergence(t, &after)?.as_f64()),
        (None, Some(k)) if cfg.gm_mode == crate::attacks::GmMode::OneHotCe => {
            let onehot = ProbVector::one_hot(after.len(), k)?;
            Some(kl_divergence(&onehot, &after)?.as_f64())
        }
        _ => None,
    };
    Ok(AttackOutcome {
        kind: cfg.kind,
        success: abort_reason.is_none() && final_class != ctx.original_class,
        original_class: ctx.original_class,
        final_class,
        euclidean_distance: sq.sqrt(),
        linf_distance: linf,
        kl_to_target,
        kl_original_vs_perturbed: kl_divergence(&ctx.original, &after)?.as_f64(),
        iterations_used,
        gm_target_class: ctx.gm_class,
        loss_history,
        abort_reason,
        perturbed,
    })
}

/// Single signed-gradient step `x' = x + beta · sign(∇_x CE(f(x), argmax f(x)))`,
/// then projected into the `epsilon` ball. `sign(0) = 0`.
pub fn fgsm<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<S>> {
    cfg.validate()?;
    let cfg = AttackConfig {
        kind: AttackKind::Fgsm,
        ..cfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = prepare(model, x, &cfg, &mut rng)?;
    let zeros = vec![S::zero(); x.len()];
    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let xn = g.constant(Tensor::vector(x.values.clone()));
    let (loss, grad) = eval_step(&mut g, model, &params, xn, &zeros, &cfg, &ctx)?;
    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        let reason = format!("non-finite loss or gradient ({loss})");
        return finish(
            model,
            x,
            &zeros,
            &cfg,
            ctx,
            0,
            vec![loss.as_f64()],
            Some(reason),
        );
    }
    let zero_series = vec![S::zero(); x.len()];
    let mut noise = signed_step(&zero_series, &grad, S::lit(cfg.beta));
    clip(&mut noise, S::lit(cfg.epsilon));
    finish(model, x, &noise, &cfg, ctx, 1, vec![loss.as_f64()], None)
}

/// `values + beta · sign(grad)`, elementwise.
pub fn signed_step<S: Scalar>(values: &[S], grad: &[S], beta: S) -> Vec<S> {
    values
        .iter()
        .zip(grad)
        .map(|(&v, &d)| v + beta * sign(d))
        .collect()
}

/// Iterative attacks (everything but FGSM).
///
/// Initialises the noise, then for `iterations` steps evaluates the attack's
/// objective on `x + r`, backpropagates to `r` and updates it: gradient
/// descent `r ← r - beta · ∇r` for the KL/GM objectives, signed ascent
/// `r ← r + beta · sign(∇r CE)` for BIM. The noise is kept within
/// `[-epsilon, epsilon]` per step or once at the end, according to the clip
/// schedule. A non-finite loss aborts the run with `success = false`.
pub fn run_iterative_attack<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<S>> {
    cfg.validate()?;
    if !cfg.kind.is_iterative() {
        return Err(Error::config("FGSM is a single-step attack; use fgsm()"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ctx = prepare(model, x, cfg, &mut rng)?;
    let epsilon = S::lit(cfg.epsilon);
    let beta = S::lit(cfg.beta);
    let mut noise: Vec<S> = match cfg.noise_init {
        NoiseInit::Zeros => vec![S::zero(); x.len()],
        NoiseInit::Uniform => {
            let bound = cfg.epsilon / 10.0;
            (0..x.len())
                .map(|_| S::lit(rng.gen_range(-bound..=bound)))
                .collect()
        }
    };

    let mut g = Graph::new();
    let params = model.bind(&mut g, false);
    let xn = g.constant(Tensor::vector(x.values.clone()));
    let mark = g.len();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut used = 0;

    for it in 0..cfg.iterations {
        g.truncate(mark);
        let (loss, grad) = eval_step(&mut g, model, &params, xn, &noise, cfg, &ctx)?;
        history.push(loss.as_f64());
        if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            clip(&mut noise, epsilon);
            let reason = format!("non-finite loss or gradient at iteration {it} ({loss})");
            return finish(model, x, &noise, cfg, ctx, used, history, Some(reason));
        }
        if cfg.kind == AttackKind::Bim {
            noise = signed_step(&noise, &grad, beta);
        } else {
            for (r, &d) in noise.iter_mut().zip(&grad) {
                *r -= beta * d;
            }
        }
        if cfg.clip_schedule == ClipSchedule::PerStep {
            clip(&mut noise, epsilon);
        }
        used += 1;
        if cfg.early_stop {
            let mut probe = noise.clone();
            clip(&mut probe, epsilon);
            let xp: Vec<S> = x.values.iter().zip(&probe).map(|(&a, &b)| a + b).collect();
            if argmax(&model.log_probs(&xp)?) != ctx.original_class {
                break;
            }
        }
    }
    clip(&mut noise, epsilon);
    finish(model, x, &noise, cfg, ctx, used, history, None)
}

/// Runs whichever attack `cfg.kind` names.
pub fn attack<S: Scalar>(
    model: &ModelWeights<S>,
    x: &TimeSeries<S>,
    cfg: &AttackConfig,
) -> Result<AttackOutcome<S>> {
    if cfg.kind == AttackKind::Fgsm {
        fgsm(model, x, cfg)
    } else {
        run_iterative_attack(model, x, cfg)
    }
}

/// Mixes a base seed with a sample index (SplitMix64 finaliser), so per-sample
/// streams do not depend on scheduling order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ConvBlock, ModelConfig};

    fn model(classes: usize, len: usize, seed: u64) -> ModelWeights<f64> {
        ModelWeights::init(ModelConfig {
            num_classes: classes,
            input_length: len,
            conv_blocks: vec![
                ConvBlock {
                    channels: 4,
                    width: 5,
                },
                ConvBlock {
                    channels: 4,
                    width: 3,
                },
            ],
            seed,
            label_names: Vec::new(),
        })
        .unwrap()
    }

    fn series(len: usize) -> TimeSeries<f64> {
        TimeSeries::unlabeled((0..len).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap()
    }

    #[test]
    fn null_update_leaves_series_unchanged() {
        let m = model(3, 16, 1);
        let x = series(16);
        for kind in AttackKind::ALL.into_iter().filter(|k| k.is_iterative()) {
            let cfg = AttackConfig {
                beta: 0.0,
                iterations: 1,
                ..AttackConfig::defaults_for(kind)
            };
            let out = run_iterative_attack(&m, &x, &cfg).unwrap();
            assert_eq!(out.perturbed.values, x.values, "{kind}");
            assert!(!out.success);
            assert_eq!(out.euclidean_distance, 0.0);
        }
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = AttackConfig {
            iterations: 0,
            ..AttackConfig::default()
        };
        assert!(run_iterative_attack(&model(3, 16, 1), &series(16), &cfg).is_err());
    }

    #[test]
    fn signed_step_example() {
        assert_eq!(signed_step(&[0.0, 0.0], &[2.0, -3.0], 0.1), vec![0.1, -0.1]);
        assert_eq!(signed_step(&[1.0], &[0.0], 0.1), vec![1.0]);
    }

    #[test]
    fn fgsm_zero_gradient_is_stationary() {
        // A zero head makes the output constant, so the input gradient vanishes.
        let mut m = model(3, 16, 1);
        m.tensor_mut("head.weight").unwrap().values_mut().fill(0.0);
        let x = series(16);
        let out = fgsm(&m, &x, &AttackConfig::defaults_for(AttackKind::Fgsm)).unwrap();
        assert_eq!(out.perturbed.values, x.values);
        assert!(!out.success);
    }

    #[test]
    fn fgsm_steps_by_beta_where_gradient_nonzero() {
        let m = model(3, 16, 2);
        let x = series(16);
        let cfg = AttackConfig::defaults_for(AttackKind::Fgsm);
        let (_, grad) = loss_and_noise_gradient(&m, &x, &vec![0.0; 16], &cfg).unwrap();
        let out = fgsm(&m, &x, &cfg).unwrap();
        for ((&xp, &x0), &d) in out.perturbed.values.iter().zip(&x.values).zip(&grad) {
            let step = xp - x0;
            if d != 0.0 {
                assert!((step.abs() - 0.1).abs() < 1e-12);
                assert_eq!(step.signum(), d.signum());
            } else {
                assert_eq!(step, 0.0);
            }
        }
        assert!(out.linf_distance <= 0.1 + 1e-9);
    }

    #[test]
    fn outcomes_respect_budget_and_success_definition() {
        let m = model(3, 16, 3);
        let x = series(16);
        for kind in AttackKind::ALL {
            for schedule in [ClipSchedule::PerStep, ClipSchedule::FinalOnly] {
                let cfg = AttackConfig {
                    iterations: 50,
                    beta: 0.05,
                    clip_schedule: schedule,
                    ..AttackConfig::defaults_for(kind)
                };
                let out = attack(&m, &x, &cfg).unwrap();
                assert!(
                    out.linf_distance <= cfg.epsilon + 1e-9,
                    "{kind}: {}",
                    out.linf_distance
                );
                let recomputed = m.predict(&out.perturbed).unwrap() != m.predict(&x).unwrap();
                assert_eq!(out.success, recomputed);
            }
        }
    }

    #[test]
    fn attacks_are_deterministic() {
        let m = model(4, 16, 5);
        let x = series(16);
        for kind in AttackKind::ALL {
            let cfg = AttackConfig {
                iterations: 30,
                seed: 77,
                noise_init: NoiseInit::Uniform,
                ..AttackConfig::defaults_for(kind)
            };
            assert_eq!(attack(&m, &x, &cfg).unwrap(), attack(&m, &x, &cfg).unwrap());
        }
    }

    #[test]
    fn gm_class_never_equals_prediction() {
        let m = model(5, 16, 6);
        let x = series(16);
        let pred = m.predict(&x).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..200 {
            let cfg = AttackConfig {
                seed,
                iterations: 1,
                ..AttackConfig::defaults_for(AttackKind::Gm)
            };
            let k = run_iterative_attack(&m, &x, &cfg)
                .unwrap()
                .gm_target_class
                .unwrap();
            assert_ne!(k, pred);
            seen.insert(k);
        }
        assert_eq!(seen.len(), 4, "all non-predicted classes drawn");
    }

    #[test]
    fn early_stop_halts_after_flip() {
        let m = model(3, 16, 3);
        let x = series(16);
        let cfg = AttackConfig {
            beta: 0.05,
            iterations: 500,
            ..AttackConfig::defaults_for(AttackKind::Swap)
        };
        let full = run_iterative_attack(&m, &x, &cfg).unwrap();
        let early = run_iterative_attack(
            &m,
            &x,
            &AttackConfig {
                early_stop: true,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(full.iterations_used, 500);
        if early.success {
            assert!(early.iterations_used < 500);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let a: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(a.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
