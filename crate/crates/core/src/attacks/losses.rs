//! Attack objectives as differentiable scalar nodes.
//!
//! Every builder takes the log-probability node of the perturbed input
//! `f(x + r)` and, where needed, the noise node `r`. Reference distributions
//! (the swap target, `f(x)` for the KL form of GM) enter as constants, so no
//! gradient flows through them.

use crate::attacks::config::{GmMode, NormKind};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `KL(reference ‖ exp(log_probs))`, with `reference` held fixed.
pub fn kl_from_fixed<S: Scalar>(
    g: &mut Graph<S>,
    reference: &ProbVector<S>,
    log_probs: NodeId,
) -> Result<NodeId> {
    let c = g.value(log_probs).len();
    if reference.len() != c {
        return Err(Error::dim(format!(
            "reference has {} classes, model output {c}",
            reference.len()
        )));
    }
    // Σ p ln p is constant in r; keeping it makes the node's value the true divergence.
    let entropy_term: S = reference
        .as_slice()
        .iter()
        .filter(|&&p| p > S::zero())
        .map(|&p| p * p.ln())
        .sum();
    let weights = g.constant(Tensor::vector(reference.as_slice().to_vec()));
    let weighted = g.mul(weights, log_probs)?;
    let cross = g.sum(weighted)?;
    let neg_cross = g.scale(cross, -S::one())?;
    let constant = g.constant(Tensor::scalar(entropy_term));
    g.add(neg_cross, constant)
}

/// `-ln f(x')[class]`.
pub fn cross_entropy<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    class: usize,
) -> Result<NodeId> {
    let c = g.value(log_probs).len();
    if class >= c {
        return Err(Error::config(format!(
            "class {class} out of range for {c} classes"
        )));
    }
    let mut mask = vec![S::zero(); c];
    mask[class] = -S::one();
    let mask = g.constant(Tensor::vector(mask));
    let picked = g.mul(log_probs, mask)?;
    g.sum(picked)
}

/// `‖r‖` in the requested form.
pub fn noise_norm<S: Scalar>(g: &mut Graph<S>, noise: NodeId, norm: NormKind) -> Result<NodeId> {
    match norm {
        NormKind::Euclidean => {
            let sq = g.square(noise)?;
            let total = g.sum(sq)?;
            g.sqrt(total)
        }
        NormKind::SumAbs => {
            let a = g.abs(noise)?;
            g.sum(a)
        }
    }
}

/// `Σ_t |r_{t+1} - r_t|`.
pub fn total_variation<S: Scalar>(g: &mut Graph<S>, noise: NodeId) -> Result<NodeId> {
    let n = g.value(noise).len();
    if n < 2 {
        return Err(Error::dim(format!(
            "total variation needs at least 2 points, got {n}"
        )));
    }
    let head = g.slice(noise, 0, n - 1)?;
    let tail = g.slice(noise, 1, n - 1)?;
    let diff = g.sub(tail, head)?;
    let a = g.abs(diff)?;
    g.sum(a)
}

fn weighted_sum<S: Scalar>(
    g: &mut Graph<S>,
    base: NodeId,
    extra: NodeId,
    weight: f64,
) -> Result<NodeId> {
    let scaled = g.scale(extra, S::lit(weight))?;
    g.add(base, scaled)
}

/// `KL(target ‖ f(x'))`.
pub fn loss_swap<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    target: &ProbVector<S>,
) -> Result<NodeId> {
    kl_from_fixed(g, target, log_probs)
}

/// `KL(target ‖ f(x')) + alpha · ‖r‖`.
pub fn loss_swap_l2<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    noise: NodeId,
    target: &ProbVector<S>,
    alpha: f64,
    norm: NormKind,
) -> Result<NodeId> {
    let kl = loss_swap(g, log_probs, target)?;
    if alpha == 0.0 {
        return Ok(kl);
    }
    let n = noise_norm(g, noise, norm)?;
    weighted_sum(g, kl, n, alpha)
}

/// Gradient-method objective. `original` is `f(x)`, `target_class` the randomly
/// drawn class, which must differ from the prediction.
pub fn loss_gm<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    original: &ProbVector<S>,
    target_class: usize,
    mode: GmMode,
) -> Result<NodeId> {
    if target_class >= original.len() {
        return Err(Error::config(format!(
            "gm target class {target_class} out of range for {} classes",
            original.len()
        )));
    }
    if target_class == original.argmax() {
        return Err(Error::config(format!(
            "gm target class {target_class} equals the prediction"
        )));
    }
    match mode {
        GmMode::OneHotCe => cross_entropy(g, log_probs, target_class),
        GmMode::NegKl => {
            let kl = kl_from_fixed(g, original, log_probs)?;
            g.scale(kl, -S::one())
        }
    }
}

/// `mu · GM + alpha · ‖r‖`.
#[allow(clippy::too_many_arguments)]
pub fn loss_gm_l2<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    noise: NodeId,
    original: &ProbVector<S>,
    target_class: usize,
    mode: GmMode,
    mu: f64,
    alpha: f64,
    norm: NormKind,
) -> Result<NodeId> {
    let gm = loss_gm(g, log_probs, original, target_class, mode)?;
    let gm = if mu == 1.0 {
        gm
    } else {
        g.scale(gm, S::lit(mu))?
    };
    if alpha == 0.0 {
        return Ok(gm);
    }
    let n = noise_norm(g, noise, norm)?;
    weighted_sum(g, gm, n, alpha)
}

/// `GM(L2) + tv_weight · Σ |r_{t+1} - r_t|`.
#[allow(clippy::too_many_arguments)]
pub fn loss_sgm<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: NodeId,
    noise: NodeId,
    original: &ProbVector<S>,
    target_class: usize,
    mode: GmMode,
    mu: f64,
    alpha: f64,
    norm: NormKind,
    tv_weight: f64,
) -> Result<NodeId> {
    let base = loss_gm_l2(
        g,
        log_probs,
        noise,
        original,
        target_class,
        mode,
        mu,
        alpha,
        norm,
    )?;
    if tv_weight == 0.0 {
        return Ok(base);
    }
    let tv = total_variation(g, noise)?;
    weighted_sum(g, base, tv, tv_weight)
}
