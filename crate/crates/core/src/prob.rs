//! Probability vectors, KL divergence and the rank-swap target.

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Lower bound applied to the second argument of [`kl_divergence`].
pub const KL_FLOOR: f64 = 1e-12;

/// A softmax output: entries in `[0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<S>(Vec<S>);

impl<S: Scalar> ProbVector<S> {
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::dim("empty probability vector"));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !(**p >= S::zero() && **p <= S::one()))
        {
            return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
        }
        let total: S = probs.iter().copied().sum();
        if (total - S::one()).abs() > S::prob_tolerance() {
            return Err(Error::Contract(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    /// Exponentiates log-probabilities (as produced by a log-softmax).
    pub fn from_log_probs(log_probs: &[S]) -> Result<Self> {
        Self::new(log_probs.iter().map(|v| v.exp()).collect())
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<S> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Indices of the largest and second-largest entries (first index wins ties).
    pub fn top_two(&self) -> Option<(usize, usize)> {
        if self.0.len() < 2 {
            return None;
        }
        let first = self.argmax();
        let mut second = usize::from(first == 0);
        for (i, &p) in self.0.iter().enumerate() {
            if i != first && p > self.0[second] {
                second = i;
            }
        }
        Some((first, second))
    }

    pub fn one_hot(len: usize, class: usize) -> Result<Self> {
        if class >= len {
            return Err(Error::config(format!(
                "class {class} out of range for {len} classes"
            )));
        }
        let mut v = vec![S::zero(); len];
        v[class] = S::one();
        Ok(Self(v))
    }
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln(0 / q) = 0` and `q_i` floored at
/// [`KL_FLOOR`]. Never negative.
pub fn kl_divergence<S: Scalar>(p: &ProbVector<S>, q: &ProbVector<S>) -> Result<S> {
    if p.len() != q.len() {
        return Err(Error::dim(format!(
            "kl_divergence over {} and {} classes",
            p.len(),
            q.len()
        )));
    }
    let floor = S::lit(KL_FLOOR);
    let total: S = p
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .filter(|(&pi, _)| pi > S::zero())
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.max(floor).ln()))
        .sum();
    Ok(total.max(S::zero()))
}

/// Builds the rank-swapped target distribution.
///
/// With `i1`, `i2` the top two classes of `original` and `s` their summed
/// mass, the target puts `gamma * s` on `i1` and `(1 - gamma) * s` on `i2`;
/// every other entry is copied unchanged. For `gamma < 0.5` the runner-up
/// becomes the arg-max, at `gamma = 0.5` the two tie.
pub fn build_swap_target<S: Scalar>(original: &ProbVector<S>, gamma: f64) -> Result<ProbVector<S>> {
    if !(gamma > 0.0 && gamma <= 0.5) {
        return Err(Error::config(format!("gamma {gamma} outside (0, 0.5]")));
    }
    let (first, second) = original
        .top_two()
        .ok_or_else(|| Error::config("rank swap needs at least 2 classes"))?;
    let mut target = original.0.clone();
    let mass = target[first] + target[second];
    let gamma = S::lit(gamma);
    target[first] = gamma * mass;
    target[second] = (S::one() - gamma) * mass;
    Ok(ProbVector(target))
}
