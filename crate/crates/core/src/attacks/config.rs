use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "fgsm")]
    Fgsm,
    #[serde(rename = "bim")]
    Bim,
    #[serde(rename = "gm")]
    Gm,
    #[serde(rename = "gm-l2")]
    GmL2,
    #[serde(rename = "sgm")]
    Sgm,
    #[serde(rename = "swap")]
    Swap,
    #[serde(rename = "swap-l2")]
    SwapL2,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Gm,
        AttackKind::GmL2,
        AttackKind::Sgm,
        AttackKind::Swap,
        AttackKind::SwapL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Gm => "gm",
            AttackKind::GmL2 => "gm-l2",
            AttackKind::Sgm => "sgm",
            AttackKind::Swap => "swap",
            AttackKind::SwapL2 => "swap-l2",
        }
    }

    pub fn is_iterative(self) -> bool {
        self != AttackKind::Fgsm
    }

    pub fn is_swap(self) -> bool {
        matches!(self, AttackKind::Swap | AttackKind::SwapL2)
    }

    pub fn is_gm(self) -> bool {
        matches!(self, AttackKind::Gm | AttackKind::GmL2 | AttackKind::Sgm)
    }

    /// Whether the objective carries the `alpha · ‖r‖` penalty.
    pub fn uses_alpha(self) -> bool {
        matches!(
            self,
            AttackKind::GmL2 | AttackKind::Sgm | AttackKind::SwapL2
        )
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = AttackKind::ALL.iter().map(|k| k.name()).collect();
                Error::config(format!(
                    "unknown attack '{s}', expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// When the noise is projected back into the `epsilon` ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipSchedule {
    PerStep,
    FinalOnly,
}

/// Objective used by the gradient-method baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GmMode {
    /// `-ln f(x')[k]` for a random class `k` other than the prediction.
    OneHotCe,
    /// `-KL(f(x) ‖ f(x'))`.
    NegKl,
}

/// How `‖r‖` in the regularised objectives is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    /// `sqrt(Σ r_t²)`.
    Euclidean,
    /// `Σ |r_t|`.
    SumAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseInit {
    Zeros,
    /// Uniform in `[-epsilon / 10, epsilon / 10]`, drawn from the run seed.
    Uniform,
}

macro_rules! impl_from_str {
    ($ty:ty, $what:literal, $($text:literal => $val:expr),+) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
                    $($text => Ok($val),)+
                    other => Err(Error::config(format!(
                        concat!("unknown ", $what, " '{}', expected one of {}"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

impl_from_str!(ClipSchedule, "clip schedule", "per-step" => ClipSchedule::PerStep, "final-only" => ClipSchedule::FinalOnly);
impl_from_str!(GmMode, "gm mode", "one-hot-ce" => GmMode::OneHotCe, "neg-kl" => GmMode::NegKl);
impl_from_str!(NormKind, "norm", "euclidean" => NormKind::Euclidean, "sum-abs" => NormKind::SumAbs);
impl_from_str!(NoiseInit, "noise init", "zeros" => NoiseInit::Zeros, "uniform" => NoiseInit::Uniform);

/// Every hyperparameter of one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Step size.
    pub beta: f64,
    /// L∞ bound on the noise.
    pub epsilon: f64,
    pub iterations: usize,
    /// Share of the top-two mass kept on the predicted class by the swap target.
    pub gamma: f64,
    /// Weight of the noise-norm penalty.
    pub alpha: f64,
    /// Weight of the gradient-method term.
    pub mu: f64,
    /// Weight of the total-variation penalty (SGM).
    pub tv_weight: f64,
    pub seed: u64,
    pub clip_schedule: ClipSchedule,
    pub early_stop: bool,
    pub gm_mode: GmMode,
    pub norm: NormKind,
    pub noise_init: NoiseInit,
}

impl AttackConfig {
    /// Published defaults for each attack: 1000 iterations of step 0.0005
    /// within an L∞ budget of 0.1 (FGSM: a single step of 0.1), gamma 0.48,
    /// alpha 0.01 for SWAP-L2 and 1 for GM-L2 / SGM, TV weight 0.1 for SGM.
    pub fn defaults_for(kind: AttackKind) -> Self {
        let (beta, iterations) = match kind {
            AttackKind::Fgsm => (0.1, 1),
            _ => (0.0005, 1000),
        };
        let alpha = match kind {
            AttackKind::SwapL2 => 0.01,
            AttackKind::GmL2 | AttackKind::Sgm => 1.0,
            _ => 0.0,
        };
        Self {
            kind,
            beta,
            epsilon: 0.1,
            iterations,
            gamma: 0.48,
            alpha,
            mu: 1.0,
            tv_weight: if kind == AttackKind::Sgm { 0.1 } else { 0.0 },
            seed: 0,
            clip_schedule: ClipSchedule::PerStep,
            early_stop: false,
            gm_mode: GmMode::OneHotCe,
            norm: NormKind::Euclidean,
            noise_init: NoiseInit::Zeros,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::config(format!("{what} = {v} is out of range"));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(bad("beta", self.beta));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(bad("epsilon", self.epsilon));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::config(format!(
                "gamma = {} must lie in (0, 0.5]",
                self.gamma
            )));
        }
        for (what, v) in [
            ("alpha", self.alpha),
            ("mu", self.mu),
            ("tv-weight", self.tv_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(what, v));
            }
        }
        Ok(())
    }

    /// Reads a key-value config file (TOML syntax, keys as in [`AttackOverrides`])
    /// on top of the defaults for `kind`.
    pub fn from_kv_str(kind: AttackKind, text: &str) -> Result<Self> {
        AttackOverrides::from_kv_str(text)?.apply(kind)
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::defaults_for(AttackKind::Swap)
    }
}

/// Partial attack settings layered over per-kind defaults. Unset fields keep
/// the default of whichever attack they are applied to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AttackOverrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_schedule: Option<ClipSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gm_mode: Option<GmMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_init: Option<NoiseInit>,
}

impl AttackOverrides {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad attack config: {e}")))
    }

    /// Fields set in `other` win.
    pub fn merged_with(&self, other: &AttackOverrides) -> AttackOverrides {
        macro_rules! pick {
            ($($f:ident),+) => { AttackOverrides { $($f: other.$f.or(self.$f)),+ } };
        }
        pick!(
            beta,
            epsilon,
            iterations,
            gamma,
            alpha,
            mu,
            tv_weight,
            seed,
            clip_schedule,
            early_stop,
            gm_mode,
            norm,
            noise_init
        )
    }

    pub fn apply(&self, kind: AttackKind) -> Result<AttackConfig> {
        let mut c = AttackConfig::defaults_for(kind);
        macro_rules! set {
            ($($f:ident),+) => { $(if let Some(v) = self.$f { c.$f = v; })+ };
        }
        set!(
            beta,
            epsilon,
            iterations,
            gamma,
            alpha,
            mu,
            tv_weight,
            seed,
            clip_schedule,
            early_stop,
            gm_mode,
            norm,
            noise_init
        );
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let swap = AttackConfig::defaults_for(AttackKind::Swap);
        assert_eq!(
            (swap.beta, swap.epsilon, swap.iterations, swap.gamma),
            (0.0005, 0.1, 1000, 0.48)
        );
        assert_eq!(AttackConfig::defaults_for(AttackKind::SwapL2).alpha, 0.01);
        assert_eq!(AttackConfig::defaults_for(AttackKind::Fgsm).beta, 0.1);
        let bim = AttackConfig::defaults_for(AttackKind::Bim);
        assert_eq!((bim.beta, bim.epsilon, bim.iterations), (0.0005, 0.1, 1000));
        assert_eq!(AttackConfig::defaults_for(AttackKind::GmL2).alpha, 1.0);
        let sgm = AttackConfig::defaults_for(AttackKind::Sgm);
        assert_eq!((sgm.alpha, sgm.tv_weight, sgm.mu), (1.0, 0.1, 1.0));
        for k in AttackKind::ALL {
            AttackConfig::defaults_for(k).validate().unwrap();
            assert!(!AttackConfig::defaults_for(k).early_stop);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert_eq!("SWAP_L2".parse::<AttackKind>().unwrap(), AttackKind::SwapL2);
        let err = "pgd".parse::<AttackKind>().unwrap_err().to_string();
        assert!(err.contains("swap-l2") && err.contains("fgsm"), "{err}");
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let base = AttackConfig::default();
        for bad in [
            AttackConfig {
                gamma: 0.6,
                ..base.clone()
            },
            AttackConfig {
                gamma: 0.0,
                ..base.clone()
            },
            AttackConfig {
                iterations: 0,
                ..base.clone()
            },
            AttackConfig {
                epsilon: 0.0,
                ..base.clone()
            },
            AttackConfig {
                alpha: -1.0,
                ..base.clone()
            },
            AttackConfig {
                beta: f64::NAN,
                ..base.clone()
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        AttackConfig {
            beta: 0.0,
            gamma: 0.5,
            ..base
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn key_value_file_overrides_defaults() {
        let text =
            "beta = 0.001\ngamma = 0.45\nclip-schedule = \"final-only\"\nnorm = \"sum-abs\"\n";
        let c = AttackConfig::from_kv_str(AttackKind::SwapL2, text).unwrap();
        assert_eq!((c.beta, c.gamma, c.alpha), (0.001, 0.45, 0.01));
        assert_eq!(c.clip_schedule, ClipSchedule::FinalOnly);
        assert_eq!(c.norm, NormKind::SumAbs);
        assert!(AttackOverrides::from_kv_str("unknown = 1").is_err());
        assert!(AttackConfig::from_kv_str(AttackKind::Swap, "gamma = 0.7").is_err());
    }

    #[test]
    fn later_overrides_win() {
        let file = AttackOverrides {
            beta: Some(0.1),
            gamma: Some(0.3),
            ..Default::default()
        };
        let flags = AttackOverrides {
            gamma: Some(0.4),
            ..Default::default()
        };
        let m = file.merged_with(&flags);
        assert_eq!((m.beta, m.gamma), (Some(0.1), Some(0.4)));
    }
}
