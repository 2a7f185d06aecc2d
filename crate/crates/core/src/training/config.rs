use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Plain autoencoder, MSE only.
    Cae,
    /// Autoencoder plus a sigmoid-headed discriminator.
    VanillaAdv,
    /// Autoencoder plus a weight-clipped Wasserstein critic.
    WassersteinAdv,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Cae => "cae",
            Regime::VanillaAdv => "vanilla_adv",
            Regime::WassersteinAdv => "wasserstein_adv",
        }
    }

    pub fn caption(self) -> &'static str {
        match self {
            Regime::Cae => "CAE",
            Regime::VanillaAdv => "Vanilla",
            Regime::WassersteinAdv => "Wasserstein",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Regime::Cae
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cae" => Ok(Regime::Cae),
            "vanilla_adv" | "vanilla" => Ok(Regime::VanillaAdv),
            "wasserstein_adv" | "wasserstein" => Ok(Regime::WassersteinAdv),
            other => Err(Error::Config(format!(
                "unknown regime {other:?} (expected cae, vanilla_adv or wasserstein_adv)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;
pub const RMSPROP_ALPHA: f64 = 0.99;
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Subtracted from the learning rate every `lr_step_epochs` (CAE regime
    /// only).
    pub lr_decrement: f64,
    pub lr_step_epochs: usize,
    #[serde(default = "default_min_lr")]
    pub min_learning_rate: f64,
    pub critic_ratio: usize,
    pub clip_limit: f64,
    /// Weight of the adversarial term in the autoencoder objective.
    pub adv_weight: f64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_lr() -> f64 {
    1e-5
}

fn default_checkpoint_every() -> usize {
    250
}

impl TrainConfig {
    /// Full-scale recipe for a regime: 750 epochs; CAE batch 100 with Adam
    /// 1e-3 stepped down by 3e-4 every 250 epochs; vanilla batch 128 with
    /// Adam 1e-3; Wasserstein batch 128 with RMSProp 1.5e-4, five critic
    /// updates per autoencoder update and clipping at ±0.01.
    pub fn full(regime: Regime) -> Self {
        let base = TrainConfig {
            regime,
            epochs: 750,
            batch_size: 100,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            lr_decrement: 3e-4,
            lr_step_epochs: 250,
            min_learning_rate: default_min_lr(),
            critic_ratio: 5,
            clip_limit: 0.01,
            adv_weight: 1.0,
            checkpoint_every: default_checkpoint_every(),
            seed: 0,
        };
        match regime {
            Regime::Cae => base,
            Regime::VanillaAdv => TrainConfig {
                batch_size: 128,
                ..base
            },
            Regime::WassersteinAdv => TrainConfig {
                batch_size: 128,
                optimizer: OptimizerKind::Rmsprop,
                learning_rate: 1.5e-4,
                ..base
            },
        }
    }

    /// Desk-scale recipe: same optimizers and rates, 50 epochs, batch 16.
    pub fn desk(regime: Regime) -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            checkpoint_every: 25,
            ..TrainConfig::full(regime)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let expected = match self.regime {
            Regime::Cae | Regime::VanillaAdv => OptimizerKind::Adam,
            Regime::WassersteinAdv => OptimizerKind::Rmsprop,
        };
        if self.optimizer != expected {
            return err(format!(
                "regime {} trains with {:?}, not {:?}",
                self.regime, expected, self.optimizer
            ));
        }
        if self.epochs == 0 {
            return err("epochs must be positive".into());
        }
        if self.batch_size < 2 {
            return err("batch_size must be at least 2 (batch normalization)".into());
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) || !positive(self.min_learning_rate) {
            return err("learning rates must be positive and finite".into());
        }
        if !(self.lr_decrement.is_finite() && self.lr_decrement >= 0.0) || self.lr_step_epochs == 0 {
            return err("lr_decrement must be non-negative and lr_step_epochs positive".into());
        }
        if self.critic_ratio == 0 || !positive(self.clip_limit) {
            return err("critic_ratio and clip_limit must be positive".into());
        }
        if !(self.adv_weight.is_finite() && self.adv_weight >= 0.0) {
            return err("adv_weight must be non-negative and finite".into());
        }
        if self.checkpoint_every == 0 {
            return err("checkpoint_every must be positive".into());
        }
        let reference = TrainConfig::full(self.regime);
        if self.learning_rate != reference.learning_rate || self.batch_size != reference.batch_size {
            log::debug!(
                "{} run uses lr {} / batch {} instead of the reference {} / {}",
                self.regime,
                self.learning_rate,
                self.batch_size,
                reference.learning_rate,
                reference.batch_size
            );
        }
        Ok(())
    }
}

/// Learning rate for a zero-based epoch. The CAE regime steps the rate down
/// additively (`lr - decrement·⌊epoch/step⌋`, floored at the minimum); the
/// adversarial regimes keep it constant.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    match config.regime {
        Regime::Cae => {
            let steps = (epoch / config.lr_step_epochs) as f64;
            (config.learning_rate - config.lr_decrement * steps).max(config.min_learning_rate)
        }
        _ => config.learning_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_step_schedule() {
        let cfg = TrainConfig::full(Regime::Cae);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(lr_schedule(0, &cfg), 1e-3));
        assert!(close(lr_schedule(249, &cfg), 1e-3));
        assert!(close(lr_schedule(250, &cfg), 7e-4));
        assert!(close(lr_schedule(500, &cfg), 4e-4));
        assert!(close(lr_schedule(749, &cfg), 4e-4));
        assert_eq!(lr_schedule(10_000, &cfg), 1e-5);
    }

    #[test]
    fn adversarial_rates_are_constant() {
        let v = TrainConfig::full(Regime::VanillaAdv);
        assert_eq!(lr_schedule(0, &v), 1e-3);
        assert_eq!(lr_schedule(600, &v), 1e-3);
        let w = TrainConfig::full(Regime::WassersteinAdv);
        assert_eq!(lr_schedule(700, &w), 1.5e-4);
    }

    #[test]
    fn reference_recipes() {
        let c = TrainConfig::full(Regime::Cae);
        assert_eq!((c.epochs, c.batch_size, c.optimizer), (750, 100, OptimizerKind::Adam));
        let v = TrainConfig::full(Regime::VanillaAdv);
        assert_eq!(
            (v.batch_size, v.optimizer, v.learning_rate),
            (128, OptimizerKind::Adam, 1e-3)
        );
        let w = TrainConfig::full(Regime::WassersteinAdv);
        assert_eq!(
            (w.batch_size, w.optimizer, w.learning_rate, w.critic_ratio, w.clip_limit),
            (128, OptimizerKind::Rmsprop, 1.5e-4, 5, 0.01)
        );
        for r in [Regime::Cae, Regime::VanillaAdv, Regime::WassersteinAdv] {
            TrainConfig::full(r).validate().unwrap();
            TrainConfig::desk(r).validate().unwrap();
        }
    }

    #[test]
    fn optimizer_must_match_regime() {
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Rmsprop,
            ..TrainConfig::full(Regime::Cae)
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_regime_is_a_config_error() {
        assert!(matches!("vae".parse::<Regime>(), Err(Error::Config(_))));
        assert_eq!("Wasserstein_Adv".parse::<Regime>().unwrap(), Regime::WassersteinAdv);
    }
}
