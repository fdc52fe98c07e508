use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_epochs: usize,
    pub gan_epochs: usize,
    pub batch_size: usize,
    /// Encoder-generator learning rate.
    pub lr_eg: f64,
    /// Pretraining learning rate; `None` uses `lr_eg`.
    pub lr_pretrain: Option<f64>,
    pub lr_d: f64,
    pub lr_c: f64,
    /// Weight of the reconstruction MAE in the encoder-generator loss.
    pub lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Optional cap on optimization steps per stage.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            pretrain_epochs: 20,
            gan_epochs: 10,
            batch_size: 1,
            lr_eg: 1e-4,
            lr_pretrain: Some(3e-3),
            lr_d: 1e-5,
            lr_c: 2e-5,
            lambda: 10.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
        }
    }

    /// Full-scale schedule with an encoder-generator rate of 4.
    pub fn paper() -> Self {
        TrainConfig {
            pretrain_epochs: 20,
            gan_epochs: 100,
            lr_eg: 4.0,
            lr_pretrain: None,
            lr_d: 1e-6,
            ..TrainConfig::desk()
        }
    }

    pub fn pretrain_lr(&self) -> f64 {
        self.lr_pretrain.unwrap_or(self.lr_eg)
    }

    fn rates(&self) -> [(&'static str, f64); 4] {
        [
            ("lr_eg", self.lr_eg),
            ("lr_pretrain", self.pretrain_lr()),
            ("lr_d", self.lr_d),
            ("lr_c", self.lr_c),
        ]
    }

    /// Checks the configuration for a run. Learning rates must be positive.
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in self.rates() {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("train.{name} must be > 0, got {lr}")));
            }
        }
        self.validate_allowing_frozen()
    }

    /// Like [`TrainConfig::validate`] but accepts zero learning rates, which
    /// freeze a component.
    pub fn validate_allowing_frozen(&self) -> Result<()> {
        for (name, lr) in self.rates() {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("train.{name} must be >= 0, got {lr}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("train.lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "train.beta1 and train.beta2 must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!("train.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainConfig::desk().validate().unwrap();
        TrainConfig::paper().validate().unwrap();
        assert_eq!(TrainConfig::paper().lr_d, 1e-6);
        assert_eq!(TrainConfig::paper().lr_c, 2e-5);
        assert_eq!(TrainConfig::paper().gan_epochs, 100);
    }

    #[test]
    fn zero_rate_only_allowed_when_freezing() {
        let cfg = TrainConfig { lr_d: 0.0, ..TrainConfig::desk() };
        assert!(cfg.validate().is_err());
        cfg.validate_allowing_frozen().unwrap();
        let cfg = TrainConfig { lambda: -1.0, ..TrainConfig::desk() };
        assert!(cfg.validate_allowing_frozen().is_err());
    }
}
