//! Training configuration as flat `key = value` text. Every field has a
//! default, unknown keys are rejected, and printing then parsing returns
//! the same value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_arg, Error, Result};
use crate::networks::NetworkConfig;
use crate::regularizers::RegularizerWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Mmuit,
    Tunit,
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmuit" => Ok(Setting::Mmuit),
            "tunit" => Ok(Setting::Tunit),
            other => Err(Error::Config(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub setting: Setting,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,

    /// `synthetic`, a directory with one subdirectory per domain, or a
    /// manifest file.
    pub dataset: String,
    pub synth_train_per_domain: usize,
    pub synth_test_per_domain: usize,
    pub synth_seed: u64,

    pub image_size: i64,
    pub channels: i64,
    pub style_dim: i64,
    pub noise_dim: i64,
    pub num_domains: i64,
    pub base_width: i64,
    pub max_width: i64,
    pub mapping_hidden: i64,
    pub mapping_layers: i64,

    pub lambda_adv: f64,
    pub lambda_cls: f64,
    pub lambda_sty: f64,
    /// Initial diversity weight; decays linearly to zero at `steps`.
    pub lambda_ds: f64,
    pub lambda_cyc: f64,
    pub r1_gamma: f64,

    pub lambda_shr: f64,
    pub lambda_adv_mix: f64,
    pub lambda_cls_mix: f64,
    pub mix_beta: f64,
    /// Train D to reject mixed-style images.
    pub adv_mix_on_d: bool,
    /// Train D's domain head on soft mixed targets.
    pub cls_mix_on_d: bool,

    pub lambda_mi: f64,
    pub lambda_con_e: f64,
    pub lambda_con_g: f64,
    pub lambda_rec: f64,
    pub tau: f64,
    pub queue_size: usize,
    /// Momentum of the queue encoder; 0 feeds the queue from E directly.
    pub queue_momentum: f64,

    pub lr_g: f64,
    pub lr_e: f64,
    pub lr_f: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// 0 disables the averaged translator.
    pub ema_decay: f64,

    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let reg = RegularizerWeights::default();
        Self {
            setting: Setting::Mmuit,
            seed: 0,
            steps: 20_000,
            batch_size: 16,
            dataset: "synthetic".into(),
            synth_train_per_domain: 2000,
            synth_test_per_domain: 200,
            synth_seed: 7,
            image_size: net.image_size,
            channels: net.channels,
            style_dim: net.style_dim,
            noise_dim: net.noise_dim,
            num_domains: net.num_domains,
            base_width: net.base_width,
            max_width: net.max_width,
            mapping_hidden: net.mapping_hidden,
            mapping_layers: net.mapping_layers,
            lambda_adv: 1.0,
            lambda_cls: 1.0,
            lambda_sty: 1.0,
            lambda_ds: 1.0,
            lambda_cyc: 1.0,
            r1_gamma: 1.0,
            lambda_shr: reg.shrinkage,
            lambda_adv_mix: reg.adv_mix,
            lambda_cls_mix: reg.cls_mix,
            mix_beta: 2.0,
            adv_mix_on_d: true,
            cls_mix_on_d: true,
            lambda_mi: 5.0,
            lambda_con_e: 1.0,
            lambda_con_g: 0.01,
            lambda_rec: 0.1,
            tau: 0.07,
            queue_size: 1024,
            queue_momentum: 0.0,
            lr_g: 1e-4,
            lr_e: 1e-4,
            lr_f: 1e-6,
            lr_d: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            weight_decay: 1e-4,
            ema_decay: 0.999,
            log_every: 100,
            checkpoint_every: 5000,
        }
    }
}

impl TrainConfig {
    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            channels: self.channels,
            image_size: self.image_size,
            style_dim: self.style_dim,
            noise_dim: self.noise_dim,
            num_domains: self.num_domains,
            base_width: self.base_width,
            max_width: self.max_width,
            mapping_hidden: self.mapping_hidden,
            mapping_layers: self.mapping_layers,
        }
    }

    pub fn regularizers(&self) -> RegularizerWeights {
        RegularizerWeights { shrinkage: self.lambda_shr, adv_mix: self.lambda_adv_mix, cls_mix: self.lambda_cls_mix }
    }

    /// Sets every regularizer weight to zero.
    pub fn without_regularizers(mut self) -> Self {
        self.lambda_shr = 0.0;
        self.lambda_adv_mix = 0.0;
        self.lambda_cls_mix = 0.0;
        self
    }

    /// Diversity weight at `step`.
    pub fn lambda_ds_at(&self, step: u64) -> f64 {
        if self.steps == 0 {
            return self.lambda_ds;
        }
        self.lambda_ds * (1.0 - step as f64 / self.steps as f64).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.network().validate()?;
        self.regularizers().validate()?;
        ensure_arg!(self.batch_size >= 2, "batch size must be at least 2");
        let weights = [
            self.lambda_adv,
            self.lambda_cls,
            self.lambda_sty,
            self.lambda_ds,
            self.lambda_cyc,
            self.r1_gamma,
            self.lambda_mi,
            self.lambda_con_e,
            self.lambda_con_g,
            self.lambda_rec,
        ];
        ensure_arg!(weights.iter().all(|w| w.is_finite() && *w >= 0.0), "loss weights must be finite and nonnegative");
        ensure_arg!(self.mix_beta > 0.0, "mix_beta must be positive");
        ensure_arg!(self.tau > 0.0, "tau must be positive");
        ensure_arg!(self.queue_size >= 1, "queue_size must be positive");
        ensure_arg!((0.0..1.0).contains(&self.queue_momentum), "queue_momentum must lie in [0, 1)");
        ensure_arg!((0.0..1.0).contains(&self.ema_decay), "ema_decay must lie in [0, 1)");
        for lr in [self.lr_g, self.lr_e, self.lr_f, self.lr_d] {
            ensure_arg!(lr > 0.0 && lr.is_finite(), "learning rates must be positive");
        }
        ensure_arg!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure_arg!(self.weight_decay >= 0.0, "weight decay must be nonnegative");
        ensure_arg!(self.synth_train_per_domain >= 1, "synthetic set needs training images");
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn awkward_values_round_trip() {
        let cfg = TrainConfig {
            setting: Setting::Tunit,
            lr_f: 1.0 / 3.0 * 1e-6,
            lambda_shr: 0.1 + 0.2,
            seed: u64::from(u32::MAX) * 3,
            dataset: "data dir/with \"quotes\"".into(),
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_and_bad_keys_rejected() {
        assert!(matches!(TrainConfig::from_text("lamda_shr = 0.1\n"), Err(Error::Config(_))));
        assert!(TrainConfig::from_text("setting = \"cyclegan\"\n").is_err());
        assert!(TrainConfig::from_text("lambda_shr = -1.0\n").is_err());
        let partial = TrainConfig::from_text("steps = 10\nsetting = \"tunit\"\n").unwrap();
        assert_eq!(partial.steps, 10);
        assert_eq!(partial.setting, Setting::Tunit);
        assert_eq!(partial.batch_size, 16);
    }

    #[test]
    fn diversity_weight_decays_to_zero() {
        let cfg = TrainConfig { steps: 100, lambda_ds: 2.0, ..Default::default() };
        assert_eq!(cfg.lambda_ds_at(0), 2.0);
        assert_eq!(cfg.lambda_ds_at(50), 1.0);
        assert_eq!(cfg.lambda_ds_at(100), 0.0);
        assert_eq!(cfg.lambda_ds_at(150), 0.0);
    }
}
