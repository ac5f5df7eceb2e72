//! Training configuration: JSON file plus CLI overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tstnet_core::localizer::LossConfig;
use tstnet_core::model::{AblationFlags, ModelConfig};

use crate::manifest::{fnv1a64, DataShape};

#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq, Eq)]
#[serde(default)]
pub struct FlagSettings {
    pub no_ssr: bool,
    pub no_tg_filters_shared: bool,
    pub no_filter: bool,
    pub no_dtu: bool,
    pub no_gru: bool,
    pub no_reverse: bool,
    pub no_refine: bool,
}

impl FlagSettings {
    pub fn to_flags(&self) -> AblationFlags {
        AblationFlags {
            no_ssr: self.no_ssr,
            no_tg_filters_shared: self.no_tg_filters_shared,
            no_filter: self.no_filter,
            no_dtu: self.no_dtu,
            no_gru: self.no_gru,
            no_reverse: self.no_reverse,
            no_refine: self.no_refine,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossSettings {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub positive_iou: f64,
    pub lambda: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        let d = LossConfig::default();
        Self { tau_lo: d.tau_lo, tau_hi: d.tau_hi, positive_iou: d.positive_iou, lambda: d.lambda }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub m: usize,
    pub k_objects: usize,
    pub k_filters: usize,
    pub d: usize,
    pub d_o: usize,
    pub d_in: usize,
    pub d_w: usize,
    pub d_g: usize,
    pub n_max: usize,
    pub proposal_budget: usize,
    pub leaky_slope: f64,
    pub clip_norm: f64,
    pub val_split: f64,
    pub top_n: usize,
    pub flags: FlagSettings,
    pub loss: LossSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.0008,
            epochs: 60,
            batch: 64,
            seed: 0,
            m: 64,
            k_objects: 15,
            k_filters: 5,
            d: 512,
            d_o: 1024,
            d_in: 4096,
            d_w: 300,
            d_g: 2400,
            n_max: 25,
            proposal_budget: 384,
            leaky_slope: 0.01,
            clip_norm: 10.0,
            val_split: 0.2,
            top_n: 5,
            flags: FlagSettings::default(),
            loss: LossSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let positive = [
            ("lr", self.lr > 0.0),
            ("epochs", self.epochs > 0),
            ("batch", self.batch > 0),
            ("m", self.m > 0),
            ("k_objects", self.k_objects > 0),
            ("k_filters", self.k_filters > 0),
            ("d", self.d > 0),
            ("proposal_budget", self.proposal_budget > 0),
            ("top_n", self.top_n > 0),
        ];
        for (name, ok) in positive {
            anyhow::ensure!(ok, "config field {name} must be positive");
        }
        anyhow::ensure!(
            self.k_filters <= self.k_objects,
            "k_filters ({}) must not exceed k_objects ({})",
            self.k_filters,
            self.k_objects
        );
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            k_objects: self.k_objects,
            k_filters: self.k_filters,
            d_o: self.d_o,
            d_in: self.d_in,
            d_w: self.d_w,
            d_g: self.d_g,
            m: self.m,
            n_max: self.n_max,
            proposal_budget: self.proposal_budget,
            leaky_slope: self.leaky_slope,
            flags: self.flags.to_flags(),
            loss: LossConfig {
                tau_lo: self.loss.tau_lo,
                tau_hi: self.loss.tau_hi,
                positive_iou: self.loss.positive_iou,
                lambda: self.loss.lambda,
            },
        }
    }

    pub fn data_shape(&self) -> DataShape {
        DataShape {
            m: self.m,
            k_objects: self.k_objects,
            d_o: self.d_o,
            d_in: self.d_in,
            d_w: self.d_w,
            d_g: self.d_g,
        }
    }

    /// Stable hash of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        fnv1a64(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr, 0.0008);
        assert_eq!(cfg.epochs, 60);
        assert_eq!(cfg.batch, 64);
        assert_eq!(cfg.d, 512);
        assert_eq!(cfg.k_objects, 15);
        assert_eq!(cfg.k_filters, 5);
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.lr = 0.001;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"m": 32, "d": 64}"#).unwrap();
        assert_eq!(cfg.m, 32);
        assert_eq!(cfg.d, 64);
        assert_eq!(cfg.lr, 0.0008);
        assert!(!cfg.flags.no_dtu);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig { k_filters: 20, k_objects: 5, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
