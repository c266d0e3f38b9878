use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactors::{level_channels, BlockSettings, DifferenceMode, MixerKind};
use crate::spectral::FrequencyStrategy;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub blocks_per_level: usize,
    pub mlp_ratio: usize,
    pub heads: usize,
    pub p: usize,
    pub expansion: usize,
    pub strategy: FrequencyStrategy,
    pub mixer: MixerKind,
    pub cti_difference: DifferenceMode,
    pub decoder_channels: usize,
    pub num_classes: usize,
    /// `[height, width]` of the input images.
    pub input_size: [usize; 2],
    pub init_std: f64,
    /// Drives weight initialisation and random frequency selection.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_channels: vec![32, 48, 64, 96],
            blocks_per_level: 1,
            mlp_ratio: 2,
            heads: 8,
            p: 7,
            expansion: 3,
            strategy: FrequencyStrategy::PretrainedPriors,
            mixer: MixerKind::Frequency,
            cti_difference: DifferenceMode::Relative,
            decoder_channels: 32,
            num_classes: 2,
            input_size: [256, 256],
            init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn block_settings(&self) -> BlockSettings {
        BlockSettings {
            mlp_ratio: self.mlp_ratio,
            mixer: self.mixer,
            heads: self.heads,
            p: self.p,
            expansion: self.expansion,
            strategy: self.strategy,
            seed: Some(self.seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 4 || self.stage_channels.contains(&0) {
            return Err(Error::config("stage_channels must list four positive widths"));
        }
        if self.num_classes != 2 {
            return Err(Error::config("num_classes must be 2 (unchanged, changed)"));
        }
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return Err(Error::config(format!("input size {h}x{w} must be positive multiples of 32")));
        }
        for (name, v) in [
            ("blocks_per_level", self.blocks_per_level),
            ("mlp_ratio", self.mlp_ratio),
            ("expansion", self.expansion),
            ("decoder_channels", self.decoder_channels),
            ("heads", self.heads),
            ("p", self.p),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::config("init_std must be positive"));
        }
        if self.mixer == MixerKind::Frequency {
            let settings = self.block_settings();
            for s in 1..=4 {
                for c in level_channels(&self.stage_channels, s) {
                    settings.mixer_config(c)?;
                }
            }
        }
        Ok(())
    }
}

/// Weights and shape parameters of the hybrid loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_focal: f64,
    pub lambda_dice: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_focal: 1.0, lambda_dice: 1.0, alpha: 0.25, gamma: 2.0, dice_eps: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_focal >= 0.0
            && self.lambda_dice >= 0.0
            && self.gamma >= 0.0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.dice_eps > 0.0;
        if !ok {
            return Err(Error::config(format!("invalid loss settings {self:?}")));
        }
        Ok(())
    }
}
