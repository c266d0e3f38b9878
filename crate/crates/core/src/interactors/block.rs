use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Buffer, Conv2d, Init, Ledger, Mode, Module, Param};
use crate::spectral::{FrequencyMixer, FrequencyStrategy, MixerConfig};
use crate::tensor::{add, gelu, ConvSpec, Tensor};

/// Token mixer used inside every base block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixerKind {
    #[default]
    Frequency,
    /// Plain learnable 3×3 convolution, for ablation.
    Conv,
}

/// Hyperparameters shared by every base block of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSettings {
    pub mlp_ratio: usize,
    pub mixer: MixerKind,
    pub heads: usize,
    pub p: usize,
    pub expansion: usize,
    pub strategy: FrequencyStrategy,
    pub seed: Option<u64>,
}

impl Default for BlockSettings {
    fn default() -> Self {
        BlockSettings {
            mlp_ratio: 2,
            mixer: MixerKind::Frequency,
            heads: 8,
            p: 7,
            expansion: 3,
            strategy: FrequencyStrategy::PretrainedPriors,
            seed: None,
        }
    }
}

impl BlockSettings {
    pub fn mixer_config(&self, channels: usize) -> Result<MixerConfig> {
        MixerConfig::new(channels, self.heads, self.p, self.expansion, self.strategy, self.seed)
    }
}

#[derive(Debug, Clone)]
pub enum TokenMixer {
    Frequency(FrequencyMixer),
    Conv(Conv2d),
}

impl TokenMixer {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            TokenMixer::Frequency(m) => m.forward(x),
            TokenMixer::Conv(c) => c.forward(x),
        }
    }
}

impl Module for TokenMixer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        match self {
            TokenMixer::Frequency(m) => m.visit_params(f),
            TokenMixer::Conv(c) => c.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        match self {
            TokenMixer::Frequency(m) => m.visit_params_mut(f),
            TokenMixer::Conv(c) => c.visit_params_mut(f),
        }
    }
}

/// Norm → token mixer → residual, then norm → channel MLP → residual.
#[derive(Debug, Clone)]
pub struct BaseBlock {
    pub name: String,
    pub channels: usize,
    pub norm1: BatchNorm2d,
    pub mixer: TokenMixer,
    pub norm2: BatchNorm2d,
    pub fc1: Conv2d,
    pub fc2: Conv2d,
}

impl BaseBlock {
    pub fn new<R: Rng>(name: &str, channels: usize, s: &BlockSettings, init: &mut Init<'_, R>) -> Result<Self> {
        let mixer = match s.mixer {
            MixerKind::Frequency => TokenMixer::Frequency(FrequencyMixer::new(
                &format!("{name}.mixer"),
                s.mixer_config(channels)?,
                init,
            )?),
            MixerKind::Conv => TokenMixer::Conv(Conv2d::new(
                &format!("{name}.mixer"),
                channels,
                channels,
                ConvSpec::new(3, 1, 1),
                init,
            )?),
        };
        let hidden = channels * s.mlp_ratio;
        Ok(BaseBlock {
            name: name.to_string(),
            channels,
            norm1: BatchNorm2d::new(&format!("{name}.norm1"), channels)?,
            mixer,
            norm2: BatchNorm2d::new(&format!("{name}.norm2"), channels)?,
            fc1: Conv2d::new(&format!("{name}.fc1"), channels, hidden, ConvSpec::pointwise(), init)?,
            fc2: Conv2d::new(&format!("{name}.fc2"), hidden, channels, ConvSpec::pointwise(), init)?,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4("base block")?;
        if c != self.channels {
            return Err(Error::config(format!(
                "{} expects {} channels, got {c}",
                self.name, self.channels
            )));
        }
        let y = add(x, &self.mixer.forward(&self.norm1.forward(x, mode)?)?)?;
        let hidden = gelu(&self.fc1.forward(&self.norm2.forward(&y, mode)?)?);
        add(&y, &self.fc2.forward(&hidden)?)
    }

    pub fn ledger(&self, h: usize, w: usize, applications: u64, ledger: &mut Ledger) {
        ledger.push(format!("{}.norm1", self.name), self.norm1.num_params(), 0, applications);
        match &self.mixer {
            TokenMixer::Frequency(m) => m.ledger(&format!("{}.mixer", self.name), h, w, applications, ledger),
            TokenMixer::Conv(c) => ledger.conv(c, h, w, applications),
        }
        ledger.push(format!("{}.norm2", self.name), self.norm2.num_params(), 0, applications);
        ledger.conv(&self.fc1, h, w, applications);
        ledger.conv(&self.fc2, h, w, applications);
    }
}

impl Module for BaseBlock {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.norm1.visit_params(f);
        self.mixer.visit_params(f);
        self.norm2.visit_params(f);
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.norm1.visit_params_mut(f);
        self.mixer.visit_params_mut(f);
        self.norm2.visit_params_mut(f);
        self.fc1.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.norm1.visit_buffers(f);
        self.norm2.visit_buffers(f);
    }
}
