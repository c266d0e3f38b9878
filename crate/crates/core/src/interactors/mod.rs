pub mod block;
pub mod csi;
pub mod cti;

pub use block::{BaseBlock, BlockSettings, MixerKind, TokenMixer};
pub use csi::{level_channels, stage_depth, CsiStage, StageOutput};
pub use cti::{CtiBlock, CtiOutput, DifferenceMode};
