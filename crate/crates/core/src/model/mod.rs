pub mod config;
pub mod loss;
pub mod network;
pub mod weights;

pub use config::{LossConfig, ModelConfig};
pub use loss::{change_probability, dice_loss, focal_loss, hybrid_loss, HybridLoss};
pub use network::{count_params, estimate_flops, MlpDecoder, ModelOutput, PatchEmbed, SteinFormer};
