pub mod dct;
pub mod frequency;
pub mod mixer;

pub use dct::{dct2, dct_basis, idct2, self_check, DctBasis, DctCheck};
pub use frequency::{select_frequencies, FrequencySpec, FrequencyStrategy};
pub use mixer::{FrequencyMixer, MixerConfig};
