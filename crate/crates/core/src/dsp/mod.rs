pub mod mask;
pub mod stft;

pub use mask::{apply_mask, ratio_masks, stack_channels, MagnitudeSpectrogram, MaskSet, EPS_MASK};
pub use stft::{istft, stft, ComplexSpectrogram, Stft, StftConfig, WindowKind};
