//! Differentiable audio source-separation losses and loss-as-metric evaluation.
//!
//! Every loss returns a [`LossOutput`] holding its value and the gradient with
//! respect to the estimate, so the same functions drive training and
//! evaluation.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod grad_check;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod registry;
pub mod regularized;
pub mod spectral;
pub mod time;
pub mod wav;

pub use audio::{AudioBuffer, MultiSourceAudio};
pub use error::{Error, Result};
pub use loss::{LossOutput, EPS_LOG};
pub use registry::{LossKind, Metric};
