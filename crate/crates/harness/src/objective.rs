//! Training objectives: every registered loss expressed as a value and a gradient with
//! respect to the model's masks.

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use seploss::dsp::{apply_mask, MagnitudeSpectrogram, MaskSet, Stft, StftConfig};
use seploss::metrics::MetricContext;
use seploss::regularized::{deep_feature_loss, DeepFeatureWeights, EmbeddingNet};
use seploss::spectral::{self, DissimConfig, MrsConfig};
use seploss::time::{self, Norm};
use seploss::{Error, LossKind, LossOutput, Result};

use crate::data::Item;

/// Tunable parameters of the individual losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda: f64,
    pub feature_layer: usize,
    pub embedding_seed: u64,
    pub mrs: MrsConfig,
}

impl Default for LossParams {
    fn default() -> Self {
        let deep = DeepFeatureWeights::default();
        Self {
            beta: DissimConfig::default().beta,
            gamma: 0.5,
            delta: deep.delta,
            lambda: deep.lambda,
            feature_layer: 1,
            embedding_seed: 0,
            mrs: MrsConfig::default(),
        }
    }
}

impl LossParams {
    /// Metric settings matching these loss parameters.
    pub fn metric_context(&self, stft: StftConfig, frame_seconds: f64) -> MetricContext {
        MetricContext {
            stft,
            mrs: self.mrs.clone(),
            dissim: DissimConfig { beta: self.beta },
            embedding: EmbeddingNet::new(self.embedding_seed),
            feature_layer: self.feature_layer,
            deep_weights: DeepFeatureWeights {
                delta: self.delta,
                lambda: self.lambda,
            },
            frame_seconds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Objective {
    pub kind: LossKind,
    stft: Stft,
    params: LossParams,
    embedding: EmbeddingNet,
}

impl Objective {
    pub fn new(kind: LossKind, stft: StftConfig, params: &LossParams) -> Result<Self> {
        if kind == LossKind::Adversarial {
            return Err(Error::Config("the adversarial loss is trained with its own step".into()));
        }
        params.mrs.validate()?;
        Ok(Self {
            kind,
            stft: Stft::new(stft)?,
            params: params.clone(),
            embedding: EmbeddingNet::new(params.embedding_seed),
        })
    }

    /// Loss of the masked estimate of `item` and `∂L/∂masks`.
    pub fn evaluate(&self, item: &Item, masks: &MaskSet) -> Result<LossOutput> {
        let mask_l = |norm| spectral::mask_lp(norm, masks, &item.target_masks);
        match self.kind {
            LossKind::L1Mask => return mask_l(Norm::L1),
            LossKind::L2Mask => return mask_l(Norm::L2),
            _ => {}
        }
        let est = apply_mask(masks, &item.mix_mag)?;
        let d_est = if self.kind.is_time_domain() {
            self.time_domain(item, &est)?
        } else {
            self.spectral(item, &est)?
        };
        let mix = item.mix_mag.view().insert_axis(Axis(0));
        let grad = &d_est.gradient * &mix;
        Ok(LossOutput::new(d_est.value, grad).flagged(d_est.degenerate))
    }

    fn spectral(&self, item: &Item, est: &MagnitudeSpectrogram) -> Result<LossOutput> {
        let y = &item.target_mag;
        let p = &self.params;
        match self.kind {
            LossKind::L1Freq => spectral::lp_freq(Norm::L1, est, y),
            LossKind::L2Freq => spectral::lp_freq(Norm::L2, est, y),
            LossKind::LogL1Freq => spectral::log_lp_freq(Norm::L1, est, y),
            LossKind::LogL2Freq => spectral::log_lp_freq(Norm::L2, est, y),
            LossKind::SisdrFreq => spectral::sisdr_freq(est, y),
            LossKind::Psa => spectral::psa_loss(est, &item.psa),
            LossKind::Dissim => spectral::dissim_loss(est, y, DissimConfig { beta: p.beta }),
            LossKind::Combination => spectral::combination_loss(est, y),
            LossKind::DeepFeature => deep_feature_loss(
                est,
                y,
                &self.embedding,
                p.feature_layer,
                DeepFeatureWeights {
                    delta: p.delta,
                    lambda: p.lambda,
                },
            ),
            other => Err(Error::Config(format!("{other} is not a spectrogram loss"))),
        }
    }

    /// Waveform losses through the inverse STFT with mixture phase; the waveform gradient is
    /// pulled back through the inverse's adjoint onto the magnitudes.
    fn time_domain(&self, item: &Item, est: &MagnitudeSpectrogram) -> Result<LossOutput> {
        let waves = item.resynthesize(est, &self.stft)?;
        let out = match self.kind {
            LossKind::L1Time => time::lp_time(Norm::L1, &waves, &item.sources)?,
            LossKind::L2Time => time::lp_time(Norm::L2, &waves, &item.sources)?,
            LossKind::LogL1Time => time::log_lp_time(Norm::L1, &waves, &item.sources)?,
            LossKind::LogL2Time => time::log_lp_time(Norm::L2, &waves, &item.sources)?,
            LossKind::SisdrTime => time::sisdr_time(&waves, &item.sources)?,
            LossKind::SdsdrTime => time::sdsdr_time(&waves, &item.sources)?,
            LossKind::Mrs => spectral::mrs_loss(&waves, &item.sources, &self.params.mrs)?,
            other => return Err(Error::Config(format!("{other} is not a waveform loss"))),
        };
        let frames = item.mix_spec.frames();
        let (k, rows, bins) = est.dim();
        let mut grad = Array3::zeros((k, rows, bins));
        for (kk, g_wave) in out.gradient.outer_iter().enumerate() {
            let g_spec = self.stft.inverse_adjoint(&g_wave.to_owned(), frames);
            let stacked = g_spec.to_shape((rows, bins)).expect("stacked layout");
            let plane: Array2<f64> = Array2::from_shape_fn((rows, bins), |(r, b)| {
                (stacked[[r, b]] * item.mix_phasor[[r, b]].conj()).re
            });
            grad.index_axis_mut(Axis(0), kk).assign(&plane);
        }
        Ok(LossOutput::new(out.value, grad).flagged(out.degenerate))
    }
}
