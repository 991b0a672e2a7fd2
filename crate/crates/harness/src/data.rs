//! Synthetic items with their spectral views precomputed once.

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use seploss::dsp::{ratio_masks, stack_channels, ComplexSpectrogram, MagnitudeSpectrogram, MaskSet, Stft, StftConfig};
use seploss::spectral::psa_target;
use seploss::{AudioBuffer, MultiSourceAudio, Result};

use crate::synth::{synthesize, SynthSpec};

#[derive(Debug, Clone)]
pub struct Item {
    pub name: String,
    pub mixture: AudioBuffer,
    pub sources: MultiSourceAudio,
    pub mix_spec: ComplexSpectrogram,
    /// `|X|`, channels stacked along frames.
    pub mix_mag: Array2<f64>,
    /// `X/|X|`, or 1 where the mixture is silent.
    pub mix_phasor: Array2<Complex64>,
    pub target_mag: MagnitudeSpectrogram,
    pub target_masks: MaskSet,
    pub psa: Array3<f64>,
}

impl Item {
    pub fn new(name: String, mixture: AudioBuffer, sources: MultiSourceAudio, stft: &Stft) -> Result<Self> {
        let mix_spec = stft.forward(&mixture)?;
        let stacked = stack_channels(&mix_spec);
        let mix_mag = stacked.mapv(|z| z.norm());
        let mix_phasor = stacked.mapv(|z| if z.norm() > 0.0 { z / z.norm() } else { Complex64::new(1.0, 0.0) });
        let specs = sources.sources().iter().map(|s| stft.forward(s)).collect::<Result<Vec<_>>>()?;
        let target_mag = MagnitudeSpectrogram::from_spectrograms(&specs)?;
        Ok(Self {
            name,
            target_masks: ratio_masks(&target_mag),
            psa: psa_target(&specs, &mix_spec)?,
            target_mag,
            mix_phasor,
            mix_mag,
            mix_spec,
            mixture,
            sources,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.num_sources()
    }

    /// Complex spectrogram of one source estimate `Ŷ_k · e^{i∠X}`, unstacked to `channels × frames × bins`.
    pub fn with_mixture_phase(&self, estimate: ndarray::ArrayView2<f64>) -> ComplexSpectrogram {
        let (c, n, w) = self.mix_spec.data.dim();
        let z = Array2::from_shape_fn(self.mix_phasor.dim(), |(r, b)| self.mix_phasor[[r, b]] * estimate[[r, b]]);
        ComplexSpectrogram {
            data: z.into_shape_with_order((c, n, w)).expect("stacked layout"),
            config: self.mix_spec.config,
            signal_len: self.mix_spec.signal_len,
            sample_rate: self.mix_spec.sample_rate,
        }
    }

    /// Waveforms resynthesized from magnitude estimates with the mixture phase.
    pub fn resynthesize(&self, estimate: &MagnitudeSpectrogram, stft: &Stft) -> Result<MultiSourceAudio> {
        let waves = estimate
            .data()
            .outer_iter()
            .map(|plane| stft.inverse(&self.with_mixture_phase(plane)))
            .collect::<Result<Vec<_>>>()?;
        MultiSourceAudio::from_sources(&waves)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub stft: StftConfig,
}

impl Dataset {
    /// `count` items rendered with seeds `first_seed, first_seed + 1, ...`.
    pub fn synthesize(spec: &SynthSpec, count: usize, first_seed: u64, stft: StftConfig) -> Result<Self> {
        let plan = Stft::new(stft)?;
        let items = (0..count as u64)
            .map(|i| {
                let seed = first_seed + i;
                let (mix, src) = synthesize(&spec.with_seed(seed))?;
                Item::new(format!("item{seed:04}"), mix, src, &plan)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { items, stft })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    pub fn num_sources(&self) -> usize {
        self.items.first().map_or(0, Item::num_sources)
    }
}
