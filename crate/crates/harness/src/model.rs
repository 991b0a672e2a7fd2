//! Frame-wise mask predictor: `log1p|X|` → tanh hidden layer → `K·Ω` logits → softmax over sources.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use seploss::dsp::{MagnitudeSpectrogram, MaskSet};
use seploss::nn::{init_normal, load_params, save_params, Linear, ParamLayout};
use seploss::regularized::Separator;
use seploss::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskModel {
    layout: ParamLayout,
    input: Linear,
    output: Linear,
    sources: usize,
    bins: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MaskCache {
    features: Array2<f64>,
    hidden: Array2<f64>,
    masks: Array3<f64>,
    mix_mag: Array2<f64>,
}

impl MaskCache {
    pub fn masks(&self) -> &Array3<f64> {
        &self.masks
    }
}

impl MaskModel {
    pub fn new(bins: usize, sources: usize, config: ModelConfig) -> Self {
        let mut layout = ParamLayout::default();
        let input = Linear::new(&mut layout, "hidden", bins, config.hidden);
        let output = Linear::new(&mut layout, "logits", config.hidden, sources * bins);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_normal(&mut rng, &mut params[input.weight_range()], bins, 1.0);
        init_normal(&mut rng, &mut params[output.weight_range()], config.hidden, 0.5);
        Self {
            layout,
            input,
            output,
            sources,
            bins,
            params,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    fn weights(&self, layer: &Linear) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((layer.outputs, layer.inputs), &self.params[layer.weight_range()]).expect("layout")
    }

    pub fn masks(&self, mix_mag: &Array2<f64>) -> Result<(MaskSet, MaskCache)> {
        let (rows, bins) = mix_mag.dim();
        if bins != self.bins {
            return Err(Error::Shape(format!("model expects {} bins, got {bins}", self.bins)));
        }
        let features = mix_mag.mapv(f64::ln_1p);
        let b1 = ndarray::aview1(&self.params[self.input.bias_range()]);
        let hidden = (features.dot(&self.weights(&self.input).t()) + b1).mapv(f64::tanh);
        let b2 = ndarray::aview1(&self.params[self.output.bias_range()]);
        let logits = hidden.dot(&self.weights(&self.output).t()) + b2;
        let (k, w) = (self.sources, self.bins);
        let mut masks = Array3::zeros((k, rows, w));
        for r in 0..rows {
            for b in 0..w {
                let max = (0..k).map(|s| logits[[r, s * w + b]]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in 0..k {
                    let e = (logits[[r, s * w + b]] - max).exp();
                    masks[[s, r, b]] = e;
                    total += e;
                }
                for s in 0..k {
                    masks[[s, r, b]] /= total;
                }
            }
        }
        let set = MaskSet::new(masks.clone())?;
        Ok((
            set,
            MaskCache {
                features,
                hidden,
                masks,
                mix_mag: mix_mag.clone(),
            },
        ))
    }

    /// Parameter gradient for `∂L/∂masks = grad`.
    pub fn backward_masks(&self, cache: &MaskCache, grad: &Array3<f64>) -> Vec<f64> {
        let (k, rows, w) = cache.masks.dim();
        let m = &cache.masks;
        let mut dlogits = Array2::zeros((rows, k * w));
        for r in 0..rows {
            for b in 0..w {
                let dot: f64 = (0..k).map(|s| m[[s, r, b]] * grad[[s, r, b]]).sum();
                for s in 0..k {
                    dlogits[[r, s * w + b]] = m[[s, r, b]] * (grad[[s, r, b]] - dot);
                }
            }
        }
        let mut g = vec![0.0; self.params.len()];
        let dw2 = dlogits.t().dot(&cache.hidden);
        g[self.output.weight_range()].copy_from_slice(dw2.as_slice().expect("standard layout"));
        let db2 = dlogits.sum_axis(Axis(0));
        g[self.output.bias_range()].copy_from_slice(db2.as_slice().expect("standard layout"));
        let dh = dlogits.dot(&self.weights(&self.output));
        let dpre = dh * cache.hidden.mapv(|h| 1.0 - h * h);
        let dw1 = dpre.t().dot(&cache.features);
        g[self.input.weight_range()].copy_from_slice(dw1.as_slice().expect("standard layout"));
        let db1 = dpre.sum_axis(Axis(0));
        g[self.input.bias_range()].copy_from_slice(db1.as_slice().expect("standard layout"));
        g
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_params(stem, &self.layout, &self.params)
    }

    pub fn load_into(&mut self, stem: &Path) -> Result<()> {
        self.params = load_params(stem, &self.layout)?;
        Ok(())
    }
}

impl Separator for MaskModel {
    type Cache = MaskCache;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn separate(&self, mixture: &Array2<f64>) -> Result<(MagnitudeSpectrogram, MaskCache)> {
        let (_, cache) = self.masks(mixture)?;
        let est = &cache.masks * &mixture.view().insert_axis(Axis(0));
        Ok((MagnitudeSpectrogram::new(est)?, cache))
    }

    fn backward(&self, cache: &MaskCache, grad: &Array3<f64>) -> Vec<f64> {
        let dmask = grad * &cache.mix_mag.view().insert_axis(Axis(0));
        self.backward_masks(cache, &dmask)
    }
}
