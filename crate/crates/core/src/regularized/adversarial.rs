//! Least-squares adversarial training with label smoothing, one
//! discriminator per source.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::loss::LossOutput;
use crate::nn::{init_normal, Activation, Adam, Conv2d, Linear, ParamLayout};
use crate::spectral::lp_freq;
use crate::time::Norm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdvConfig {
    pub gamma: f64,
    pub real_label: f64,
    pub fake_label: f64,
    pub quarter_scale: f64,
}

impl Default for AdvConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            real_label: 0.9,
            fake_label: 0.1,
            quarter_scale: 0.25,
        }
    }
}

fn check_finite(scores: &[f64]) -> Result<()> {
    if scores.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("discriminator score"))
    }
}

/// Per-source discriminator loss; the gradient is with respect to the four
/// scores in argument order.
pub fn discriminator_loss(
    d_real_unpair: f64,
    d_real_pair: f64,
    d_fake_unpair: f64,
    d_fake_pair: f64,
    config: &AdvConfig,
) -> Result<LossOutput<[f64; 4]>> {
    let scores = [d_real_unpair, d_real_pair, d_fake_unpair, d_fake_pair];
    check_finite(&scores)?;
    let labels = [config.real_label, config.real_label, config.fake_label, config.fake_label];
    let q = config.quarter_scale;
    let mut value = 0.0;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d = scores[i] - labels[i];
        value += q * d * d;
        grad[i] = 2.0 * q * d;
    }
    Ok(LossOutput::new(value, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparatorAdvLoss {
    pub value: f64,
    pub l_sep: f64,
    /// `∂value/∂D_k(f(X)_k)`.
    pub grad_paired: Vec<f64>,
    /// `∂value/∂D_k(f(X̂)_k)`.
    pub grad_unpaired: Vec<f64>,
    /// `∂value/∂Ỹ` through the L2 term only.
    pub l2_gradient: Array3<f64>,
}

/// `L2 + γ · (1/K) Σ_k (D_k(f(X)_k) − real)² + (D_k(f(X̂)_k) − real)²`.
pub fn separator_adv_loss(
    d_paired: &[f64],
    d_unpaired: &[f64],
    l2: &LossOutput,
    config: &AdvConfig,
) -> Result<SeparatorAdvLoss> {
    if d_paired.len() != d_unpaired.len() || d_paired.is_empty() {
        return Err(Error::Shape(format!(
            "need one paired and one unpaired score per source, got {} and {}",
            d_paired.len(),
            d_unpaired.len()
        )));
    }
    check_finite(d_paired)?;
    check_finite(d_unpaired)?;
    let k = d_paired.len() as f64;
    let mut l_sep = 0.0;
    for (&p, &u) in d_paired.iter().zip(d_unpaired) {
        l_sep += (p - config.real_label).powi(2) + (u - config.real_label).powi(2);
    }
    l_sep /= k;
    let g = |s: f64| config.gamma * 2.0 * (s - config.real_label) / k;
    Ok(SeparatorAdvLoss {
        value: l2.value + config.gamma * l_sep,
        l_sep,
        grad_paired: d_paired.iter().map(|&s| g(s)).collect(),
        grad_unpaired: d_unpaired.iter().map(|&s| g(s)).collect(),
        l2_gradient: l2.gradient.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub widths: Vec<usize>,
    pub hidden: usize,
    pub kernel: usize,
    pub slope: f64,
}

impl Default for DiscriminatorArch {
    fn default() -> Self {
        Self {
            widths: vec![16, 32, 64, 128],
            hidden: 32,
            kernel: 4,
            slope: 0.2,
        }
    }
}

/// Strided conv stack over `log(1 + |Y|)`, global average pooling and a
/// two-layer scorer. Scores are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    layout: ParamLayout,
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
    act: Activation,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscCache {
    input: Array2<f64>,
    conv_inputs: Vec<Array3<f64>>,
    conv_pre: Vec<Array3<f64>>,
    pooled: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
}

impl Discriminator {
    pub fn new(arch: &DiscriminatorArch, seed: u64) -> Self {
        let mut layout = ParamLayout::default();
        let mut convs = Vec::new();
        let mut in_c = 1;
        for (i, &w) in arch.widths.iter().enumerate() {
            convs.push(Conv2d::new(&mut layout, &format!("conv{i}"), in_c, w, arch.kernel, 2, 1));
            in_c = w;
        }
        let fc1 = Linear::new(&mut layout, "fc1", in_c, arch.hidden);
        let fc2 = Linear::new(&mut layout, "fc2", arch.hidden, 1);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in &convs {
            init_normal(&mut rng, &mut params[c.weight_range()], c.fan_in(), 1.0);
        }
        init_normal(&mut rng, &mut params[fc1.weight_range()], fc1.inputs, 1.0);
        init_normal(&mut rng, &mut params[fc2.weight_range()], fc2.inputs, 1.0);
        Self {
            layout,
            convs,
            fc1,
            fc2,
            act: Activation::LeakyRelu(arch.slope),
            params,
        }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn score(&self, mag: ArrayView2<f64>) -> Result<f64> {
        self.forward(mag).map(|(s, _)| s)
    }

    pub fn forward(&self, mag: ArrayView2<f64>) -> Result<(f64, DiscCache)> {
        if mag.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("discriminator input must be finite magnitudes".into()));
        }
        let (h, w) = mag.dim();
        let mut x = mag
            .mapv(f64::ln_1p)
            .into_shape_with_order((1, h, w))
            .expect("single channel");
        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_pre = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let pre = conv.forward(&self.params, &x)?;
            conv_inputs.push(x);
            x = pre.mapv(|v| self.act.apply(v));
            conv_pre.push(pre);
        }
        let (c, oh, ow) = x.dim();
        let pooled: Vec<f64> = x
            .outer_iter()
            .map(|plane| plane.sum() / (oh * ow) as f64)
            .collect();
        debug_assert_eq!(pooled.len(), c);
        let hidden_pre = self.fc1.forward(&self.params, &pooled).to_vec();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&v| self.act.apply(v)).collect();
        let score = self.fc2.forward(&self.params, &hidden)[0];
        Ok((
            score,
            DiscCache {
                input: mag.to_owned(),
                conv_inputs,
                conv_pre,
                pooled,
                hidden_pre,
                hidden,
            },
        ))
    }

    /// Returns `(∂score/∂input · dscore, ∂score/∂params · dscore)`.
    pub fn backward(&self, cache: &DiscCache, dscore: f64) -> (Array2<f64>, Vec<f64>) {
        let mut gp = vec![0.0; self.layout.total];
        let gh = self.fc2.backward(&self.params, &cache.hidden, &[dscore], &mut gp);
        let gh_pre: Vec<f64> = gh
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(g, &p)| g * self.act.derivative(p))
            .collect();
        let gpool = self.fc1.backward(&self.params, &cache.pooled, &gh_pre, &mut gp);
        let last = cache.conv_pre.last().expect("at least one conv");
        let (_, oh, ow) = last.dim();
        let mut g = Array3::zeros(last.dim());
        for (c, mut plane) in g.outer_iter_mut().enumerate() {
            plane.fill(gpool[c] / (oh * ow) as f64);
        }
        for (i, conv) in self.convs.iter().enumerate().rev() {
            let pre = &cache.conv_pre[i];
            ndarray::Zip::from(&mut g)
                .and(pre)
                .for_each(|g, &p| *g *= self.act.derivative(p));
            g = conv.backward(&self.params, &cache.conv_inputs[i], &g, &mut gp);
        }
        let (_, h, w) = g.dim();
        let mut gi = g.into_shape_with_order((h, w)).expect("single channel");
        ndarray::Zip::from(&mut gi)
            .and(&cache.input)
            .for_each(|g, &x| *g /= 1.0 + x);
        (gi, gp)
    }
}

/// A model mapping a mixture magnitude to per-source magnitude estimates.
pub trait Separator {
    type Cache;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn separate(&self, mixture: &Array2<f64>) -> Result<(MagnitudeSpectrogram, Self::Cache)>;
    /// Parameter gradient for `∂L/∂estimate = grad`.
    fn backward(&self, cache: &Self::Cache, grad: &Array3<f64>) -> Vec<f64>;
}

/// Paired and unpaired magnitudes for one adversarial iteration.
#[derive(Debug, Clone)]
pub struct AdvBatch {
    pub paired_mixture: Array2<f64>,
    pub unpaired_mixture: Array2<f64>,
    pub paired_targets: MagnitudeSpectrogram,
    pub unpaired_targets: MagnitudeSpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvStepReport {
    /// `L_k` per discriminator, evaluated before its update.
    pub discriminator_losses: Vec<f64>,
    pub separator: f64,
    pub l2: f64,
    pub l_sep: f64,
}

/// One discriminator update per source with the separator frozen, then one
/// separator update on the adversarial loss with the discriminators frozen.
#[allow(clippy::too_many_arguments)]
pub fn adversarial_step<S: Separator>(
    batch: &AdvBatch,
    separator: &mut S,
    separator_opt: &mut Adam,
    discriminators: &mut [Discriminator],
    discriminator_opts: &mut [Adam],
    config: &AdvConfig,
    separator_lr: f64,
    discriminator_lr: f64,
) -> Result<AdvStepReport> {
    let k = batch.paired_targets.num_sources();
    if discriminators.len() != k || discriminator_opts.len() != k {
        return Err(Error::Shape(format!(
            "{k} sources need {k} discriminators and optimizers, got {} and {}",
            discriminators.len(),
            discriminator_opts.len()
        )));
    }
    let (fake_pair, pair_cache) = separator.separate(&batch.paired_mixture)?;
    let (fake_unpair, unpair_cache) = separator.separate(&batch.unpaired_mixture)?;
    if fake_pair.dim() != batch.paired_targets.dim() {
        return Err(Error::Shape("separator output does not match paired targets".into()));
    }
    if fake_unpair.num_sources() != k || batch.unpaired_targets.num_sources() != k {
        return Err(Error::Shape("unpaired tensors need one plane per source".into()));
    }

    let mut discriminator_losses = Vec::with_capacity(k);
    for (kk, (disc, opt)) in discriminators.iter_mut().zip(discriminator_opts.iter_mut()).enumerate() {
        let plane = |m: &MagnitudeSpectrogram| m.data().index_axis(Axis(0), kk).to_owned();
        let inputs = [
            plane(&batch.unpaired_targets),
            plane(&batch.paired_targets),
            plane(&fake_unpair),
            plane(&fake_pair),
        ];
        let mut scores = [0.0; 4];
        let mut caches = Vec::with_capacity(4);
        for (i, x) in inputs.iter().enumerate() {
            let (s, c) = disc.forward(x.view())?;
            scores[i] = s;
            caches.push(c);
        }
        let loss = discriminator_loss(scores[0], scores[1], scores[2], scores[3], config)?;
        let mut grad = vec![0.0; disc.params.len()];
        for (cache, &g) in caches.iter().zip(loss.gradient.iter()) {
            let (_, gp) = disc.backward(cache, g);
            grad.iter_mut().zip(gp).for_each(|(a, b)| *a += b);
        }
        opt.step(&mut disc.params, &grad, discriminator_lr);
        discriminator_losses.push(loss.value);
    }

    let l2 = lp_freq(Norm::L2, &fake_pair, &batch.paired_targets)?;
    let mut d_paired = Vec::with_capacity(k);
    let mut d_unpaired = Vec::with_capacity(k);
    let mut caches = Vec::with_capacity(k);
    for (kk, disc) in discriminators.iter().enumerate() {
        let (sp, cp) = disc.forward(fake_pair.data().index_axis(Axis(0), kk))?;
        let (su, cu) = disc.forward(fake_unpair.data().index_axis(Axis(0), kk))?;
        d_paired.push(sp);
        d_unpaired.push(su);
        caches.push((cp, cu));
    }
    let adv = separator_adv_loss(&d_paired, &d_unpaired, &l2, config)?;
    let mut grad_pair = adv.l2_gradient.clone();
    let mut grad_unpair = Array3::zeros(fake_unpair.dim());
    for (kk, (disc, (cp, cu))) in discriminators.iter().zip(&caches).enumerate() {
        if adv.grad_paired[kk] != 0.0 {
            let (gi, _) = disc.backward(cp, adv.grad_paired[kk]);
            let mut slot = grad_pair.index_axis_mut(Axis(0), kk);
            slot += &gi;
        }
        if adv.grad_unpaired[kk] != 0.0 {
            let (gi, _) = disc.backward(cu, adv.grad_unpaired[kk]);
            let mut slot = grad_unpair.index_axis_mut(Axis(0), kk);
            slot += &gi;
        }
    }
    let mut grad = separator.backward(&pair_cache, &grad_pair);
    let unpaired_grad = separator.backward(&unpair_cache, &grad_unpair);
    grad.iter_mut().zip(unpaired_grad).for_each(|(a, b)| *a += b);
    separator_opt.step(separator.params_mut(), &grad, separator_lr);

    Ok(AdvStepReport {
        discriminator_losses,
        separator: adv.value,
        l2: l2.value,
        l_sep: adv.l_sep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{check_gradient, FiniteDiffConfig};
    use rand::Rng;

    #[test]
    fn discriminator_loss_cases() {
        let cfg = AdvConfig::default();
        assert!(discriminator_loss(0.9, 0.9, 0.1, 0.1, &cfg).unwrap().value.abs() < 1e-15);
        assert!((discriminator_loss(0.5, 0.5, 0.5, 0.5, &cfg).unwrap().value - 0.16).abs() < 1e-15);
        assert!((discriminator_loss(0.9, 0.9, 0.9, 0.9, &cfg).unwrap().value - 0.32).abs() < 1e-15);
        assert!(discriminator_loss(f64::NAN, 0.9, 0.1, 0.1, &cfg).is_err());
    }

    #[test]
    fn doubling_offsets_quadruples_loss() {
        let cfg = AdvConfig::default();
        let a = discriminator_loss(1.0, 0.7, 0.3, -0.2, &cfg).unwrap().value;
        let b = discriminator_loss(1.1, 0.5, 0.5, -0.5, &cfg).unwrap().value;
        assert!((b - 4.0 * a).abs() < 1e-14);
    }

    fn l2_stub(value: f64) -> LossOutput {
        LossOutput::new(value, Array3::zeros((1, 1, 1)))
    }

    #[test]
    fn separator_loss_cases() {
        let cfg = AdvConfig::default();
        let fooled = separator_adv_loss(&[0.9, 0.9], &[0.9, 0.9], &l2_stub(0.3), &cfg).unwrap();
        assert_eq!(fooled.l_sep, 0.0);
        assert_eq!(fooled.value, 0.3);
        let caught = separator_adv_loss(&[0.1], &[0.1], &l2_stub(0.3), &cfg).unwrap();
        assert!((caught.l_sep - 1.28).abs() < 1e-14);
        assert!((caught.value - 0.3 - 0.64).abs() < 1e-14);
        let off = AdvConfig { gamma: 0.0, ..cfg };
        assert_eq!(separator_adv_loss(&[0.1], &[0.4], &l2_stub(0.3), &off).unwrap().value, 0.3);
    }

    fn small_arch() -> DiscriminatorArch {
        DiscriminatorArch {
            widths: vec![3, 4],
            hidden: 5,
            kernel: 4,
            slope: 0.2,
        }
    }

    #[test]
    fn discriminator_input_gradient() {
        let d = Discriminator::new(&small_arch(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..8 * 9).map(|_| rng.random_range(0.1..2.0)).collect();
        let report = check_gradient(
            |v| {
                let m = Array2::from_shape_vec((8, 9), v.to_vec()).unwrap();
                let (s, c) = d.forward(m.view())?;
                let (gi, _) = d.backward(&c, 1.0);
                Ok(LossOutput::new(s, gi.iter().copied().collect()))
            },
            &x,
            &FiniteDiffConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn discriminator_param_gradient() {
        let mut d = Discriminator::new(&small_arch(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.1..2.0));
        let p0 = d.params.clone();
        let report = check_gradient(
            |p| {
                d.params.copy_from_slice(p);
                let (s, c) = d.forward(x.view())?;
                let (_, gp) = d.backward(&c, 1.0);
                Ok(LossOutput::new(s, gp))
            },
            &p0,
            &FiniteDiffConfig::default(),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn too_small_input_is_error() {
        let d = Discriminator::new(&DiscriminatorArch::default(), 1);
        assert!(d.score(Array2::zeros((8, 8)).view()).is_err());
        assert!(d.score(Array2::zeros((16, 16)).view()).is_ok());
    }
}
