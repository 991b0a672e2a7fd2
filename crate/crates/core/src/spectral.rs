//! Spectrogram-domain losses over magnitude tensors `sources × frames × bins`,
//! plus the multi-resolution STFT loss on waveforms.

use ndarray::{Array3, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::MultiSourceAudio;
use crate::dsp::{stack_channels, ComplexSpectrogram, MagnitudeSpectrogram, MaskSet, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::loss::{sign, LossOutput, EPS_LOG, LN_10};
use crate::time::{sisdr_over, Norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DissimConfig {
    pub beta: f64,
}

impl Default for DissimConfig {
    fn default() -> Self {
        Self { beta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsConfig {
    pub resolutions: Vec<StftConfig>,
}

impl Default for MrsConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![
                StftConfig::new(2048, 2048, 512),
                StftConfig::new(1024, 1024, 256),
            ],
        }
    }
}

impl MrsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::Config("multi-resolution loss needs a resolution".into()));
        }
        self.resolutions.iter().try_for_each(StftConfig::validate)
    }
}

fn check_same(a: &Array3<f64>, b: &Array3<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "estimate {:?} does not match target {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn elementwise<F, G>(est: &Array3<f64>, tgt: &Array3<f64>, f: F, df: G) -> Result<LossOutput>
where
    F: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> f64,
{
    check_same(est, tgt)?;
    let scale = 1.0 / est.len() as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros(est.dim());
    Zip::from(&mut grad).and(est).and(tgt).for_each(|g, &e, &t| {
        value += f(e, t);
        *g = scale * df(e, t);
    });
    Ok(LossOutput::new(value * scale, grad))
}

/// Mean `|Ỹ − Y|^p` over frames, bins and sources.
pub fn lp_freq(norm: Norm, estimate: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<LossOutput> {
    elementwise(
        estimate.data(),
        target.data(),
        |e, t| norm.apply(e - t),
        |e, t| norm.derivative(e - t),
    )
}

pub fn log_lp_freq(
    norm: Norm,
    estimate: &MagnitudeSpectrogram,
    target: &MagnitudeSpectrogram,
) -> Result<LossOutput> {
    let (est, tgt) = (estimate.data(), target.data());
    check_same(est, tgt)?;
    let prefactor = 10.0 / est.len() as f64;
    let mut value = 0.0;
    let mut degenerate = false;
    let mut grad = Array3::zeros(est.dim());
    for ((mut g, e), t) in grad
        .outer_iter_mut()
        .zip(est.outer_iter())
        .zip(tgt.outer_iter())
    {
        let inner: f64 = e.iter().zip(t.iter()).map(|(a, b)| norm.apply(a - b)).sum();
        degenerate |= inner <= EPS_LOG;
        value += (inner + EPS_LOG).log10();
        let outer = prefactor / ((inner + EPS_LOG) * LN_10);
        Zip::from(&mut g)
            .and(&e)
            .and(&t)
            .for_each(|g, &a, &b| *g = outer * norm.derivative(a - b));
    }
    Ok(LossOutput::new(prefactor * value, grad).flagged(degenerate))
}

/// Scale-invariant SDR on magnitudes flattened per source.
pub fn sisdr_freq(estimate: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<LossOutput> {
    let (est, tgt) = (estimate.data(), target.data());
    check_same(est, tgt)?;
    let flat = |a: &Array3<f64>| -> Vec<Vec<f64>> {
        a.outer_iter().map(|p| p.iter().copied().collect()).collect()
    };
    let (e, t) = (flat(est), flat(tgt));
    for (k, y) in t.iter().enumerate() {
        if y.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain(format!("target source {k} has zero energy")));
        }
    }
    let (value, grads, degenerate) = sisdr_over(&e, &t)?;
    let grad = Array3::from_shape_vec(est.dim(), grads.into_iter().flatten().collect())
        .expect("gradient matches estimate");
    Ok(LossOutput::new(value, grad).flagged(degenerate))
}

pub fn mask_lp(norm: Norm, estimate: &MaskSet, target: &MaskSet) -> Result<LossOutput> {
    elementwise(
        estimate.data(),
        target.data(),
        |e, t| norm.apply(e - t),
        |e, t| norm.derivative(e - t),
    )
}

/// `|Y| cos(∠X − ∠Y)` per source, stacked like [`MagnitudeSpectrogram`]. May be negative.
pub fn psa_target(targets: &[ComplexSpectrogram], mixture: &ComplexSpectrogram) -> Result<Array3<f64>> {
    let mix = stack_channels(mixture);
    let planes = targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let y = stack_channels(t);
            if y.dim() != mix.dim() {
                return Err(Error::Shape(format!(
                    "target {k} spectrogram {:?} does not match mixture {:?}",
                    y.dim(),
                    mix.dim()
                )));
            }
            let mut out = ndarray::Array2::zeros(y.dim());
            Zip::from(&mut out).and(&y).and(&mix).for_each(|o, y, x| {
                *o = y.norm() * (x.arg() - y.arg()).cos();
            });
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    if planes.is_empty() {
        return Err(Error::Shape("no target spectrograms".into()));
    }
    let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

pub fn psa_loss(estimate: &MagnitudeSpectrogram, psa: &Array3<f64>) -> Result<LossOutput> {
    elementwise(estimate.data(), psa, |e, t| (e - t).powi(2), |e, t| 2.0 * (e - t))
}

/// L2 loss minus `β` times the squared distance of each estimate to every other target.
pub fn dissim_loss(
    estimate: &MagnitudeSpectrogram,
    target: &MagnitudeSpectrogram,
    config: DissimConfig,
) -> Result<LossOutput> {
    if config.beta < 0.0 || !config.beta.is_finite() {
        return Err(Error::Config(format!("beta must be >= 0, got {}", config.beta)));
    }
    let base = lp_freq(Norm::L2, estimate, target)?;
    let (est, tgt) = (estimate.data(), target.data());
    let scale = 1.0 / est.len() as f64;
    let k = est.dim().0;
    let mut cross_value = 0.0;
    let mut cross_grad = Array3::zeros(est.dim());
    for kk in 0..k {
        let e = est.index_axis(Axis(0), kk);
        let mut g = cross_grad.index_axis_mut(Axis(0), kk);
        for other in (0..k).filter(|&o| o != kk) {
            let t = tgt.index_axis(Axis(0), other);
            Zip::from(&mut g).and(&e).and(&t).for_each(|g, &a, &b| {
                let d = a - b;
                cross_value += d * d;
                *g += scale * 2.0 * d;
            });
        }
    }
    let cross = LossOutput::new(cross_value * scale, cross_grad);
    Ok(base.add_scaled(&cross, -config.beta))
}

/// Per-source Frobenius error over target norm, averaged over sources.
pub fn spectral_convergence(
    estimate: &MagnitudeSpectrogram,
    target: &MagnitudeSpectrogram,
) -> Result<LossOutput> {
    let (est, tgt) = (estimate.data(), target.data());
    check_same(est, tgt)?;
    let k = est.dim().0 as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros(est.dim());
    for (idx, ((mut g, e), t)) in grad
        .outer_iter_mut()
        .zip(est.outer_iter())
        .zip(tgt.outer_iter())
        .enumerate()
    {
        let tnorm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if tnorm == 0.0 {
            return Err(Error::Domain(format!("target source {idx} has zero norm")));
        }
        let dnorm = e
            .iter()
            .zip(t.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        value += dnorm / tnorm;
        if dnorm > 0.0 {
            let c = 1.0 / (k * dnorm * tnorm);
            Zip::from(&mut g).and(&e).and(&t).for_each(|g, &a, &b| *g = c * (a - b));
        }
    }
    Ok(LossOutput::new(value / k, grad))
}

/// Mean absolute difference of log10 magnitudes.
pub fn log_magnitude(estimate: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<LossOutput> {
    elementwise(
        estimate.data(),
        target.data(),
        |e, t| ((e + EPS_LOG).log10() - (t + EPS_LOG).log10()).abs(),
        |e, t| {
            let d = (e + EPS_LOG).log10() - (t + EPS_LOG).log10();
            sign(d) / ((e + EPS_LOG) * LN_10)
        },
    )
}

/// Average of spectral convergence plus log magnitude over STFT resolutions,
/// differentiated with respect to the estimated waveforms.
pub fn mrs_loss(estimate: &MultiSourceAudio, target: &MultiSourceAudio, config: &MrsConfig) -> Result<LossOutput> {
    config.validate()?;
    if estimate.data().dim() != target.data().dim() {
        return Err(Error::Shape(format!(
            "estimate {:?} does not match target {:?}",
            estimate.data().dim(),
            target.data().dim()
        )));
    }
    let o = config.resolutions.len() as f64;
    let mut value = 0.0;
    let mut degenerate = false;
    let mut grad = Array3::zeros(estimate.data().dim());
    for res in &config.resolutions {
        let plan = Stft::new(*res)?;
        let est_specs = estimate
            .sources()
            .iter()
            .map(|s| plan.forward(s))
            .collect::<Result<Vec<_>>>()?;
        let tgt_specs = target
            .sources()
            .iter()
            .map(|s| plan.forward(s))
            .collect::<Result<Vec<_>>>()?;
        let est_mag = MagnitudeSpectrogram::from_spectrograms(&est_specs)?;
        let tgt_mag = MagnitudeSpectrogram::from_spectrograms(&tgt_specs)?;
        let sc = spectral_convergence(&est_mag, &tgt_mag)?;
        let mag = log_magnitude(&est_mag, &tgt_mag)?;
        value += sc.value + mag.value;
        degenerate |= sc.degenerate || mag.degenerate;
        let mag_grad = sc.gradient + &mag.gradient;
        for (k, spec) in est_specs.iter().enumerate() {
            let g = mag_grad.index_axis(Axis(0), k);
            let (c, n, b) = spec.data.dim();
            let g = g.to_shape((c, n, b)).expect("stacked layout");
            let mut complex_grad = Array3::<Complex64>::zeros((c, n, b));
            Zip::from(&mut complex_grad)
                .and(&spec.data)
                .and(&g)
                .for_each(|out, z, &gm| {
                    let r = z.norm();
                    if r > 0.0 {
                        *out = z * (gm / r);
                    }
                });
            let wave_grad = plan.forward_adjoint(&complex_grad, estimate.len());
            grad.index_axis_mut(Axis(0), k).scaled_add(1.0 / o, &wave_grad);
        }
    }
    Ok(LossOutput::new(value / o, grad).flagged(degenerate))
}

/// Unweighted sum of L2, scale-invariant SDR and log-L1 on magnitudes.
pub fn combination_loss(estimate: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<LossOutput> {
    let l2 = lp_freq(Norm::L2, estimate, target)?;
    let si = sisdr_freq(estimate, target)?;
    let log_l1 = log_lp_freq(Norm::L1, estimate, target)?;
    Ok(l2.add_scaled(&si, 1.0).add_scaled(&log_l1, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(Array3::from_elem((1, 1, 1), v)).unwrap()
    }

    fn mags(v: Vec<f64>, shape: (usize, usize, usize)) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(Array3::from_shape_vec(shape, v).unwrap()).unwrap()
    }

    #[test]
    fn lp_single_bin() {
        assert_eq!(lp_freq(Norm::L1, &single(2.0), &single(0.5)).unwrap().value, 1.5);
        assert_eq!(lp_freq(Norm::L2, &single(2.0), &single(0.5)).unwrap().value, 2.25);
        assert_eq!(lp_freq(Norm::L2, &single(2.0), &single(2.0)).unwrap().value, 0.0);
    }

    #[test]
    fn log_lp_cases() {
        let v = log_lp_freq(Norm::L1, &single(2.0), &single(1.0)).unwrap().value;
        assert!(v.abs() < 1e-6);
        let same = log_lp_freq(Norm::L2, &single(2.0), &single(2.0)).unwrap();
        assert!((same.value - 10.0 * EPS_LOG.log10()).abs() < 1e-12);
        let t = mags(vec![0.0; 4], (1, 2, 2));
        let a = log_lp_freq(Norm::L1, &mags(vec![0.1, 0.2, 0.3, 0.4], (1, 2, 2)), &t).unwrap();
        let b = log_lp_freq(Norm::L1, &mags(vec![1.0, 2.0, 3.0, 4.0], (1, 2, 2)), &t).unwrap();
        assert!((b.value - a.value - 10.0 / 4.0).abs() < 1e-7);
    }

    #[test]
    fn sisdr_freq_cases() {
        let v = sisdr_freq(&mags(vec![1.0, 1.0], (1, 1, 2)), &mags(vec![1.0, 0.0], (1, 1, 2)))
            .unwrap()
            .value;
        assert!(v.abs() < 1e-6);
        let t = mags(vec![0.5, 1.5, 0.25], (1, 1, 3));
        let out = sisdr_freq(&t.scaled(3.0).unwrap(), &t).unwrap();
        assert!(out.degenerate);
        assert!((out.value + 80.0).abs() < 1e-6);
        let zero = mags(vec![0.0, 0.0], (1, 1, 2));
        assert!(sisdr_freq(&zero, &zero).is_err());
    }

    #[test]
    fn mask_cases() {
        let est = MaskSet::uniform(2, 1, 1);
        let tgt = MaskSet::new(Array3::from_shape_vec((2, 1, 1), vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(mask_lp(Norm::L1, &est, &tgt).unwrap().value, 0.5);
        assert_eq!(mask_lp(Norm::L2, &est, &tgt).unwrap().value, 0.25);
        assert_eq!(mask_lp(Norm::L2, &est, &est).unwrap().value, 0.0);
    }

    #[test]
    fn psa_cases() {
        use std::f64::consts::PI;
        let spec = |z: Complex64| ComplexSpectrogram {
            data: Array3::from_elem((1, 1, 1), z),
            config: StftConfig::new(2, 2, 1),
            signal_len: 2,
            sample_rate: 8000,
        };
        let y = spec(Complex64::from_polar(2.0, 0.4));
        let aligned = psa_target(std::slice::from_ref(&y), &spec(Complex64::from_polar(1.0, 0.4))).unwrap();
        assert!((aligned[[0, 0, 0]] - 2.0).abs() < 1e-15);
        let quarter = psa_target(std::slice::from_ref(&y), &spec(Complex64::from_polar(1.0, 0.4 + PI / 2.0))).unwrap();
        assert!(quarter[[0, 0, 0]].abs() < 1e-15);
        let third = psa_target(&[y], &spec(Complex64::from_polar(1.0, 0.4 + PI / 3.0))).unwrap();
        assert!((third[[0, 0, 0]] - 1.0).abs() < 1e-12);

        let out = psa_loss(&single(1.0), &Array3::from_elem((1, 1, 1), -0.5)).unwrap();
        assert_eq!(out.value, 2.25);
    }

    #[test]
    fn dissim_cases() {
        let est = mags(vec![0.3, 1.2, 0.7, 0.1], (2, 1, 2));
        let tgt = mags(vec![0.5, 1.0, 0.2, 0.4], (2, 1, 2));
        let l2 = lp_freq(Norm::L2, &est, &tgt).unwrap();
        let d0 = dissim_loss(&est, &tgt, DissimConfig { beta: 0.0 }).unwrap();
        assert_eq!(d0, l2);

        let perfect = dissim_loss(&tgt, &tgt, DissimConfig::default()).unwrap();
        // cross terms: (0.5-0.2)^2 + (1.0-0.4)^2 counted from both sides
        let cross = 2.0 * (0.3f64.powi(2) + 0.6f64.powi(2));
        assert!((perfect.value + 0.05 * cross / 4.0).abs() < 1e-15);
        assert!(perfect.value < 0.0);

        let one = mags(vec![0.3, 1.2], (1, 1, 2));
        let one_t = mags(vec![0.5, 1.0], (1, 1, 2));
        assert_eq!(
            dissim_loss(&one, &one_t, DissimConfig::default()).unwrap().value,
            lp_freq(Norm::L2, &one, &one_t).unwrap().value
        );
        assert!(dissim_loss(&one, &one_t, DissimConfig { beta: -1.0 }).is_err());
    }

    #[test]
    fn spectral_convergence_cases() {
        let t = mags(vec![0.5, 1.5, 0.25, 2.0], (2, 1, 2));
        assert_eq!(spectral_convergence(&t, &t).unwrap().value, 0.0);
        let zero = mags(vec![0.0; 4], (2, 1, 2));
        assert!((spectral_convergence(&zero, &t).unwrap().value - 1.0).abs() < 1e-15);
        assert!((spectral_convergence(&t.scaled(2.0).unwrap(), &t).unwrap().value - 1.0).abs() < 1e-15);
        assert!(spectral_convergence(&t, &zero).is_err());
    }

    #[test]
    fn log_magnitude_cases() {
        assert_eq!(log_magnitude(&single(3.0), &single(3.0)).unwrap().value, 0.0);
        assert!((log_magnitude(&single(10.0), &single(1.0)).unwrap().value - 1.0).abs() < 1e-8);
        assert!((log_magnitude(&single(1.0), &single(10.0)).unwrap().value - 1.0).abs() < 1e-8);
    }

    fn tone(len: usize, f: f64, phase: f64) -> Vec<f64> {
        (0..len)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / 8000.0 + phase).sin())
            .collect()
    }

    #[test]
    fn mrs_cases() {
        let cfg = MrsConfig {
            resolutions: vec![StftConfig::new(128, 128, 32), StftConfig::new(64, 64, 16)],
        };
        let target = MultiSourceAudio::from_mono(&[tone(512, 440.0, 0.0), tone(512, 1200.0, 0.3)], 8000).unwrap();
        let same = mrs_loss(&target, &target, &cfg).unwrap();
        assert_eq!(same.value, 0.0);

        let zero = MultiSourceAudio::from_mono(&[vec![0.0; 512], vec![0.0; 512]], 8000).unwrap();
        let out = mrs_loss(&zero, &target, &cfg).unwrap();
        let mut expected = 0.0;
        for res in &cfg.resolutions {
            let specs = target
                .sources()
                .iter()
                .map(|s| crate::dsp::stft(s, res).unwrap())
                .collect::<Vec<_>>();
            let tm = MagnitudeSpectrogram::from_spectrograms(&specs).unwrap();
            let gap = tm.data().iter().map(|&y| (y + EPS_LOG).log10() - EPS_LOG.log10()).sum::<f64>()
                / tm.data().len() as f64;
            expected += 1.0 + gap;
        }
        expected /= 2.0;
        assert!((out.value - expected).abs() < 1e-12);

        let single = MrsConfig {
            resolutions: vec![StftConfig::new(128, 128, 32)],
        };
        let doubled = MrsConfig {
            resolutions: vec![StftConfig::new(128, 128, 32); 2],
        };
        let est = MultiSourceAudio::from_mono(&[tone(512, 430.0, 0.1), tone(512, 1100.0, 0.0)], 8000).unwrap();
        let a = mrs_loss(&est, &target, &single).unwrap();
        let b = mrs_loss(&est, &target, &doubled).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);

        let specs = |m: &MultiSourceAudio| {
            m.sources()
                .iter()
                .map(|s| crate::dsp::stft(s, &single.resolutions[0]).unwrap())
                .collect::<Vec<_>>()
        };
        let em = MagnitudeSpectrogram::from_spectrograms(&specs(&est)).unwrap();
        let tm = MagnitudeSpectrogram::from_spectrograms(&specs(&target)).unwrap();
        let direct = spectral_convergence(&em, &tm).unwrap().value + log_magnitude(&em, &tm).unwrap().value;
        assert!((a.value - direct).abs() < 1e-12);
    }

    #[test]
    fn combination_is_sum_of_parts() {
        let est = mags(vec![0.3, 1.2, 0.7, 0.1, 0.9, 0.5], (2, 1, 3));
        let tgt = mags(vec![0.5, 1.0, 0.2, 0.4, 0.8, 0.6], (2, 1, 3));
        let c = combination_loss(&est, &tgt).unwrap();
        let parts = lp_freq(Norm::L2, &est, &tgt).unwrap().value
            + sisdr_freq(&est, &tgt).unwrap().value
            + log_lp_freq(Norm::L1, &est, &tgt).unwrap().value;
        assert!((c.value - parts).abs() < 1e-12);
    }
}
