//! Waveform-domain losses.
//!
//! Channels are flattened into the time axis per source, so `τ` below is
//! `channels × samples`. Every gradient has the shape of the estimate.

use ndarray::Array3;

use crate::audio::MultiSourceAudio;
use crate::error::{Error, Result};
use crate::loss::{sign, sisdr_term, LossOutput, EPS_LOG, LN_10};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub(crate) fn apply(self, d: f64) -> f64 {
        match self {
            Norm::L1 => d.abs(),
            Norm::L2 => d * d,
        }
    }

    pub(crate) fn derivative(self, d: f64) -> f64 {
        match self {
            Norm::L1 => sign(d),
            Norm::L2 => 2.0 * d,
        }
    }
}

struct Layout {
    sources: usize,
    per_source: usize,
    est: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
}

fn layout(estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<Layout> {
    estimate.check_aligned(target)?;
    let sources = estimate.num_sources();
    Ok(Layout {
        sources,
        per_source: estimate.channels() * estimate.len(),
        est: (0..sources).map(|k| estimate.flat_source(k)).collect(),
        tgt: (0..sources).map(|k| target.flat_source(k)).collect(),
    })
}

fn to_gradient(estimate: &MultiSourceAudio, grads: Vec<Vec<f64>>) -> Array3<f64> {
    let flat: Vec<f64> = grads.into_iter().flatten().collect();
    Array3::from_shape_vec(estimate.data().dim(), flat).expect("gradient matches estimate")
}

fn target_energies(l: &Layout) -> Result<Vec<f64>> {
    l.tgt
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let e: f64 = y.iter().map(|v| v * v).sum();
            if e > 0.0 {
                Ok(e)
            } else {
                Err(Error::Domain(format!("target source {k} has zero energy")))
            }
        })
        .collect()
}

pub fn lp_time(norm: Norm, estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<LossOutput> {
    let l = layout(estimate, target)?;
    let scale = 1.0 / (l.per_source * l.sources) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(l.sources);
    for (e, y) in l.est.iter().zip(&l.tgt) {
        let mut g = Vec::with_capacity(e.len());
        for (a, b) in e.iter().zip(y) {
            let d = a - b;
            value += norm.apply(d);
            g.push(scale * norm.derivative(d));
        }
        grads.push(g);
    }
    Ok(LossOutput::new(value * scale, to_gradient(estimate, grads)))
}

/// `10/(τK) Σ_k log10(Σ_t |ỹ − y|^p + ε)`.
pub fn log_lp_time(
    norm: Norm,
    estimate: &MultiSourceAudio,
    target: &MultiSourceAudio,
) -> Result<LossOutput> {
    let l = layout(estimate, target)?;
    let prefactor = 10.0 / (l.per_source * l.sources) as f64;
    let mut value = 0.0;
    let mut degenerate = false;
    let mut grads = Vec::with_capacity(l.sources);
    for (e, y) in l.est.iter().zip(&l.tgt) {
        let inner: f64 = e.iter().zip(y).map(|(a, b)| norm.apply(a - b)).sum();
        degenerate |= inner <= EPS_LOG;
        value += (inner + EPS_LOG).log10();
        let outer = prefactor / ((inner + EPS_LOG) * LN_10);
        grads.push(
            e.iter()
                .zip(y)
                .map(|(a, b)| outer * norm.derivative(a - b))
                .collect(),
        );
    }
    Ok(LossOutput::new(prefactor * value, to_gradient(estimate, grads)).flagged(degenerate))
}

struct SnrParts {
    value: f64,
    grads: Vec<Vec<f64>>,
    degenerate: bool,
}

fn snr_parts(l: &Layout) -> Result<SnrParts> {
    let energies = target_energies(l)?;
    let k = l.sources as f64;
    let mut value = 0.0;
    let mut degenerate = false;
    let mut grads = Vec::with_capacity(l.sources);
    for ((e, y), energy) in l.est.iter().zip(&l.tgt).zip(energies) {
        let err: f64 = e.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        degenerate |= err <= EPS_LOG;
        value += (energy / (err + EPS_LOG)).log10();
        let c = -10.0 / (k * LN_10 * (err + EPS_LOG));
        grads.push(e.iter().zip(y).map(|(a, b)| c * 2.0 * (a - b)).collect());
    }
    Ok(SnrParts {
        value: 10.0 * value / k,
        grads,
        degenerate,
    })
}

/// Signal-to-noise ratio in dB averaged over sources (higher is better).
pub fn snr(estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<LossOutput> {
    let l = layout(estimate, target)?;
    let parts = snr_parts(&l)?;
    Ok(LossOutput::new(parts.value, to_gradient(estimate, parts.grads)).flagged(parts.degenerate))
}

/// Negative scale-invariant SDR averaged over sources.
pub fn sisdr_time(estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<LossOutput> {
    let l = layout(estimate, target)?;
    target_energies(&l)?;
    sisdr_over(&l.est, &l.tgt).map(|(v, g, d)| LossOutput::new(v, to_gradient(estimate, g)).flagged(d))
}

pub(crate) fn sisdr_over(est: &[Vec<f64>], tgt: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>, bool)> {
    let k = est.len() as f64;
    let mut value = 0.0;
    let mut degenerate = false;
    let mut grads = Vec::with_capacity(est.len());
    for (e, y) in est.iter().zip(tgt) {
        let (v, mut g, d) = sisdr_term(e, y);
        value += v;
        degenerate |= d;
        g.iter_mut().for_each(|x| *x /= k);
        grads.push(g);
    }
    Ok((value / k, grads, degenerate))
}

/// Scale-dependent SDR: `-min(SNR, SNR + 10/K Σ_k log10(α_k²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdSdr {
    pub loss: LossOutput,
    pub snr: f64,
    pub l_down: f64,
}

pub fn sdsdr_time(estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<LossOutput> {
    sdsdr_parts(estimate, target).map(|s| s.loss)
}

pub fn sdsdr_parts(estimate: &MultiSourceAudio, target: &MultiSourceAudio) -> Result<SdSdr> {
    let l = layout(estimate, target)?;
    let snr = snr_parts(&l)?;
    let energies = target_energies(&l)?;
    let k = l.sources as f64;
    let mut down_term = 0.0;
    let mut down_degenerate = false;
    let mut down_grads = Vec::with_capacity(l.sources);
    for ((e, y), energy) in l.est.iter().zip(&l.tgt).zip(&energies) {
        let alpha = e.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / energy;
        let a2 = alpha * alpha;
        down_degenerate |= a2 <= EPS_LOG;
        down_term += (a2 + EPS_LOG).log10();
        let c = 10.0 / (k * LN_10) * 2.0 * alpha / (a2 + EPS_LOG) / energy;
        down_grads.push(y.iter().map(|b| c * b).collect::<Vec<f64>>());
    }
    let l_down = snr.value + 10.0 * down_term / k;
    let (value, grads, degenerate) = if snr.value <= l_down {
        (-snr.value, snr.grads, snr.degenerate)
    } else {
        let grads = snr
            .grads
            .into_iter()
            .zip(down_grads)
            .map(|(a, b)| a.into_iter().zip(b).map(|(x, y)| x + y).collect())
            .collect::<Vec<Vec<f64>>>();
        (-l_down, grads, snr.degenerate || down_degenerate)
    };
    let mut grads = grads;
    grads
        .iter_mut()
        .for_each(|g| g.iter_mut().for_each(|x| *x = -*x));
    Ok(SdSdr {
        loss: LossOutput::new(value, to_gradient(estimate, grads)).flagged(degenerate),
        snr: snr.value,
        l_down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(v: &[f64]) -> MultiSourceAudio {
        MultiSourceAudio::from_mono(&[v.to_vec()], 8000).unwrap()
    }

    #[test]
    fn lp_hand_values() {
        let e = mono(&[1.0, 2.0]);
        let t = mono(&[0.0, 0.0]);
        assert_eq!(lp_time(Norm::L1, &e, &t).unwrap().value, 1.5);
        assert_eq!(lp_time(Norm::L2, &e, &t).unwrap().value, 2.5);
        assert_eq!(lp_time(Norm::L2, &e, &e).unwrap().value, 0.0);
    }

    #[test]
    fn lp_shape_mismatch() {
        let e = mono(&[1.0, 2.0]);
        let t = mono(&[0.0, 0.0, 0.0]);
        assert!(matches!(lp_time(Norm::L1, &e, &t), Err(Error::Shape(_))));
    }

    #[test]
    fn log_l2_unit_error() {
        let out = log_lp_time(Norm::L2, &mono(&[1.0]), &mono(&[0.0])).unwrap();
        assert!((out.value - 10.0 * (1.0 + EPS_LOG).log10()).abs() < 1e-15);
        assert!(out.value.abs() < 1e-6);
    }

    #[test]
    fn log_lp_identical_hits_floor() {
        let x = MultiSourceAudio::from_mono(&[vec![0.3, -0.2], vec![0.1, 0.5]], 8000).unwrap();
        let out = log_lp_time(Norm::L1, &x, &x).unwrap();
        let expected = 10.0 / 4.0 * 2.0 * EPS_LOG.log10();
        assert!((out.value - expected).abs() < 1e-12);
        assert!(out.degenerate);
    }

    #[test]
    fn log_l2_scaling_by_ten() {
        let t = mono(&[0.0, 0.0, 0.0]);
        let a = log_lp_time(Norm::L2, &mono(&[0.5, -1.0, 2.0]), &t).unwrap().value;
        let b = log_lp_time(Norm::L2, &mono(&[5.0, -10.0, 20.0]), &t).unwrap().value;
        assert!((b - a - 20.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn snr_cases() {
        let y = mono(&[0.6, 0.8]);
        assert!(snr(&y.scaled(2.0), &y).unwrap().value.abs() < 1e-6);
        let n = [0.08, -0.06];
        let est = mono(&[0.6 + n[0], 0.8 + n[1]]);
        assert!((snr(&est, &y).unwrap().value - 20.0).abs() < 1e-5);
        let perfect = snr(&y, &y).unwrap();
        assert!(perfect.degenerate);
        assert!((perfect.value - 80.0).abs() < 1e-9);
    }

    #[test]
    fn zero_target_is_domain_error() {
        let z = mono(&[0.0, 0.0]);
        let e = mono(&[1.0, 0.0]);
        assert!(matches!(snr(&e, &z), Err(Error::Domain(_))));
        assert!(matches!(sisdr_time(&e, &z), Err(Error::Domain(_))));
        assert!(matches!(sdsdr_time(&e, &z), Err(Error::Domain(_))));
    }

    #[test]
    fn sisdr_cases() {
        let v = sisdr_time(&mono(&[1.0, 1.0]), &mono(&[1.0, 0.0])).unwrap();
        assert!(v.value.abs() < 1e-6);
        let y = mono(&[0.3, -0.7, 0.2]);
        let perfect = sisdr_time(&y, &y).unwrap();
        assert!(perfect.degenerate);
        assert!((perfect.value + 80.0).abs() < 1e-6);
        let orth = sisdr_time(&mono(&[0.0, 1.0]), &mono(&[1.0, 0.0])).unwrap();
        assert!(orth.degenerate);
        assert!(orth.value.is_finite() && orth.value > 70.0);
    }

    #[test]
    fn sisdr_scale_invariant() {
        let y = mono(&[0.3, -0.7, 0.2, 0.9]);
        let e = mono(&[0.1, -0.5, 0.6, 0.4]);
        let base = sisdr_time(&e, &y).unwrap().value;
        for c in [0.1, 1.0, 17.3, 1e3] {
            assert!((sisdr_time(&e.scaled(c), &y).unwrap().value - base).abs() < 1e-9);
        }
    }

    #[test]
    fn sdsdr_hand_cases() {
        let y = mono(&[0.6, 0.8]);
        let double = sdsdr_parts(&y.scaled(2.0), &y).unwrap();
        assert!(double.snr.abs() < 1e-6);
        assert!((double.l_down - 10.0 * 4f64.log10()).abs() < 1e-6);
        assert!(double.loss.value.abs() < 1e-6);

        let half = sdsdr_parts(&y.scaled(0.5), &y).unwrap();
        assert!((half.snr - 10.0 * 4f64.log10()).abs() < 1e-6);
        assert!(half.l_down.abs() < 1e-6);
        assert!(half.loss.value.abs() < 1e-6);

        let same = sdsdr_parts(&y, &y).unwrap();
        assert!((same.l_down - same.snr).abs() < 1e-6);
        assert!((same.loss.value + same.snr).abs() < 1e-12);
    }
}
