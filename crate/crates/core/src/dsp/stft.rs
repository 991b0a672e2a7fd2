//! One-sided, frame-major STFT with weighted overlap-add inverse.
//!
//! The analysis window is centred inside each `fft_size` frame. With
//! `center` on, the signal is zero-padded by `fft_size / 2` on both sides so
//! that frame `n` is centred on sample `n * hop`. The inverse divides the
//! overlap-added, re-windowed frames by the pointwise sum of squared
//! windows, which reconstructs the input exactly for COLA configurations.
//!
//! Adjoint operators of both transforms are provided so that losses defined
//! on spectrograms can be differentiated with respect to waveforms and
//! vice versa.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of `len` samples.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|n| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub window_length: usize,
    pub hop: usize,
    #[serde(default)]
    pub window: WindowKind,
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_center() -> bool {
    true
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_size: 4096,
            window_length: 4096,
            hop: 1024,
            window: WindowKind::Hann,
            center: true,
        }
    }
}

impl StftConfig {
    pub fn new(fft_size: usize, window_length: usize, hop: usize) -> Self {
        Self {
            fft_size,
            window_length,
            hop,
            window: WindowKind::Hann,
            center: true,
        }
    }

    pub fn with_window(mut self, window: WindowKind) -> Self {
        self.window = window;
        self
    }

    pub fn with_center(mut self, center: bool) -> Self {
        self.center = center;
        self
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_length || self.window_length > self.fft_size {
            return Err(Error::Config(format!(
                "need 0 < hop <= window_length <= fft_size, got hop={} window={} fft={}",
                self.hop, self.window_length, self.fft_size
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "fft_size must be even, got {}",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// Whether shifted copies of the window at multiples of `hop` sum to a constant.
    pub fn is_cola(&self) -> bool {
        let w = self.window.coefficients(self.window_length);
        let mut sums = vec![0.0; self.hop];
        for (i, &v) in w.iter().enumerate() {
            sums[i % self.hop] += v;
        }
        let max = sums.iter().cloned().fold(f64::MIN, f64::max);
        let min = sums.iter().cloned().fold(f64::MAX, f64::min);
        max > 0.0 && (max - min) <= 1e-10 * max
    }

    fn pad(&self) -> usize {
        if self.center {
            self.fft_size / 2
        } else {
            0
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    ///
    /// Centred transforms add frames until the last window reaches the final
    /// sample; uncentred transforms only emit frames that fit in the signal.
    pub fn frames_for(&self, len: usize) -> usize {
        if self.center {
            let offset = (self.fft_size - self.window_length) / 2;
            let reach = self.pad() + len;
            let covered = offset + self.window_length;
            if reach <= covered {
                1
            } else {
                1 + (reach - covered).div_ceil(self.hop)
            }
        } else if len < self.fft_size {
            0
        } else {
            1 + (len - self.fft_size) / self.hop
        }
    }
}

/// Complex STFT of every channel of one signal, laid out `channels × frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn frames(&self) -> usize {
        self.data.dim().1
    }

    pub fn bins(&self) -> usize {
        self.data.dim().2
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|z| z.norm())
    }

    pub fn phase(&self) -> Array3<f64> {
        self.data.mapv(|z| z.arg())
    }
}

/// Planned forward and inverse transforms for one configuration.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut window = vec![0.0; config.fft_size];
        let offset = (config.fft_size - config.window_length) / 2;
        for (i, v) in config
            .window
            .coefficients(config.window_length)
            .into_iter()
            .enumerate()
        {
            window[offset + i] = v;
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            config,
            window,
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    fn check_len(&self, len: usize) -> Result<usize> {
        let needed = if self.config.center {
            self.config.window_length
        } else {
            self.config.fft_size
        };
        if len < needed {
            return Err(Error::Length { len, needed });
        }
        Ok(self.config.frames_for(len))
    }

    fn require_invertible(&self) -> Result<()> {
        if !self.config.is_cola() {
            return Err(Error::Config(format!(
                "{:?} window of length {} with hop {} is not COLA; inverse is not exact",
                self.config.window, self.config.window_length, self.config.hop
            )));
        }
        Ok(())
    }

    pub fn forward(&self, audio: &AudioBuffer) -> Result<ComplexSpectrogram> {
        let len = audio.len();
        let frames = self.check_len(len)?;
        let data = self.analyze(audio.samples(), frames);
        Ok(ComplexSpectrogram {
            data,
            config: self.config,
            signal_len: len,
            sample_rate: audio.sample_rate(),
        })
    }

    fn analyze(&self, samples: &Array2<f64>, frames: usize) -> Array3<Complex64> {
        let m = self.config.fft_size;
        let bins = self.config.bins();
        let pad = self.config.pad();
        let len = samples.ncols();
        let mut out = Array3::zeros((samples.nrows(), frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (c, row) in samples.outer_iter().enumerate() {
            for n in 0..frames {
                let start = n * self.config.hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    // position in the unpadded signal
                    let t = (start + i) as isize - pad as isize;
                    let x = if t >= 0 && (t as usize) < len {
                        row[t as usize]
                    } else {
                        0.0
                    };
                    *slot = Complex64::new(x * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                for w in 0..bins {
                    out[[c, n, w]] = buf[w];
                }
            }
        }
        out
    }

    /// Pointwise sum of squared windows over the padded signal.
    fn window_energy(&self, frames: usize) -> Vec<f64> {
        let m = self.config.fft_size;
        let mut div = vec![0.0; (frames.max(1) - 1) * self.config.hop + m];
        for n in 0..frames {
            let start = n * self.config.hop;
            for i in 0..m {
                div[start + i] += self.window[i] * self.window[i];
            }
        }
        div
    }

    fn fill_hermitian(&self, frame: ndarray::ArrayView1<Complex64>, buf: &mut [Complex64]) {
        let m = self.config.fft_size;
        let half = m / 2;
        for w in 0..=half {
            buf[w] = frame[w];
        }
        buf[0].im = 0.0;
        buf[half].im = 0.0;
        for w in 1..half {
            buf[m - w] = frame[w].conj();
        }
    }

    /// Inverse transform; output has `spec.signal_len` samples.
    pub fn inverse(&self, spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
        self.require_invertible()?;
        self.check_spec(spec)?;
        let m = self.config.fft_size;
        let pad = self.config.pad();
        let (channels, frames, _) = spec.data.dim();
        let div = self.window_energy(frames);
        let len = spec.signal_len;
        let mut out = Array2::zeros((channels, len));
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        let mut acc = vec![0.0; div.len()];
        for c in 0..channels {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for n in 0..frames {
                self.fill_hermitian(spec.data.slice(ndarray::s![c, n, ..]), &mut buf);
                self.inverse.process(&mut buf);
                let start = n * self.config.hop;
                for i in 0..m {
                    acc[start + i] += buf[i].re / m as f64 * self.window[i];
                }
            }
            for t in 0..len {
                let p = t + pad;
                if p < div.len() && div[p] > 1e-12 {
                    out[[c, t]] = acc[p] / div[p];
                }
            }
        }
        AudioBuffer::new(out, spec.sample_rate)
    }

    fn check_spec(&self, spec: &ComplexSpectrogram) -> Result<()> {
        if spec.config != self.config {
            return Err(Error::Config(
                "spectrogram was produced with a different STFT configuration".into(),
            ));
        }
        let expected = self.config.frames_for(spec.signal_len);
        if spec.frames() != expected || spec.bins() != self.config.bins() {
            return Err(Error::Shape(format!(
                "spectrogram is {}x{}, configuration implies {}x{} for {} samples",
                spec.frames(),
                spec.bins(),
                expected,
                self.config.bins(),
                spec.signal_len
            )));
        }
        Ok(())
    }

    /// Adjoint of [`Stft::forward`]: maps `dL/dRe Z + i dL/dIm Z` (channels × frames × bins)
    /// to `dL/dx` (channels × `len`).
    pub fn forward_adjoint(&self, grad: &Array3<Complex64>, len: usize) -> Array2<f64> {
        let m = self.config.fft_size;
        let bins = self.config.bins();
        let pad = self.config.pad();
        let (channels, frames, _) = grad.dim();
        let mut out = Array2::zeros((channels, len));
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for c in 0..channels {
            for n in 0..frames {
                buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for w in 0..bins {
                    buf[w] = grad[[c, n, w]];
                }
                self.inverse.process(&mut buf);
                let start = n * self.config.hop;
                for i in 0..m {
                    let t = (start + i) as isize - pad as isize;
                    if t >= 0 && (t as usize) < len {
                        out[[c, t as usize]] += buf[i].re * self.window[i];
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Stft::inverse`]: maps `dL/dx` (channels × len) to
    /// `dL/dRe Z + i dL/dIm Z` for the spectrogram that was inverted.
    pub fn inverse_adjoint(&self, grad: &Array2<f64>, frames: usize) -> Array3<Complex64> {
        let m = self.config.fft_size;
        let bins = self.config.bins();
        let half = m / 2;
        let pad = self.config.pad();
        let len = grad.ncols();
        let div = self.window_energy(frames);
        let mut scaled = vec![0.0; div.len()];
        let mut out = Array3::zeros((grad.nrows(), frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (c, row) in grad.outer_iter().enumerate() {
            scaled.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..len {
                let p = t + pad;
                if p < div.len() && div[p] > 1e-12 {
                    scaled[p] = row[t] / div[p];
                }
            }
            for n in 0..frames {
                let start = n * self.config.hop;
                for i in 0..m {
                    buf[i] = Complex64::new(scaled[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                for w in 0..bins {
                    let weight = if w == 0 || w == half { 1.0 } else { 2.0 };
                    let mut g = buf[w] * (weight / m as f64);
                    if w == 0 || w == half {
                        g.im = 0.0;
                    }
                    out[[c, n, w]] = g;
                }
            }
        }
        out
    }
}

pub fn stft(audio: &AudioBuffer, config: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(*config)?.forward(audio)
}

pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
    Stft::new(spec.config)?.inverse(spec)
}
