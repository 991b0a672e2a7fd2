//! Time-domain containers.
//!
//! Samples are stored channel-major: an [`AudioBuffer`] is `channels × len`,
//! a [`MultiSourceAudio`] is `sources × channels × len`.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if samples.nrows() == 0 {
            return Err(Error::Shape("audio buffer needs at least one channel".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let len = samples.len();
        let samples = Array2::from_shape_vec((1, len), samples)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Self {
        Self {
            samples: Array2::zeros((channels.max(1), len)),
            sample_rate,
        }
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn channel(&self, c: usize) -> ndarray::ArrayView1<'_, f64> {
        self.samples.row(c)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            samples: &self.samples * c,
            sample_rate: self.sample_rate,
        }
    }
}

/// Aligned per-source waveforms sharing length, rate and channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSourceAudio {
    data: Array3<f64>,
    sample_rate: u32,
}

impl MultiSourceAudio {
    pub fn new(data: Array3<f64>, sample_rate: u32) -> Result<Self> {
        let (k, c, _) = data.dim();
        if k == 0 || c == 0 {
            return Err(Error::Shape(
                "multi-source audio needs at least one source and one channel".into(),
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("multi-source audio"));
        }
        Ok(Self { data, sample_rate })
    }

    pub fn from_sources(sources: &[AudioBuffer]) -> Result<Self> {
        let first = sources
            .first()
            .ok_or_else(|| Error::Shape("no sources given".into()))?;
        for (k, s) in sources.iter().enumerate() {
            if s.sample_rate() != first.sample_rate() {
                return Err(Error::Shape(format!(
                    "source {k} has sample rate {} but source 0 has {}",
                    s.sample_rate(),
                    first.sample_rate()
                )));
            }
            if s.samples().dim() != first.samples().dim() {
                return Err(Error::Shape(format!(
                    "source {k} has shape {:?} but source 0 has {:?}",
                    s.samples().dim(),
                    first.samples().dim()
                )));
            }
        }
        let views: Vec<ArrayView2<f64>> = sources.iter().map(|s| s.samples().view()).collect();
        let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            data,
            sample_rate: first.sample_rate(),
        })
    }

    /// Single-channel sources given as plain vectors.
    pub fn from_mono(sources: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let bufs = sources
            .iter()
            .map(|s| AudioBuffer::mono(s.clone(), sample_rate))
            .collect::<Result<Vec<_>>>()?;
        Self::from_sources(&bufs)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn num_sources(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn len(&self) -> usize {
        self.data.dim().2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn source(&self, k: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.data.index_axis(Axis(0), k).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn sources(&self) -> Vec<AudioBuffer> {
        (0..self.num_sources()).map(|k| self.source(k)).collect()
    }

    /// Sum over sources.
    pub fn mixture(&self) -> AudioBuffer {
        AudioBuffer {
            samples: self.data.sum_axis(Axis(0)),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: &self.data * c,
            sample_rate: self.sample_rate,
        }
    }

    /// Only source `k`, as a one-source set.
    pub fn select(&self, k: usize) -> Self {
        Self {
            data: self.data.slice(ndarray::s![k..k + 1, .., ..]).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    /// Source `k` flattened across channels, the layout every time-domain loss uses.
    pub fn flat_source(&self, k: usize) -> Vec<f64> {
        self.data.index_axis(Axis(0), k).iter().copied().collect()
    }

    pub(crate) fn check_aligned(&self, other: &Self) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::Shape(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        if self.data.dim() != other.data.dim() {
            return Err(Error::Shape(format!(
                "estimate shape {:?} does not match target shape {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nan() {
        assert!(AudioBuffer::mono(vec![0.0, f64::NAN], 8000).is_err());
    }

    #[test]
    fn mismatched_sources_rejected() {
        let a = AudioBuffer::mono(vec![0.0; 4], 8000).unwrap();
        let b = AudioBuffer::mono(vec![0.0; 5], 8000).unwrap();
        assert!(MultiSourceAudio::from_sources(&[a.clone(), b]).is_err());
        let c = AudioBuffer::mono(vec![0.0; 4], 16000).unwrap();
        assert!(MultiSourceAudio::from_sources(&[a, c]).is_err());
    }

    #[test]
    fn mixture_sums_sources() {
        let m = MultiSourceAudio::from_mono(&[vec![1.0, 2.0], vec![0.5, -1.0]], 8000).unwrap();
        assert_eq!(m.mixture().samples().row(0).to_vec(), vec![1.5, 1.0]);
    }
}
