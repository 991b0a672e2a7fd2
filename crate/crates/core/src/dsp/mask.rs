//! Magnitude spectrograms and ratio masks.
//!
//! Multi-channel spectrograms are stacked along the frame axis, so a source
//! tensor is `sources × (channels · frames) × bins`.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use num_complex::Complex64;

use super::stft::ComplexSpectrogram;
use crate::error::{Error, Result};

/// Bins whose total source magnitude is at or below this get the uniform mask.
pub const EPS_MASK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrogram {
    data: Array3<f64>,
}

impl MagnitudeSpectrogram {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().0 == 0 {
            return Err(Error::Shape("magnitude spectrogram needs a source".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("magnitude spectrogram"));
        }
        if data.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("negative magnitude".into()));
        }
        Ok(Self { data })
    }

    pub fn from_spectrograms(specs: &[ComplexSpectrogram]) -> Result<Self> {
        let stacked = specs
            .iter()
            .map(|s| stack_channels(s).mapv(|z| z.norm()))
            .collect::<Vec<_>>();
        let views: Vec<ArrayView2<f64>> = stacked.iter().map(|a| a.view()).collect();
        let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn num_sources(&self) -> usize {
        self.data.dim().0
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.data * c)
    }

    pub fn sum_sources(&self) -> Array2<f64> {
        self.data.sum_axis(Axis(0))
    }
}

/// Per-source masks on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    data: Array3<f64>,
}

impl MaskSet {
    /// Wraps mask values, checking they lie in `[0, 1]`.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.dim().0 == 0 {
            return Err(Error::Shape("mask set needs a source".into()));
        }
        if data
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::Domain("mask values must lie in [0, 1]".into()));
        }
        Ok(Self { data })
    }

    pub fn uniform(sources: usize, rows: usize, bins: usize) -> Self {
        Self {
            data: Array3::from_elem((sources, rows, bins), 1.0 / sources as f64),
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.data.dim()
    }
}

/// Frames of every channel stacked into one `(channels · frames) × bins` matrix.
pub fn stack_channels(spec: &ComplexSpectrogram) -> Array2<Complex64> {
    let (c, n, w) = spec.data.dim();
    spec.data
        .to_shape((c * n, w))
        .expect("contiguous spectrogram")
        .to_owned()
}

pub fn ratio_masks(source_mags: &MagnitudeSpectrogram) -> MaskSet {
    let (k, rows, bins) = source_mags.dim();
    let total = source_mags.sum_sources();
    let mut data = Array3::zeros((k, rows, bins));
    for (kk, mut plane) in data.outer_iter_mut().enumerate() {
        let src = source_mags.data.index_axis(Axis(0), kk);
        Zip::from(&mut plane)
            .and(&src)
            .and(&total)
            .for_each(|m, &y, &t| {
                *m = if t > EPS_MASK { y / t } else { 1.0 / k as f64 };
            });
    }
    MaskSet { data }
}

pub fn apply_mask(masks: &MaskSet, mixture_mag: &Array2<f64>) -> Result<MagnitudeSpectrogram> {
    let (_, rows, bins) = masks.dim();
    if mixture_mag.dim() != (rows, bins) {
        return Err(Error::Shape(format!(
            "masks are {rows}x{bins} per source, mixture is {:?}",
            mixture_mag.dim()
        )));
    }
    if mixture_mag.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("mixture magnitude must be finite and nonnegative".into()));
    }
    let mut data = masks.data.clone();
    for mut plane in data.outer_iter_mut() {
        plane *= mixture_mag;
    }
    Ok(MagnitudeSpectrogram { data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mags(v: Vec<f64>, k: usize, rows: usize, bins: usize) -> MagnitudeSpectrogram {
        MagnitudeSpectrogram::new(Array3::from_shape_vec((k, rows, bins), v).unwrap()).unwrap()
    }

    #[test]
    fn single_source_mask_is_one() {
        let m = ratio_masks(&mags(vec![0.3, 2.0, 5.0, 1e-3], 1, 2, 2));
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn equal_sources_split_evenly() {
        let m = ratio_masks(&mags(vec![1.0, 2.0, 1.0, 2.0], 2, 1, 2));
        assert!(m.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn three_to_one() {
        let m = ratio_masks(&mags(vec![3.0, 1.0], 2, 1, 1));
        assert_eq!(m.data()[[0, 0, 0]], 0.75);
        assert_eq!(m.data()[[1, 0, 0]], 0.25);
    }

    #[test]
    fn silent_bins_get_uniform_mask() {
        let m = ratio_masks(&mags(vec![0.0, 0.0, 0.0], 3, 1, 1));
        for k in 0..3 {
            assert_eq!(m.data()[[k, 0, 0]], 1.0 / 3.0);
        }
    }

    #[test]
    fn uniform_mask_divides_mixture() {
        let mix = Array2::from_shape_vec((1, 3), vec![3.0, 6.0, 9.0]).unwrap();
        let out = apply_mask(&MaskSet::uniform(3, 1, 3), &mix).unwrap();
        for k in 0..3 {
            assert_eq!(out.data().row_of(k), vec![1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn zero_mask_silences() {
        let mix = Array2::from_elem((2, 2), 4.0);
        let mut data = Array3::zeros((2, 2, 2));
        data.index_axis_mut(Axis(0), 1).fill(1.0);
        let out = apply_mask(&MaskSet::new(data).unwrap(), &mix).unwrap();
        assert!(out.data().index_axis(Axis(0), 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mix = Array2::zeros((2, 3));
        assert!(apply_mask(&MaskSet::uniform(2, 2, 2), &mix).is_err());
    }

    #[test]
    fn invalid_mask_values_rejected() {
        assert!(MaskSet::new(Array3::from_elem((1, 1, 1), 1.5)).is_err());
        assert!(MaskSet::new(Array3::from_elem((1, 1, 1), -0.1)).is_err());
    }

    trait RowOf {
        fn row_of(&self, k: usize) -> Vec<f64>;
    }
    impl RowOf for Array3<f64> {
        fn row_of(&self, k: usize) -> Vec<f64> {
            self.index_axis(Axis(0), k).iter().copied().collect()
        }
    }

    fn tensor() -> impl Strategy<Value = MagnitudeSpectrogram> {
        (1usize..5, 1usize..4, 1usize..6).prop_flat_map(|(k, r, b)| {
            proptest::collection::vec(0.0f64..10.0, k * r * b)
                .prop_map(move |v| mags(v, k, r, b))
        })
    }

    proptest! {
        #[test]
        fn masks_lie_on_simplex(s in tensor()) {
            let m = ratio_masks(&s);
            let sums = m.data().sum_axis(Axis(0));
            for &v in sums.iter() {
                prop_assert!((v - 1.0).abs() < 1e-6);
            }
            prop_assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn ratio_masks_recover_sources(s in tensor()) {
            let out = apply_mask(&ratio_masks(&s), &s.sum_sources()).unwrap();
            let total = s.sum_sources();
            for ((k, r, b), &v) in out.data().indexed_iter() {
                if total[[r, b]] > EPS_MASK {
                    let y = s.data()[[k, r, b]];
                    prop_assert!((v - y).abs() <= 1e-12 * y.max(1.0));
                }
            }
        }
    }
}
