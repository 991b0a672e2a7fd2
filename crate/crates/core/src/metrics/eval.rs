//! Losses evaluated as metrics on estimate/reference waveform pairs.

use std::collections::BTreeMap;

use ndarray::{s, Array3};

use crate::audio::MultiSourceAudio;
use crate::dsp::{ratio_masks, ComplexSpectrogram, MagnitudeSpectrogram, MaskSet, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::metrics::{sdr_metric, MetricMatrix};
use crate::registry::{LossKind, Metric};
use crate::regularized::{deep_feature_loss, DeepFeatureWeights, EmbeddingNet};
use crate::spectral::{self, DissimConfig, MrsConfig};
use crate::time::{self, Norm};

/// Everything a metric needs besides the audio.
#[derive(Debug, Clone)]
pub struct MetricContext {
    pub stft: StftConfig,
    pub mrs: MrsConfig,
    pub dissim: DissimConfig,
    pub embedding: EmbeddingNet,
    pub feature_layer: usize,
    pub deep_weights: DeepFeatureWeights,
    pub frame_seconds: f64,
}

impl Default for MetricContext {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            mrs: MrsConfig::default(),
            dissim: DissimConfig::default(),
            embedding: EmbeddingNet::new(0),
            feature_layer: 1,
            deep_weights: DeepFeatureWeights::default(),
            frame_seconds: 1.0,
        }
    }
}

impl MetricContext {
    pub fn with_stft(mut self, stft: StftConfig) -> Self {
        self.stft = stft;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Whether rows report the mean over sources or one row per named source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scope {
    Mean,
    PerSource(Vec<String>),
}

/// Spectral views of one estimate/reference pair, computed once and shared by all metrics.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    estimate: MultiSourceAudio,
    reference: MultiSourceAudio,
    est_mag: MagnitudeSpectrogram,
    ref_mag: MagnitudeSpectrogram,
    est_masks: MaskSet,
    ref_masks: MaskSet,
    psa: Array3<f64>,
}

impl PreparedPair {
    /// The mixture is taken to be the sum of the references.
    pub fn new(estimate: &MultiSourceAudio, reference: &MultiSourceAudio, ctx: &MetricContext) -> Result<Self> {
        estimate.check_aligned(reference)?;
        let stft = Stft::new(ctx.stft)?;
        let specs = |a: &MultiSourceAudio| -> Result<Vec<ComplexSpectrogram>> {
            a.sources().iter().map(|s| stft.forward(s)).collect()
        };
        let est_specs = specs(estimate)?;
        let ref_specs = specs(reference)?;
        let mix = stft.forward(&reference.mixture())?;
        let est_mag = MagnitudeSpectrogram::from_spectrograms(&est_specs)?;
        let ref_mag = MagnitudeSpectrogram::from_spectrograms(&ref_specs)?;
        Ok(Self {
            estimate: estimate.clone(),
            reference: reference.clone(),
            est_masks: ratio_masks(&est_mag),
            ref_masks: ratio_masks(&ref_mag),
            psa: spectral::psa_target(&ref_specs, &mix)?,
            est_mag,
            ref_mag,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.reference.num_sources()
    }

    /// Metric over all sources (`None`) or a single source.
    pub fn evaluate(&self, metric: Metric, source: Option<usize>, ctx: &MetricContext) -> Result<MetricValue> {
        if let Some(k) = source {
            if k >= self.num_sources() {
                return Err(Error::Shape(format!("source {k} out of range")));
            }
        }
        let kind = match metric {
            Metric::Sdr => return self.sdr(source, ctx),
            Metric::Loss(kind) => kind,
        };
        if kind == LossKind::Dissim {
            if let Some(k) = source {
                return self.dissim_single(k, ctx.dissim);
            }
        }
        let (ye, yr) = match source {
            None => (self.estimate.clone(), self.reference.clone()),
            Some(k) => (self.estimate.select(k), self.reference.select(k)),
        };
        let mags = |m: &MagnitudeSpectrogram| -> Result<MagnitudeSpectrogram> {
            match source {
                None => Ok(m.clone()),
                Some(k) => MagnitudeSpectrogram::new(m.data().slice(s![k..k + 1, .., ..]).to_owned()),
            }
        };
        let masks = |m: &MaskSet| -> Result<MaskSet> {
            match source {
                None => Ok(m.clone()),
                Some(k) => MaskSet::new(m.data().slice(s![k..k + 1, .., ..]).to_owned()),
            }
        };
        let (me, mr) = (mags(&self.est_mag)?, mags(&self.ref_mag)?);
        let out = match kind {
            LossKind::L1Time => time::lp_time(Norm::L1, &ye, &yr)?,
            LossKind::L2Time => time::lp_time(Norm::L2, &ye, &yr)?,
            LossKind::LogL1Time => time::log_lp_time(Norm::L1, &ye, &yr)?,
            LossKind::LogL2Time => time::log_lp_time(Norm::L2, &ye, &yr)?,
            LossKind::SisdrTime => time::sisdr_time(&ye, &yr)?,
            LossKind::SdsdrTime => time::sdsdr_time(&ye, &yr)?,
            LossKind::L1Freq => spectral::lp_freq(Norm::L1, &me, &mr)?,
            LossKind::L2Freq => spectral::lp_freq(Norm::L2, &me, &mr)?,
            LossKind::LogL1Freq => spectral::log_lp_freq(Norm::L1, &me, &mr)?,
            LossKind::LogL2Freq => spectral::log_lp_freq(Norm::L2, &me, &mr)?,
            LossKind::SisdrFreq => spectral::sisdr_freq(&me, &mr)?,
            LossKind::Psa => {
                let psa = match source {
                    None => self.psa.clone(),
                    Some(k) => self.psa.slice(s![k..k + 1, .., ..]).to_owned(),
                };
                spectral::psa_loss(&me, &psa)?
            }
            LossKind::Dissim => spectral::dissim_loss(&me, &mr, ctx.dissim)?,
            LossKind::Mrs => spectral::mrs_loss(&ye, &yr, &ctx.mrs)?,
            LossKind::L1Mask => spectral::mask_lp(Norm::L1, &masks(&self.est_masks)?, &masks(&self.ref_masks)?)?,
            LossKind::L2Mask => spectral::mask_lp(Norm::L2, &masks(&self.est_masks)?, &masks(&self.ref_masks)?)?,
            LossKind::Combination => spectral::combination_loss(&me, &mr)?,
            LossKind::DeepFeature => deep_feature_loss(&me, &mr, &ctx.embedding, ctx.feature_layer, ctx.deep_weights)?,
            LossKind::Adversarial => {
                return Err(Error::UnknownLoss("adversarial loss needs a trained discriminator".into()))
            }
        };
        Ok(MetricValue {
            value: out.value,
            degenerate: out.degenerate,
        })
    }

    fn sdr(&self, source: Option<usize>, ctx: &MetricContext) -> Result<MetricValue> {
        let per = sdr_metric(&self.estimate, &self.reference, ctx.frame_seconds)?;
        let picked: Vec<f64> = match source {
            Some(k) => per[k].into_iter().collect(),
            None => per.iter().flatten().copied().collect(),
        };
        Ok(if picked.is_empty() {
            MetricValue { value: 0.0, degenerate: true }
        } else {
            MetricValue {
                value: picked.iter().sum::<f64>() / picked.len() as f64,
                degenerate: false,
            }
        })
    }

    /// Source `k`'s share of the dissimilarity loss; the mean over `k` equals the full loss.
    fn dissim_single(&self, k: usize, cfg: DissimConfig) -> Result<MetricValue> {
        let slice = |m: &MagnitudeSpectrogram, j: usize| {
            MagnitudeSpectrogram::new(m.data().slice(s![j..j + 1, .., ..]).to_owned())
        };
        let e = slice(&self.est_mag, k)?;
        let own = spectral::lp_freq(Norm::L2, &e, &slice(&self.ref_mag, k)?)?;
        let mut cross = 0.0;
        for other in (0..self.num_sources()).filter(|&o| o != k) {
            cross += spectral::lp_freq(Norm::L2, &e, &slice(&self.ref_mag, other)?)?.value;
        }
        Ok(MetricValue {
            value: own.value - cfg.beta * cross,
            degenerate: false,
        })
    }
}

/// Row label and value for every requested metric on one item.
pub fn item_metrics(
    estimate: &MultiSourceAudio,
    reference: &MultiSourceAudio,
    metrics: &[Metric],
    scope: &Scope,
    ctx: &MetricContext,
) -> Result<Vec<(String, MetricValue)>> {
    let pair = PreparedPair::new(estimate, reference, ctx)?;
    let mut out = Vec::new();
    for &m in metrics {
        match scope {
            Scope::Mean => out.push((m.name().to_string(), pair.evaluate(m, None, ctx)?)),
            Scope::PerSource(names) => {
                if names.len() != pair.num_sources() {
                    return Err(Error::Shape(format!(
                        "{} source names for {} sources",
                        names.len(),
                        pair.num_sources()
                    )));
                }
                for (k, name) in names.iter().enumerate() {
                    out.push((format!("{}/{name}", m.name()), pair.evaluate(m, Some(k), ctx)?));
                }
            }
        }
    }
    Ok(out)
}

/// Estimates of one system keyed by item name.
#[derive(Debug, Clone)]
pub struct SystemEstimates {
    pub name: String,
    pub items: BTreeMap<String, MultiSourceAudio>,
}

/// Per-cell mean over items. Degenerate item values are excluded unless every item is degenerate,
/// in which case the cell is flagged.
pub fn metric_matrix(
    systems: &[SystemEstimates],
    references: &BTreeMap<String, MultiSourceAudio>,
    metrics: &[Metric],
    scope: &Scope,
    ctx: &MetricContext,
) -> Result<MetricMatrix> {
    if references.is_empty() {
        return Err(Error::Missing("no reference items".into()));
    }
    for sys in systems {
        if let Some(item) = references.keys().find(|i| !sys.items.contains_key(*i)) {
            return Err(Error::Missing(format!("system {} has no estimate for item {item}", sys.name)));
        }
    }
    let mut rows: Vec<String> = Vec::new();
    let mut columns = Vec::with_capacity(systems.len());
    let mut cells: Vec<Vec<(f64, bool)>> = Vec::new();
    for sys in systems {
        let mut per_item = Vec::with_capacity(references.len());
        for (item, reference) in references {
            per_item.push(item_metrics(&sys.items[item], reference, metrics, scope, ctx)?);
        }
        if rows.is_empty() {
            rows = per_item[0].iter().map(|(r, _)| r.clone()).collect();
        }
        let column = (0..rows.len())
            .map(|r| {
                let all: Vec<MetricValue> = per_item.iter().map(|vals| vals[r].1).collect();
                let good: Vec<f64> = all.iter().filter(|v| !v.degenerate).map(|v| v.value).collect();
                if good.is_empty() {
                    (all.iter().map(|v| v.value).sum::<f64>() / all.len() as f64, true)
                } else {
                    (good.iter().sum::<f64>() / good.len() as f64, false)
                }
            })
            .collect();
        cells.push(column);
        columns.push(sys.name.clone());
    }
    let values = (0..rows.len()).map(|r| cells.iter().map(|c| c[r].0).collect()).collect();
    let flags = (0..rows.len()).map(|r| cells.iter().map(|c| c[r].1).collect()).collect();
    MetricMatrix::with_flags(rows, columns, values, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> MetricContext {
        let mut c = MetricContext::default().with_stft(StftConfig::new(64, 64, 16));
        c.mrs = MrsConfig {
            resolutions: vec![StftConfig::new(64, 64, 16), StftConfig::new(32, 32, 8)],
        };
        c.frame_seconds = 0.25;
        c
    }

    fn random(seed: u64, k: usize) -> MultiSourceAudio {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MultiSourceAudio::new(Array3::from_shape_fn((k, 1, 400), |_| rng.random_range(-1.0..1.0)), 800).unwrap()
    }

    fn metrics() -> Vec<Metric> {
        Metric::all()
    }

    #[test]
    fn identical_estimates_sit_at_minimum() {
        let y = random(1, 2);
        let c = ctx();
        for (row, v) in item_metrics(&y, &y, &metrics(), &Scope::Mean, &c).unwrap() {
            match row.as_str() {
                "sdr" => assert_eq!(v.value, 100.0),
                "sisdr_time" | "sisdr_freq" | "sdsdr_time" => assert!(v.value < -79.0, "{row}: {}", v.value),
                "logl1_time" | "logl2_time" | "logl1_freq" | "logl2_freq" | "combination" => {
                    assert!(v.value <= 0.0, "{row}: {}", v.value)
                }
                "dissim" => assert!(v.value < 0.0),
                "psa" => assert!(v.value >= 0.0),
                _ => assert!(v.value.abs() < 1e-12, "{row}: {}", v.value),
            }
        }
    }

    #[test]
    fn per_source_rows_average_to_mean_rows() {
        let (y, e) = (random(2, 3), random(3, 3));
        let c = ctx();
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let linear = [
            Metric::Loss(LossKind::L1Time),
            Metric::Loss(LossKind::L2Freq),
            Metric::Loss(LossKind::Psa),
            Metric::Loss(LossKind::Dissim),
            Metric::Loss(LossKind::L2Mask),
        ];
        let mean = item_metrics(&e, &y, &linear, &Scope::Mean, &c).unwrap();
        let per = item_metrics(&e, &y, &linear, &Scope::PerSource(names), &c).unwrap();
        for (i, (row, v)) in mean.iter().enumerate() {
            let avg: f64 = per[3 * i..3 * i + 3].iter().map(|(_, v)| v.value).sum::<f64>() / 3.0;
            assert!((avg - v.value).abs() < 1e-12, "{row}: {avg} vs {}", v.value);
        }
    }

    #[test]
    fn matrix_matches_per_item_average() {
        let c = ctx();
        let refs: BTreeMap<String, MultiSourceAudio> = (0..2).map(|i| (format!("item{i}"), random(10 + i, 2))).collect();
        let systems: Vec<SystemEstimates> = (0..3)
            .map(|s| SystemEstimates {
                name: format!("sys{s}"),
                items: refs
                    .iter()
                    .enumerate()
                    .map(|(i, (name, r))| {
                        let noise = random(100 + 10 * s + i as u64, 2);
                        let est = MultiSourceAudio::new(r.data() + &(noise.data() * (0.1 * (s + 1) as f64)), 800).unwrap();
                        (name.clone(), est)
                    })
                    .collect(),
            })
            .collect();
        let ms = [Metric::Loss(LossKind::L1Time), Metric::Loss(LossKind::SisdrFreq), Metric::Sdr];
        let m = metric_matrix(&systems, &refs, &ms, &Scope::Mean, &c).unwrap();
        assert_eq!(m.columns, vec!["sys0", "sys1", "sys2"]);
        for (si, sys) in systems.iter().enumerate() {
            // independent hand average
            let mut l1 = 0.0;
            for (name, r) in &refs {
                let e = &sys.items[name];
                let d: f64 = (e.data() - r.data()).iter().map(|x| x.abs()).sum();
                l1 += d / (r.data().len() as f64) / 2.0;
            }
            assert!((m.values[0][si] - l1).abs() < 1e-12);
        }
        // more noise is worse under every row
        assert!(m.values[0][0] < m.values[0][2]);
        assert!(m.values[1][0] < m.values[1][2]);
        assert!(m.values[2][0] > m.values[2][2]);

        let mut reversed = systems.clone();
        reversed.reverse();
        let r = metric_matrix(&reversed, &refs, &ms, &Scope::Mean, &c).unwrap();
        for row in 0..3 {
            for s in 0..3 {
                assert_eq!(r.values[row][s], m.values[row][2 - s]);
            }
        }
    }

    #[test]
    fn missing_item_is_named() {
        let c = ctx();
        let refs: BTreeMap<_, _> = [("a".to_string(), random(1, 2)), ("b".to_string(), random(2, 2))].into();
        let sys = SystemEstimates {
            name: "s".into(),
            items: [("a".to_string(), random(3, 2))].into(),
        };
        let err = metric_matrix(&[sys], &refs, &[Metric::Sdr], &Scope::Mean, &c).unwrap_err();
        assert!(err.to_string().contains("item b"), "{err}");
    }
}
