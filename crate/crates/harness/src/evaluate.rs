//! Separation of a test set and loss-as-metric evaluation of the result.

use std::collections::BTreeMap;

use seploss::dsp::{apply_mask, MaskSet, Stft};
use seploss::metrics::{metric_matrix, MetricContext, MetricMatrix, Scope, SystemEstimates};
use seploss::{Metric, MultiSourceAudio, Result};

use crate::data::{Dataset, Item};
use crate::model::MaskModel;

#[derive(Debug, Clone, Copy)]
pub enum Masker<'a> {
    Model(&'a MaskModel),
    /// Ratio masks of the true source magnitudes.
    Oracle,
    /// `1/K` everywhere.
    Uniform,
}

impl Masker<'_> {
    pub fn masks(&self, item: &Item) -> Result<MaskSet> {
        Ok(match self {
            Masker::Model(m) => m.masks(&item.mix_mag)?.0,
            Masker::Oracle => item.target_masks.clone(),
            Masker::Uniform => {
                let (rows, bins) = item.mix_mag.dim();
                MaskSet::uniform(item.num_sources(), rows, bins)
            }
        })
    }
}

/// Masked mixture resynthesized with the mixture phase.
pub fn separate(masker: Masker<'_>, item: &Item, stft: &Stft) -> Result<MultiSourceAudio> {
    let est = apply_mask(&masker.masks(item)?, &item.mix_mag)?;
    item.resynthesize(&est, stft)
}

/// One column of metrics for `masker` over the test set, as a one-column matrix named `name`.
pub fn evaluate(
    name: &str,
    masker: Masker<'_>,
    test: &Dataset,
    metrics: &[Metric],
    ctx: &MetricContext,
) -> Result<MetricMatrix> {
    let stft = Stft::new(test.stft)?;
    let mut references = BTreeMap::new();
    let mut items = BTreeMap::new();
    for item in &test.items {
        references.insert(item.name.clone(), item.sources.clone());
        items.insert(item.name.clone(), separate(masker, item, &stft)?);
    }
    let system = SystemEstimates {
        name: name.to_string(),
        items,
    };
    metric_matrix(&[system], &references, metrics, &Scope::Mean, ctx)
}
