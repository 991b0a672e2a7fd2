//! Benchmark driver: one training run per (loss, seed), evaluated on a held-out synthetic set.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seploss::dsp::StftConfig;
use seploss::metrics::{MetricContext, MetricMatrix};
use seploss::{LossKind, Metric};

use crate::data::Dataset;
use crate::evaluate::{evaluate, Masker};
use crate::model::{MaskModel, ModelConfig};
use crate::synth::SynthSpec;
use crate::train::{train, EpochRecord, TrainConfig};
use crate::HarnessError;

/// Column holding the untrained model's metrics.
pub const UNTRAINED: &str = "untrained";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub synth: SynthSpec,
    pub train_items: usize,
    pub val_items: usize,
    pub test_items: usize,
    pub stft: StftConfig,
    pub model: ModelConfig,
    /// Template for every run; `loss` and `seed` are overridden per job.
    pub train: TrainConfig,
    pub losses: Vec<String>,
    pub seeds: Vec<u64>,
    /// Metric names; empty means every metric.
    pub metrics: Vec<String>,
    /// Per-loss learning rate overrides keyed by loss name.
    pub learning_rates: BTreeMap<String, f64>,
    pub include_untrained: bool,
    pub adversarial_pretrain_epochs: usize,
    pub frame_seconds: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            train_items: 40,
            val_items: 10,
            test_items: 10,
            stft: StftConfig::new(512, 512, 128),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            losses: vec!["l2_freq".into()],
            seeds: vec![0],
            metrics: Vec::new(),
            learning_rates: BTreeMap::new(),
            include_untrained: true,
            adversarial_pretrain_epochs: 10,
            frame_seconds: 1.0,
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("bench config: {e}")))
    }

    /// Parsed loss list; fails on an empty list or an unknown name before any work starts.
    pub fn loss_kinds(&self) -> Result<Vec<LossKind>, HarnessError> {
        if self.losses.is_empty() {
            return Err(HarnessError::Config("the loss list is empty".into()));
        }
        let kinds = self
            .losses
            .iter()
            .map(|l| l.parse::<LossKind>())
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(name) = self.learning_rates.keys().find(|k| k.parse::<LossKind>().is_err()) {
            return Err(HarnessError::Config(format!("learning rate given for unknown loss {name}")));
        }
        Ok(kinds)
    }

    pub fn metric_list(&self) -> Result<Vec<Metric>, HarnessError> {
        if self.metrics.is_empty() {
            return Ok(Metric::all());
        }
        Ok(self.metrics.iter().map(|m| m.parse()).collect::<Result<Vec<_>, _>>()?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.loss_kinds()?;
        self.metric_list()?;
        self.synth.validate()?;
        self.stft.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("the seed list is empty".into()));
        }
        if self.train_items == 0 || self.val_items == 0 || self.test_items == 0 {
            return Err(HarnessError::Config("every split needs at least one item".into()));
        }
        if !self.stft.is_cola() {
            return Err(HarnessError::Config("the STFT configuration must be invertible".into()));
        }
        Ok(())
    }

    pub fn metric_context(&self) -> MetricContext {
        self.train.loss_params.metric_context(self.stft, self.frame_seconds)
    }

    fn model_for(&self, seed: u64, bins: usize, sources: usize) -> MaskModel {
        MaskModel::new(
            bins,
            sources,
            ModelConfig {
                seed: self.model.seed.wrapping_add(seed),
                ..self.model
            },
        )
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn synthesize(cfg: &BenchConfig) -> Result<Self, HarnessError> {
        let base = cfg.synth.seed;
        Ok(Self {
            train: Dataset::synthesize(&cfg.synth, cfg.train_items, base, cfg.stft)?,
            val: Dataset::synthesize(&cfg.synth, cfg.val_items, base + 1_000_000, cfg.stft)?,
            test: Dataset::synthesize(&cfg.synth, cfg.test_items, base + 2_000_000, cfg.stft)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub loss: LossKind,
    pub seed: u64,
    /// Warm-up run trained on L2 before the adversarial stage.
    pub pretrain_trace: Option<Vec<EpochRecord>>,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub column: MetricMatrix,
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    /// One column per loss (averaged over seeds), plus the untrained model when enabled.
    pub matrix: MetricMatrix,
    pub runs: Vec<RunResult>,
}

fn run_job(cfg: &BenchConfig, splits: &Splits, loss: LossKind, seed: u64, metrics: &[Metric]) -> Result<RunResult, HarnessError> {
    let model = cfg.model_for(seed, splits.train.bins(), splits.train.num_sources());
    let mut tc = TrainConfig {
        loss,
        seed,
        ..cfg.train.clone()
    };
    if let Some(&lr) = cfg.learning_rates.get(loss.name()) {
        tc.learning_rate = Some(lr);
    }
    let (model, pretrain_trace) = if loss == LossKind::Adversarial && !tc.pretrained {
        let warm = TrainConfig {
            loss: LossKind::L2Freq,
            learning_rate: cfg.learning_rates.get(LossKind::L2Freq.name()).copied().or(cfg.train.learning_rate),
            max_epochs: cfg.adversarial_pretrain_epochs,
            ..tc.clone()
        };
        let out = train(model, &splits.train, &splits.val, &warm)?;
        tc.pretrained = true;
        (out.model, Some(out.trace))
    } else {
        (model, None)
    };
    let out = train(model, &splits.train, &splits.val, &tc)?;
    let column = evaluate(loss.name(), Masker::Model(&out.model), &splits.test, metrics, &cfg.metric_context())?;
    log::info!("finished {loss} seed {seed} (best epoch {})", out.best_epoch);
    Ok(RunResult {
        loss,
        seed,
        pretrain_trace,
        trace: out.trace,
        best_epoch: out.best_epoch,
        column,
    })
}

/// Runs every (loss, seed) job on `threads` worker threads. Results do not depend on `threads`.
pub fn run_bench(cfg: &BenchConfig, threads: usize) -> Result<BenchResult, HarnessError> {
    cfg.validate()?;
    let losses = cfg.loss_kinds()?;
    let metrics = cfg.metric_list()?;
    let splits = Splits::synthesize(cfg)?;
    let jobs: Vec<(LossKind, u64)> = losses
        .iter()
        .flat_map(|&l| cfg.seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let runs: Vec<RunResult> = pool.install(|| {
        jobs.par_iter()
            .map(|&(l, s)| run_job(cfg, &splits, l, s, &metrics))
            .collect::<Result<Vec<_>, _>>()
    })?;

    let mut columns: Vec<MetricMatrix> = Vec::new();
    if cfg.include_untrained {
        let model = cfg.model_for(cfg.seeds[0], splits.train.bins(), splits.train.num_sources());
        columns.push(evaluate(UNTRAINED, Masker::Model(&model), &splits.test, &metrics, &cfg.metric_context())?);
    }
    let mut seen = Vec::new();
    for &loss in &losses {
        if seen.contains(&loss) {
            continue;
        }
        seen.push(loss);
        let per_seed: Vec<&MetricMatrix> = runs.iter().filter(|r| r.loss == loss).map(|r| &r.column).collect();
        columns.push(average_columns(loss.name(), &per_seed)?);
    }
    let rows = columns[0].rows.clone();
    let names = columns.iter().map(|c| c.columns[0].clone()).collect();
    let values = (0..rows.len()).map(|r| columns.iter().map(|c| c.values[r][0]).collect()).collect();
    let flags = (0..rows.len()).map(|r| columns.iter().map(|c| c.flags[r][0]).collect()).collect();
    Ok(BenchResult {
        matrix: MetricMatrix::with_flags(rows, names, values, flags)?,
        runs,
    })
}

fn average_columns(name: &str, cols: &[&MetricMatrix]) -> Result<MetricMatrix, HarnessError> {
    let rows = cols[0].rows.clone();
    let n = cols.len() as f64;
    let values = (0..rows.len())
        .map(|r| vec![cols.iter().map(|c| c.values[r][0]).sum::<f64>() / n])
        .collect();
    let flags = (0..rows.len()).map(|r| vec![cols.iter().all(|c| c.flags[r][0])]).collect();
    Ok(MetricMatrix::with_flags(rows, vec![name.to_string()], values, flags)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            synth: SynthSpec {
                duration_s: 0.25,
                ..SynthSpec::default()
            },
            train_items: 3,
            val_items: 2,
            test_items: 2,
            stft: StftConfig::new(256, 256, 64),
            model: ModelConfig { hidden: 8, seed: 0 },
            train: TrainConfig {
                max_epochs: 3,
                ..TrainConfig::default()
            },
            losses: vec!["l2_freq".into(), "sisdr_time".into()],
            metrics: vec!["l2_freq".into(), "sisdr_time".into(), "sdr".into()],
            frame_seconds: 0.25,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn two_losses_give_two_trained_columns() {
        let out = run_bench(&small(), 2).unwrap();
        assert_eq!(out.matrix.columns, vec![UNTRAINED, "l2_freq", "sisdr_time"]);
        assert_eq!(out.matrix.rows, vec!["l2_freq", "sisdr_time", "sdr"]);
        assert_eq!(out.runs.len(), 2);
        let mut cfg = small();
        cfg.include_untrained = false;
        assert_eq!(run_bench(&cfg, 1).unwrap().matrix.columns.len(), 2);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let a = run_bench(&small(), 1).unwrap();
        let b = run_bench(&small(), 3).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn bad_loss_lists_fail_before_training() {
        let mut cfg = small();
        cfg.losses.clear();
        assert!(matches!(run_bench(&cfg, 1), Err(HarnessError::Config(_))));
        cfg.losses = vec!["l2_freq".into(), "l7_time".into()];
        assert!(run_bench(&cfg, 1).is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = BenchConfig::from_json(r#"{"losses": ["psa", "mrs"], "seeds": [1, 2]}"#).unwrap();
        assert_eq!(cfg.train.patience_epochs, 80);
        assert_eq!(cfg.train.decay_factor, 0.3);
        assert_eq!(cfg.loss_kinds().unwrap(), vec![LossKind::Psa, LossKind::Mrs]);
        assert!(BenchConfig::from_json(r#"{"losses": 3}"#).is_err());
    }
}
