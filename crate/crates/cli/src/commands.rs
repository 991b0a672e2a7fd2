use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seploss::dsp::StftConfig;
use seploss::metrics::{
    correlate_with_mos, item_metrics, standardize_rows, Correlation, MetricContext, MetricMatrix, MetricValue,
    MosTable, Scope,
};
use seploss::Metric;
use seploss_harness::{run_bench, write_trace_csv, BenchConfig, LossParams};

use crate::corpus::{load_sources, pair};
use crate::manifest::{sha256_hex, sidecar, RunManifest};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Metric settings for `eval`, read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub stft: StftConfig,
    pub frame_seconds: f64,
    pub loss_params: LossParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            frame_seconds: 1.0,
            loss_params: LossParams::default(),
        }
    }
}

impl EvalConfig {
    pub fn context(&self) -> Result<MetricContext, CliError> {
        self.stft.validate()?;
        self.loss_params.mrs.validate()?;
        Ok(self.loss_params.metric_context(self.stft, self.frame_seconds))
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_json_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String), CliError> {
    let text = read_text(path)?;
    let value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((value, text))
}

fn render_matrix(m: &MetricMatrix, format: Format) -> String {
    match format {
        Format::Csv => m.to_csv_string(),
        Format::Json => m.to_json_string() + "\n",
    }
}

/// Writes to `out` with a sidecar manifest, or to stdout when `out` is `None`.
fn emit(out: Option<&Path>, bytes: &[u8], mut manifest: RunManifest) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let root = path.parent().unwrap_or(Path::new(""));
            manifest.write_output(root, path, bytes)?;
            manifest.finish(&sidecar(path))
        }
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::Data(format!("stdout: {e}"))),
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub reference: PathBuf,
    pub estimate: PathBuf,
    pub losses: String,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub sources: Vec<String>,
    pub config: Option<PathBuf>,
    pub per_source: bool,
    pub threads: usize,
}

/// Metrics per item (one column each) and their mean over items (column `mean`).
pub fn eval_report(opts: &EvalOptions) -> Result<(MetricMatrix, Option<String>), CliError> {
    let mut metrics = Metric::parse_list(&opts.losses)?;
    if metrics.is_empty() {
        return Err(CliError::Usage("no losses requested".into()));
    }
    if !metrics.contains(&Metric::Sdr) {
        metrics.push(Metric::Sdr);
    }
    let (config, config_text) = match &opts.config {
        Some(p) => {
            let (c, t) = read_json_config::<EvalConfig>(p)?;
            (c, Some(t))
        }
        None => (EvalConfig::default(), None),
    };
    let ctx = config.context()?;
    let items = pair(&opts.reference, &opts.estimate, &opts.sources)?;
    log::info!("evaluating {} items with sources {:?}", items.len(), items[0].sources);
    let scope = if opts.per_source {
        Scope::PerSource(items[0].sources.clone())
    } else {
        Scope::Mean
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let per_item: Vec<Vec<(String, MetricValue)>> = pool.install(|| {
        items
            .par_iter()
            .map(|f| {
                let reference = load_sources(&f.references)?;
                let estimate = load_sources(&f.estimates)?;
                item_metrics(&estimate, &reference, &metrics, &scope, &ctx)
                    .map_err(|e| CliError::from(e).context(&f.item))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    let rows: Vec<String> = per_item[0].iter().map(|(r, _)| r.clone()).collect();
    let mut columns: Vec<String> = items.iter().map(|f| f.item.clone()).collect();
    columns.push("mean".into());
    let mut values = Vec::with_capacity(rows.len());
    let mut flags = Vec::with_capacity(rows.len());
    for r in 0..rows.len() {
        let cells: Vec<MetricValue> = per_item.iter().map(|v| v[r].1).collect();
        let good: Vec<f64> = cells.iter().filter(|c| !c.degenerate).map(|c| c.value).collect();
        let (mean, flag) = if good.is_empty() {
            (cells.iter().map(|c| c.value).sum::<f64>() / cells.len() as f64, true)
        } else {
            (good.iter().sum::<f64>() / good.len() as f64, false)
        };
        values.push(cells.iter().map(|c| c.value).chain(std::iter::once(mean)).collect());
        flags.push(cells.iter().map(|c| c.degenerate).chain(std::iter::once(flag)).collect());
    }
    Ok((MetricMatrix::with_flags(rows, columns, values, flags)?, config_text))
}

impl CliError {
    fn context(self, what: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
        }
    }
}

pub fn cmd_eval(opts: &EvalOptions, args: Vec<String>) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("eval", args);
    let (report, config_text) = eval_report(opts)?;
    manifest.config_sha256 = config_text.map(|t| sha256_hex(t.as_bytes()));
    emit(opts.out.as_deref(), render_matrix(&report, opts.format).as_bytes(), manifest)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub threads: usize,
}

pub fn cmd_bench(opts: &BenchOptions, args: Vec<String>) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("bench", args);
    let (mut config, text) = read_json_config::<BenchConfig>(&opts.config)?;
    if let Some(seed) = opts.seed {
        config.seeds = vec![seed];
    }
    config.validate()?;
    manifest.config_sha256 = Some(sha256_hex(text.as_bytes()));
    manifest.seeds = config.seeds.clone();

    log::info!(
        "bench: {} losses x {} seeds on {} threads",
        config.losses.len(),
        config.seeds.len(),
        opts.threads
    );
    let result = run_bench(&config, opts.threads)?;
    let out = &opts.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let standardized = standardize_rows(&result.matrix);
    manifest.write_output(out, &out.join("matrix.csv"), result.matrix.to_csv_string().as_bytes())?;
    manifest.write_output(out, &out.join("matrix.json"), (result.matrix.to_json_string() + "\n").as_bytes())?;
    manifest.write_output(out, &out.join("standardized.csv"), standardized.to_csv_string().as_bytes())?;
    manifest.write_output(out, &out.join("standardized.json"), (standardized.to_json_string() + "\n").as_bytes())?;
    for run in &result.runs {
        let stem = format!("{}_seed{}", run.loss.name(), run.seed);
        if let Some(pre) = &run.pretrain_trace {
            let mut buf = Vec::new();
            write_trace_csv(pre, &mut buf)?;
            manifest.write_output(out, &out.join("traces").join(format!("{stem}_pretrain.csv")), &buf)?;
        }
        let mut buf = Vec::new();
        write_trace_csv(&run.trace, &mut buf)?;
        manifest.write_output(out, &out.join("traces").join(format!("{stem}.csv")), &buf)?;
    }
    manifest.finish(&out.join("manifest.json"))
}

#[derive(Debug, Clone)]
pub struct CorrelateOptions {
    pub metrics: PathBuf,
    pub mos: PathBuf,
    pub out: Option<PathBuf>,
    pub sign_flip: bool,
    pub format: Format,
}

pub fn read_matrix(path: &Path) -> Result<MetricMatrix, CliError> {
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        MetricMatrix::from_json_str(&text)
    } else {
        MetricMatrix::read_csv(text.as_bytes())
    };
    parsed.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn correlation_report(opts: &CorrelateOptions) -> Result<Vec<Correlation>, CliError> {
    let matrix = read_matrix(&opts.metrics)?;
    let text = read_text(&opts.mos)?;
    let mos = MosTable::read_csv(text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", opts.mos.display())))?;
    correlate_with_mos(&matrix, &mos, opts.sign_flip).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn render_correlations(report: &[Correlation], format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["metric", "against", "r"]).map_err(|e| CliError::Data(e.to_string()))?;
            for c in report {
                let r = c.r.map(|v| v.to_string()).unwrap_or_default();
                w.write_record([c.metric.as_str(), c.against.as_str(), r.as_str()])
                    .map_err(|e| CliError::Data(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("utf-8"))
        }
    }
}

pub fn cmd_correlate(opts: &CorrelateOptions, args: Vec<String>) -> Result<(), CliError> {
    let manifest = RunManifest::start("correlate", args);
    let report = correlation_report(opts)?;
    emit(opts.out.as_deref(), render_correlations(&report, opts.format)?.as_bytes(), manifest)
}
