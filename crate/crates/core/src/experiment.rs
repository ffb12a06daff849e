//! File-level experiment drivers: a versioned JSON config in, CSV and JSON out.
//!
//! Every output is a pure function of the config, the command-line overrides
//! and the binary version; nothing time-dependent is written.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Split, SplitDataset, SyntheticSpec};
use crate::diag::{self, CovarianceRatio, GradStats, HistogramBin, LandscapeScan, LossSelector};
use crate::error::{Error, Result};
use crate::integrate::Strategy;
use crate::model::{Checkpoint, MultimodalModel};
use crate::numerics::RngStream;
use crate::train::{self, write_csv, CsvColumns, ModelShape, SeededRun, SweepSummary, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

const STREAM_LANDSCAPE: u64 = 3;
const STREAM_STATS: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsFlags {
    #[serde(default = "yes")]
    pub log_cosine: bool,
    #[serde(default = "yes")]
    pub log_magnitudes: bool,
    /// Scan the loss landscape of every trained model.
    #[serde(default)]
    pub run_landscape: bool,
    #[serde(default = "default_points")]
    pub landscape_points: usize,
    #[serde(default = "default_radius")]
    pub landscape_radius: f64,
}

fn yes() -> bool {
    true
}

fn default_points() -> usize {
    21
}

fn default_radius() -> f64 {
    0.5
}

impl Default for DiagnosticsFlags {
    fn default() -> Self {
        Self {
            log_cosine: true,
            log_magnitudes: true,
            run_landscape: false,
            landscape_points: default_points(),
            landscape_radius: default_radius(),
        }
    }
}

impl DiagnosticsFlags {
    pub fn csv_columns(&self) -> CsvColumns {
        CsvColumns {
            log_cosine: self.log_cosine,
            log_magnitudes: self.log_magnitudes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_dataset")]
    pub dataset: SyntheticSpec,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsFlags,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_dataset() -> SyntheticSpec {
    SyntheticSpec::asymmetric(0)
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: default_dataset(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            diagnostics: DiagnosticsFlags::default(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dataset.validate()?;
        self.model.dims_for(&self.dataset).validate()?;
        self.train.validate()?;
        if self.diagnostics.run_landscape {
            let d = &self.diagnostics;
            if d.landscape_points < 3 || d.landscape_points.is_multiple_of(2) {
                return Err(Error::Config("landscape_points must be odd and >= 3".into()));
            }
            if !(d.landscape_radius > 0.0) {
                return Err(Error::Config("landscape_radius must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Applies a global `--seed`: both the data seed and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        self
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

pub fn diagnostics_path(output_dir: &Path) -> PathBuf {
    output_dir.join("diagnostics.json")
}

/// Directory of one `(strategy, index)` run. A lone run writes straight into
/// `output_dir`.
pub fn run_dir(output_dir: &Path, strategy: Strategy, index: u64, single: bool) -> PathBuf {
    if single {
        output_dir.to_path_buf()
    } else {
        output_dir.join(strategy.as_str()).join(format!("seed_{index}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub summary: SweepSummary,
    pub run_dirs: Vec<PathBuf>,
    #[serde(skip)]
    pub runs: Vec<SeededRun>,
    #[serde(skip)]
    pub landscapes: Vec<Option<LandscapeScan>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub strategies: Vec<StrategyReport>,
}

#[derive(Serialize)]
struct RunSummaryFile<'a> {
    strategy: &'a str,
    data_seed: u64,
    train_seed: u64,
    stationarity_iteration: &'a [Option<u64>],
    initial_eval: &'a crate::model::EvalMetrics,
    final_eval: &'a crate::model::EvalMetrics,
    metrics: std::collections::BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct AbortDiagnostics {
    strategy: String,
    error: String,
    iteration: Option<u64>,
    param_norms: Option<Vec<f64>>,
}

/// Train every strategy on seeds `0..n_seeds` (offsets from the config seeds)
/// and write per-run and aggregate outputs below `cfg.output_dir`.
///
/// Strategies share data and initialization for each seed index. On a
/// numerical abort a `diagnostics.json` is written before the error returns.
pub fn run_training(
    cfg: &ExperimentConfig,
    strategies: &[Strategy],
    n_seeds: usize,
    dataset_cache: Option<&Path>,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(Error::Config("at least one strategy is required".into()));
    }
    if n_seeds == 0 {
        return Err(Error::Config("seeds must be at least 1".into()));
    }
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    let single = strategies.len() == 1 && n_seeds == 1;
    let indices: Vec<u64> = (0..n_seeds as u64).collect();

    let mut reports = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mut tcfg = cfg.train.clone();
        tcfg.strategy.strategy = strategy;
        let (_, runs) = match train::sweep_indices(&cfg.dataset, &cfg.model, &tcfg, &indices, dataset_cache) {
            Ok(r) => r,
            Err(e) => {
                let (iteration, param_norms) = match e.root() {
                    Error::NumericalAbort { iteration, param_norms } => (Some(*iteration), Some(param_norms.clone())),
                    _ => (None, None),
                };
                if iteration.is_some() {
                    write_json(
                        &diagnostics_path(out),
                        &AbortDiagnostics {
                            strategy: strategy.to_string(),
                            error: e.to_string(),
                            iteration,
                            param_norms,
                        },
                    )?;
                }
                return Err(e);
            }
        };

        let mut per_seed = Vec::with_capacity(runs.len());
        let mut run_dirs = Vec::with_capacity(runs.len());
        let mut landscapes = Vec::with_capacity(runs.len());
        for run in &runs {
            let dir = run_dir(out, strategy, run.index, single);
            fs::create_dir_all(&dir)?;
            let mut metrics = run.record.summary();
            let scan = if cfg.diagnostics.run_landscape {
                let mut rng = RngStream::new(run.record.seed, STREAM_LANDSCAPE);
                let scan = diag::landscape_scan(
                    &run.model,
                    &run.data.train,
                    cfg.diagnostics.landscape_points,
                    cfg.diagnostics.landscape_radius,
                    &mut rng,
                )?;
                write_landscape(&dir, &scan)?;
                metrics.insert("sharpness_proxy".into(), scan.sharpness_proxy);
                Some(scan)
            } else {
                None
            };
            write_run(&dir, run, cfg, &metrics)?;
            per_seed.push((run.index, metrics));
            run_dirs.push(dir);
            landscapes.push(scan);
        }
        reports.push(StrategyReport {
            summary: train::aggregate(strategy.as_str(), per_seed),
            run_dirs,
            runs,
            landscapes,
        });
    }

    let report = TrainingReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        strategies: reports,
    };
    write_json(&out.join("summary.json"), &report)?;
    write_text(&out.join("summary.csv"), &summary_csv(&report))?;
    Ok(report)
}

fn write_run(
    dir: &Path,
    run: &SeededRun,
    cfg: &ExperimentConfig,
    metrics: &std::collections::BTreeMap<String, f64>,
) -> Result<()> {
    let mut csv = BufWriter::new(fs::File::create(dir.join("run.csv"))?);
    write_csv(&run.record, cfg.diagnostics.csv_columns(), &mut csv)?;
    csv.flush()?;
    run.model.to_checkpoint(run.record.seed).save(&dir.join("checkpoint.json"))?;
    write_json(&dir.join("dataset.json"), &run.data.spec)?;
    write_json(
        &dir.join("run_summary.json"),
        &RunSummaryFile {
            strategy: &run.record.strategy,
            data_seed: run.data.spec.seed,
            train_seed: run.record.seed,
            stationarity_iteration: &run.record.stationarity_iteration,
            initial_eval: &run.record.initial_eval,
            final_eval: run.record.final_eval(),
            metrics: metrics.clone(),
        },
    )
}

/// One row per strategy: `<metric>_mean` and `<metric>_std` for every metric.
pub fn summary_csv(report: &TrainingReport) -> String {
    let mut out = String::new();
    let keys: Vec<&String> = report
        .strategies
        .first()
        .map(|s| s.summary.metrics.keys().collect())
        .unwrap_or_default();
    out.push_str("strategy,n_seeds");
    for k in &keys {
        let _ = write!(out, ",{k}_mean,{k}_std");
    }
    out.push('\n');
    for s in &report.strategies {
        let _ = write!(out, "{},{}", s.summary.strategy, s.summary.n_seeds);
        for k in &keys {
            match s.summary.metrics.get(*k) {
                Some(m) => {
                    let _ = write!(out, ",{},{}", m.mean, m.std);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn landscape_csv(scan: &LandscapeScan) -> String {
    let mut out = String::from("alpha,loss,accuracy\n");
    for ((a, l), acc) in scan.alphas.iter().zip(&scan.losses).zip(&scan.accuracies) {
        let _ = writeln!(out, "{a},{l},{acc}");
    }
    out
}

#[derive(Serialize)]
struct LandscapeFile<'a> {
    n_points: usize,
    radius: f64,
    sharpness_proxy: f64,
    center_loss: f64,
    alphas: &'a [f64],
}

fn write_landscape(dir: &Path, scan: &LandscapeScan) -> Result<()> {
    write_text(&dir.join("landscape.csv"), &landscape_csv(scan))?;
    let mid = scan.alphas.len() / 2;
    write_json(
        &dir.join("landscape.json"),
        &LandscapeFile {
            n_points: scan.alphas.len(),
            radius: scan.alphas[scan.alphas.len() - 1],
            sharpness_proxy: scan.sharpness_proxy,
            center_loss: scan.losses[mid],
            alphas: &scan.alphas,
        },
    )
}

/// A checkpoint together with the dataset it was trained on.
pub struct LoadedRun {
    pub model: MultimodalModel,
    pub data: SplitDataset,
    pub checkpoint: Checkpoint,
}

/// Loads `checkpoint` and regenerates (or reads from the cache) its dataset,
/// described by `dataset_spec` or else by `dataset.json` next to the checkpoint.
pub fn load_run(checkpoint: &Path, dataset_spec: Option<&Path>, dataset_cache: Option<&Path>) -> Result<LoadedRun> {
    if !checkpoint.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", checkpoint.display())));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let model = MultimodalModel::from_checkpoint(&ck)?;
    let spec_path = match dataset_spec {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name("dataset.json"),
    };
    let text = fs::read_to_string(&spec_path)
        .map_err(|e| Error::Config(format!("cannot read dataset spec {}: {e}", spec_path.display())))?;
    let spec: SyntheticSpec = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let cache = dataset_cache.map(|d| data::cache_file(d, &spec)).transpose()?;
    let data = data::load_or_generate(&spec, cache.as_deref())?;
    if data.train.dims() != model.dims().modality_dims || data.train.n_classes != model.dims().n_classes {
        return Err(Error::Config("checkpoint layout does not match its dataset".into()));
    }
    Ok(LoadedRun {
        model,
        data,
        checkpoint: ck,
    })
}

#[derive(Debug, Clone)]
pub struct StatsOptions {
    pub n_batches: usize,
    /// `None` uses the whole split as every batch.
    pub batch_size: Option<usize>,
    pub bins: usize,
    pub split: Split,
    pub seed: u64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            n_batches: 200,
            batch_size: Some(64),
            bins: 20,
            split: Split::Train,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EncoderStats {
    pub encoder: usize,
    pub multimodal: GradStats,
    pub unimodal: GradStats,
    /// Unimodal over multimodal covariance trace; absent when either is zero.
    pub ratio: Option<CovarianceRatio>,
    pub histogram_multimodal: Vec<HistogramBin>,
    pub histogram_unimodal: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsReport {
    pub n_batches: usize,
    pub batch_size: usize,
    pub split: Split,
    pub seed: u64,
    pub encoders: Vec<EncoderStats>,
}

/// Gradient statistics of both losses for every encoder of a frozen model.
pub fn gradient_report(model: &MultimodalModel, dataset: &Dataset, opts: &StatsOptions) -> Result<StatsReport> {
    let batch_size = opts.batch_size.unwrap_or(dataset.len());
    let root = RngStream::new(opts.seed, STREAM_STATS);
    let mut encoders = Vec::with_capacity(model.n_modalities());
    for k in 0..model.n_modalities() {
        // the same batch sequence for both losses of an encoder
        let sample = |sel| {
            let mut rng = root.fork(k as u64);
            diag::gradient_stats(model, dataset, sel, k, opts.n_batches, batch_size, &mut rng)
        };
        let multimodal = sample(LossSelector::Multimodal)?;
        let unimodal = sample(LossSelector::Unimodal)?;
        let ratio = CovarianceRatio::new(unimodal.cov_trace, multimodal.cov_trace).ok();
        encoders.push(EncoderStats {
            encoder: k,
            histogram_multimodal: diag::histogram(&multimodal.magnitude_samples, opts.bins)?,
            histogram_unimodal: diag::histogram(&unimodal.magnitude_samples, opts.bins)?,
            multimodal,
            unimodal,
            ratio,
        });
    }
    Ok(StatsReport {
        n_batches: opts.n_batches,
        batch_size,
        split: opts.split,
        seed: opts.seed,
        encoders,
    })
}

/// Writes `grad_stats.csv`, `magnitude_hist.csv` and `stats.json` into `dir`.
pub fn write_stats(dir: &Path, report: &StatsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut stats = String::from("encoder,loss,mean_magnitude,cov_trace,k_hat,threshold\n");
    let mut hist = String::from("encoder,loss,bin_lo,bin_hi,count\n");
    for e in &report.encoders {
        let (k_hat, thr) = e
            .ratio
            .map_or((String::new(), String::new()), |r| (r.k_hat.to_string(), r.threshold.to_string()));
        for (name, s, h) in [
            ("multimodal", &e.multimodal, &e.histogram_multimodal),
            ("unimodal", &e.unimodal, &e.histogram_unimodal),
        ] {
            let _ = writeln!(stats, "{},{name},{},{},{k_hat},{thr}", e.encoder, s.mean_magnitude, s.cov_trace);
            for b in h {
                let _ = writeln!(hist, "{},{name},{},{},{}", e.encoder, b.lo, b.hi, b.count);
            }
        }
    }
    write_text(&dir.join("grad_stats.csv"), &stats)?;
    write_text(&dir.join("magnitude_hist.csv"), &hist)?;
    write_json(&dir.join("stats.json"), report)
}

/// Landscape scan of a frozen model; writes `landscape.csv` and `landscape.json`.
pub fn run_landscape(
    model: &MultimodalModel,
    dataset: &Dataset,
    n_points: usize,
    radius: f64,
    seed: u64,
    dir: &Path,
) -> Result<LandscapeScan> {
    let mut rng = RngStream::new(seed, STREAM_LANDSCAPE);
    let scan = diag::landscape_scan(model, dataset, n_points, radius, &mut rng)?;
    fs::create_dir_all(dir)?;
    write_landscape(dir, &scan)?;
    Ok(scan)
}
