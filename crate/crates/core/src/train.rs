//! SGD-with-momentum trainer that integrates each encoder's gradient pair
//! with the configured strategy and updates the heads with the plain sum.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, epoch_indices, SplitDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::integrate::{CaseTag, StrategyConfig};
use crate::model::{EvalMetrics, ModelDims, MultimodalModel};
use crate::numerics::{cosine, l2_norm, RealVec, RngStream};

const STREAM_INIT: u64 = 1;
const STREAM_BATCHES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(flatten)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub seed: u64,
    /// Evaluate on the test split every this many iterations (and always at the end).
    #[serde(default = "defaults::eval_every")]
    pub eval_every: usize,
}

mod defaults {
    pub fn eta() -> f64 {
        1e-2
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn epochs() -> usize {
        30
    }
    pub fn eval_every() -> usize {
        100
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: defaults::eta(),
            momentum: defaults::momentum(),
            batch_size: defaults::batch_size(),
            epochs: defaults::epochs(),
            strategy: StrategyConfig::default(),
            seed: 0,
            eval_every: defaults::eval_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        self.strategy.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderStep {
    pub cos_beta: f64,
    pub case_tag: CaseTag,
    pub norm_gm: f64,
    pub norm_gu: f64,
    pub alpha_m: f64,
    pub lambda: f64,
    /// Cosine between the integrated update and each input gradient.
    pub cos_update_gm: f64,
    pub cos_update_gu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub loss_m: f64,
    pub loss_u: Vec<f64>,
    pub encoders: Vec<EncoderStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    pub iteration: u64,
    pub metrics: EvalMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub strategy: String,
    pub seed: u64,
    pub initial_eval: EvalMetrics,
    pub iterations: Vec<IterationRecord>,
    pub evals: Vec<EvalRecord>,
    /// First iteration at which each encoder's update was tagged stationary.
    pub stationarity_iteration: Vec<Option<u64>>,
}

impl RunRecord {
    pub fn final_eval(&self) -> &EvalMetrics {
        self.evals.last().map_or(&self.initial_eval, |e| &e.metrics)
    }

    /// Scalar end-of-run metrics keyed by name.
    pub fn summary(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let fe = self.final_eval();
        out.insert("test_acc_multimodal".into(), fe.acc_multimodal);
        out.insert("test_loss_multimodal".into(), fe.loss_multimodal);
        for (k, a) in fe.acc_unimodal.iter().enumerate() {
            out.insert(format!("test_acc_unimodal_{k}"), *a);
        }
        for (k, l) in fe.loss_unimodal.iter().enumerate() {
            out.insert(format!("test_loss_unimodal_{k}"), *l);
        }
        if let Some(last) = self.iterations.last() {
            out.insert("train_loss_multimodal".into(), last.loss_m);
        }
        let n = self.iterations.len().max(1) as f64;
        let n_enc = self.stationarity_iteration.len();
        for k in 0..n_enc {
            let steps = self.iterations.iter().map(|it| &it.encoders[k]);
            let conflicts: Vec<&EncoderStep> = steps.clone().filter(|s| s.case_tag == CaseTag::Conflict).collect();
            out.insert(format!("conflict_fraction_{k}"), conflicts.len() as f64 / n);
            let mean_lambda = if conflicts.is_empty() {
                1.0
            } else {
                conflicts.iter().map(|s| s.lambda).sum::<f64>() / conflicts.len() as f64
            };
            out.insert(format!("mean_conflict_lambda_{k}"), mean_lambda);
            out.insert(format!("mean_cos_beta_{k}"), steps.map(|s| s.cos_beta).sum::<f64>() / n);
        }
        out
    }

    /// Smallest cosine between an integrated update and either of its inputs,
    /// over all iterations and encoders with a non-zero update.
    pub fn min_update_alignment(&self) -> f64 {
        self.iterations
            .iter()
            .flat_map(|it| it.encoders.iter())
            .filter(|s| s.case_tag != CaseTag::Stationary)
            .map(|s| s.cos_update_gm.min(s.cos_update_gu))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Which optional column families appear in the iteration CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    #[serde(default = "yes")]
    pub log_cosine: bool,
    #[serde(default = "yes")]
    pub log_magnitudes: bool,
}

fn yes() -> bool {
    true
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            log_cosine: true,
            log_magnitudes: true,
        }
    }
}

/// One row per iteration. Evaluation columns are empty on iterations
/// without an evaluation. Column meanings are listed in `docs/metrics.md`.
pub fn write_csv(record: &RunRecord, columns: CsvColumns, out: &mut impl Write) -> Result<()> {
    let n_enc = record.stationarity_iteration.len();
    let mut header = vec!["iteration".to_string(), "epoch".into(), "loss_m".into()];
    for k in 0..n_enc {
        header.push(format!("loss_u_{k}"));
    }
    for k in 0..n_enc {
        header.push(format!("case_{k}"));
        if columns.log_cosine {
            header.push(format!("cos_beta_{k}"));
            header.push(format!("cos_update_gm_{k}"));
            header.push(format!("cos_update_gu_{k}"));
        }
        if columns.log_magnitudes {
            header.push(format!("norm_gm_{k}"));
            header.push(format!("norm_gu_{k}"));
        }
        header.push(format!("alpha_m_{k}"));
        header.push(format!("lambda_{k}"));
    }
    header.push("test_acc_m".into());
    for k in 0..n_enc {
        header.push(format!("test_acc_u_{k}"));
    }
    header.push("test_loss_m".into());
    writeln!(out, "{}", header.join(","))?;

    let mut evals = record.evals.iter().peekable();
    for it in &record.iterations {
        let mut row = vec![it.iteration.to_string(), it.epoch.to_string(), it.loss_m.to_string()];
        row.extend(it.loss_u.iter().map(f64::to_string));
        for s in &it.encoders {
            row.push(s.case_tag.to_string());
            if columns.log_cosine {
                row.push(s.cos_beta.to_string());
                row.push(s.cos_update_gm.to_string());
                row.push(s.cos_update_gu.to_string());
            }
            if columns.log_magnitudes {
                row.push(s.norm_gm.to_string());
                row.push(s.norm_gu.to_string());
            }
            row.push(s.alpha_m.to_string());
            row.push(s.lambda.to_string());
        }
        match evals.peek() {
            Some(e) if e.iteration == it.iteration => {
                row.push(e.metrics.acc_multimodal.to_string());
                row.extend(e.metrics.acc_unimodal.iter().map(f64::to_string));
                row.push(e.metrics.loss_multimodal.to_string());
                evals.next();
            }
            _ => row.extend(std::iter::repeat_n(String::new(), n_enc + 2)),
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Run the configured number of epochs on `data.train`, evaluating on `data.test`.
pub fn train(mut model: MultimodalModel, data: &SplitDataset, cfg: &TrainConfig) -> Result<(MultimodalModel, RunRecord)> {
    cfg.validate()?;
    let dims = data.train.dims();
    if dims != model.dims().modality_dims {
        return Err(Error::Config(format!(
            "model expects modality dims {:?}, dataset has {dims:?}",
            model.dims().modality_dims
        )));
    }
    if data.train.n_classes != model.dims().n_classes {
        return Err(Error::Config("model and dataset disagree on n_classes".into()));
    }

    let n_enc = model.n_modalities();
    let groups = model.groups();
    let mut velocity: Vec<RealVec> = groups.iter().map(|g| RealVec::zeros(model.group(*g).len())).collect();
    let mut batch_rng = RngStream::new(cfg.seed, STREAM_BATCHES);

    let mut record = RunRecord {
        strategy: cfg.strategy.strategy.to_string(),
        seed: cfg.seed,
        initial_eval: model.evaluate(&data.test)?,
        iterations: Vec::new(),
        evals: Vec::new(),
        stationarity_iteration: vec![None; n_enc],
    };

    let mut t: u64 = 0;
    let total = (data.train.len() / cfg.batch_size) as u64 * cfg.epochs as u64;
    for epoch in 0..cfg.epochs {
        for idx in epoch_indices(data.train.len(), cfg.batch_size, &mut batch_rng)? {
            let batch = data.train.select(&idx);
            let grads = model.backward_per_loss(&batch)?;
            if !grads.loss_values.is_finite() {
                return Err(Error::NumericalAbort {
                    iteration: t,
                    param_norms: model.param_norms(),
                });
            }

            let mut updates = Vec::with_capacity(groups.len());
            let mut steps = Vec::with_capacity(n_enc);
            for k in 0..n_enc {
                let g_m = &grads.per_encoder_multimodal[k];
                let g_u = &grads.per_encoder_unimodal[k];
                let outcome = cfg.strategy.integrate(g_m, g_u)?;
                if outcome.case_tag == CaseTag::Stationary && record.stationarity_iteration[k].is_none() {
                    record.stationarity_iteration[k] = Some(t);
                }
                steps.push(EncoderStep {
                    cos_beta: outcome.cos_beta,
                    case_tag: outcome.case_tag,
                    norm_gm: l2_norm(g_m)?,
                    norm_gu: l2_norm(g_u)?,
                    alpha_m: outcome.alpha_m,
                    lambda: outcome.lambda,
                    cos_update_gm: cosine(&outcome.final_grad, g_m)?,
                    cos_update_gu: cosine(&outcome.final_grad, g_u)?,
                });
                updates.push(outcome.final_grad);
            }
            updates.push(grads.other_grad.clone());

            for ((g, v), h) in groups.iter().zip(velocity.iter_mut()).zip(&updates) {
                for (vi, hi) in v.iter_mut().zip(h.iter()) {
                    *vi = cfg.momentum * *vi + hi;
                }
                model.group_mut(*g).axpy(-cfg.eta, v)?;
            }

            record.iterations.push(IterationRecord {
                iteration: t,
                epoch,
                loss_m: grads.loss_values.multimodal,
                loss_u: grads.loss_values.unimodal.clone(),
                encoders: steps,
            });
            t += 1;
            if t.is_multiple_of(cfg.eval_every as u64) || t == total {
                record.evals.push(EvalRecord {
                    iteration: t - 1,
                    metrics: model.evaluate(&data.test)?,
                });
            }
        }
    }
    Ok((model, record))
}

/// Seeds for run `index` of a sweep: data and training streams both offset by `index`.
pub fn run_seeds(spec: &SyntheticSpec, cfg: &TrainConfig, index: u64) -> (u64, u64) {
    (spec.seed.wrapping_add(index), cfg.seed.wrapping_add(index))
}

pub fn init_model(dims: ModelDims, seed: u64) -> Result<MultimodalModel> {
    MultimodalModel::init_params(&RngStream::new(seed, STREAM_INIT), dims)
}

#[derive(Debug, Clone)]
pub struct SeededRun {
    pub index: u64,
    pub data: SplitDataset,
    pub model: MultimodalModel,
    pub record: RunRecord,
}

/// Load or generate the data, initialize the model and train, for sweep
/// index `index`. Datasets are cached under `cache_dir` when given.
pub fn run_indexed(
    spec: &SyntheticSpec,
    model_shape: &ModelShape,
    cfg: &TrainConfig,
    index: u64,
    cache_dir: Option<&Path>,
) -> Result<SeededRun> {
    let (data_seed, train_seed) = run_seeds(spec, cfg, index);
    let spec_i = SyntheticSpec {
        seed: data_seed,
        ..spec.clone()
    };
    let cache = cache_dir.map(|d| data::cache_file(d, &spec_i)).transpose()?;
    let data = data::load_or_generate(&spec_i, cache.as_deref())?;
    let cfg = TrainConfig {
        seed: train_seed,
        ..cfg.clone()
    };
    let model = init_model(model_shape.dims_for(spec), train_seed)?;
    let (model, record) = train(model, &data, &cfg).map_err(|e| Error::Seed {
        seed: train_seed,
        source: Box::new(e),
    })?;
    Ok(SeededRun {
        index,
        data,
        model,
        record,
    })
}

/// Encoder shape that, together with a dataset spec, fixes the model dims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    #[serde(default = "default_hidden")]
    pub hidden_dim: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dim: usize,
}

fn default_hidden() -> Option<usize> {
    Some(16)
}

fn default_output() -> usize {
    8
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            hidden_dim: default_hidden(),
            output_dim: default_output(),
        }
    }
}

impl ModelShape {
    pub fn dims_for(&self, spec: &SyntheticSpec) -> ModelDims {
        ModelDims {
            modality_dims: spec.dim_per_modality.clone(),
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            n_classes: spec.n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub strategy: String,
    pub n_seeds: usize,
    pub indices: Vec<u64>,
    pub per_seed: Vec<BTreeMap<String, f64>>,
    pub metrics: BTreeMap<String, MetricStats>,
}

/// Mean and sample standard deviation per metric, accumulated in index order.
pub fn aggregate(strategy: &str, mut runs: Vec<(u64, BTreeMap<String, f64>)>) -> SweepSummary {
    runs.sort_by_key(|r| r.0);
    let n = runs.len();
    let mut metrics = BTreeMap::new();
    if let Some((_, first)) = runs.first() {
        for key in first.keys() {
            let vals: Vec<f64> = runs.iter().filter_map(|(_, m)| m.get(key).copied()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            metrics.insert(key.clone(), MetricStats { mean, std });
        }
    }
    SweepSummary {
        strategy: strategy.to_string(),
        n_seeds: n,
        indices: runs.iter().map(|r| r.0).collect(),
        per_seed: runs.into_iter().map(|r| r.1).collect(),
        metrics,
    }
}

/// Train one run per index in parallel and aggregate their summaries.
/// Results do not depend on the order of `indices` or on scheduling.
pub fn sweep_indices(
    spec: &SyntheticSpec,
    model_shape: &ModelShape,
    cfg: &TrainConfig,
    indices: &[u64],
    cache_dir: Option<&Path>,
) -> Result<(SweepSummary, Vec<SeededRun>)> {
    let mut runs: Vec<SeededRun> = indices
        .par_iter()
        .map(|&i| run_indexed(spec, model_shape, cfg, i, cache_dir))
        .collect::<Result<_>>()?;
    runs.sort_by_key(|r| r.index);
    let summary = aggregate(
        cfg.strategy.strategy.as_str(),
        runs.iter().map(|r| (r.index, r.record.summary())).collect(),
    );
    Ok((summary, runs))
}

/// Sweep over indices `0..n_seeds`, i.e. seeds `seed..seed + n_seeds`.
pub fn seed_sweep(
    spec: &SyntheticSpec,
    model_shape: &ModelShape,
    cfg: &TrainConfig,
    n_seeds: usize,
    cache_dir: Option<&Path>,
) -> Result<(SweepSummary, Vec<SeededRun>)> {
    if n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let indices: Vec<u64> = (0..n_seeds as u64).collect();
    sweep_indices(spec, model_shape, cfg, &indices, cache_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::Strategy;
    use crate::model::ParamGroup;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 3,
            dim_per_modality: vec![5, 4],
            n_train: 120,
            n_test: 60,
            modality_noise: vec![0.5, 1.5],
            informative_frac: vec![0.6, 0.5],
            seed: 1,
        }
    }

    fn cfg(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            eta: 0.05,
            momentum: 0.9,
            batch_size: 20,
            epochs: 3,
            strategy: StrategyConfig::new(strategy, 1.5),
            seed: 3,
            eval_every: 5,
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = data::generate(&small_spec()).unwrap();
        let model = init_model(ModelShape::default().dims_for(&small_spec()), 3).unwrap();
        let mut c = cfg(Strategy::MMPareto);
        c.eta = 0.0;
        let (trained, rec) = train(model.clone(), &data, &c).unwrap();
        assert_eq!(trained.flat_params(), model.flat_params());
        assert!(rec.evals.iter().all(|e| e.metrics == rec.initial_eval));
    }

    #[test]
    fn uniform_single_step_matches_definition() {
        let spec = small_spec();
        let data = data::generate(&spec).unwrap();
        let model = init_model(ModelShape::default().dims_for(&spec), 3).unwrap();
        let c = TrainConfig {
            eta: 0.1,
            momentum: 0.0,
            batch_size: spec.n_train,
            epochs: 1,
            strategy: StrategyConfig::new(Strategy::UniformSum, 1.5),
            seed: 0,
            eval_every: 1,
        };
        let grads = model.backward_per_loss(&data.train.samples).unwrap();
        let (trained, rec) = train(model.clone(), &data, &c).unwrap();
        assert_eq!(rec.iterations.len(), 1);
        for k in 0..2 {
            let g = ParamGroup::Encoder(k);
            let expected = grads.per_encoder_multimodal[k].add(&grads.per_encoder_unimodal[k]).unwrap();
            for ((new, old), e) in trained.group(g).iter().zip(model.group(g).iter()).zip(expected.iter()) {
                assert!((new - (old - 0.1 * e)).abs() < 1e-12);
            }
        }
        let g = ParamGroup::Other;
        for ((new, old), e) in trained.group(g).iter().zip(model.group(g).iter()).zip(grads.other_grad.iter()) {
            assert!((new - (old - 0.1 * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = data::generate(&small_spec()).unwrap();
        let model = init_model(ModelShape::default().dims_for(&small_spec()), 3).unwrap();
        let (a, ra) = train(model.clone(), &data, &cfg(Strategy::MMPareto)).unwrap();
        let (b, rb) = train(model, &data, &cfg(Strategy::MMPareto)).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(ra, rb);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_csv(&ra, CsvColumns::default(), &mut buf_a).unwrap();
        write_csv(&rb, CsvColumns::default(), &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn mmpareto_updates_never_oppose_either_loss() {
        let spec = SyntheticSpec::asymmetric(2);
        let data = data::generate(&spec).unwrap();
        let model = init_model(ModelShape::default().dims_for(&spec), 2).unwrap();
        let mut c = cfg(Strategy::MMPareto);
        c.batch_size = 64;
        c.epochs = 2;
        let (_, rec) = train(model, &data, &c).unwrap();
        assert!(rec.iterations.iter().any(|it| it.encoders.iter().any(|s| s.case_tag == CaseTag::Conflict)));
        assert!(rec.min_update_alignment() >= -1e-12);
    }

    #[test]
    fn csv_layout() {
        let data = data::generate(&small_spec()).unwrap();
        let model = init_model(ModelShape::default().dims_for(&small_spec()), 3).unwrap();
        let (_, rec) = train(model, &data, &cfg(Strategy::ConventionalPareto)).unwrap();
        let mut buf = Vec::new();
        write_csv(&rec, CsvColumns::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), rec.iterations.len() + 1);
        let width = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[0].starts_with("iteration,epoch,loss_m,loss_u_0,loss_u_1,case_0,cos_beta_0"));

        let mut narrow = Vec::new();
        write_csv(
            &rec,
            CsvColumns {
                log_cosine: false,
                log_magnitudes: false,
            },
            &mut narrow,
        )
        .unwrap();
        let head = String::from_utf8(narrow).unwrap();
        assert!(!head.lines().next().unwrap().contains("cos_beta"));
    }

    #[test]
    fn sweep_is_order_independent() {
        let spec = small_spec();
        let shape = ModelShape::default();
        let c = cfg(Strategy::MMPareto);
        let (fwd, _) = sweep_indices(&spec, &shape, &c, &[0, 1, 2], None).unwrap();
        let (rev, _) = sweep_indices(&spec, &shape, &c, &[2, 0, 1], None).unwrap();
        assert_eq!(fwd, rev);
        let (again, _) = seed_sweep(&spec, &shape, &c, 3, None).unwrap();
        assert_eq!(fwd, again);

        let (one, runs) = seed_sweep(&spec, &shape, &c, 1, None).unwrap();
        let single = run_indexed(&spec, &shape, &c, 0, None).unwrap();
        assert_eq!(runs[0].record, single.record);
        assert_eq!(one.metrics["test_acc_multimodal"].mean, single.record.summary()["test_acc_multimodal"]);
        assert_eq!(one.metrics["test_acc_multimodal"].std, 0.0);
        assert!(seed_sweep(&spec, &shape, &c, 0, None).is_err());
    }

    #[test]
    fn convex_encoders_descend_monotonically() {
        let spec = small_spec();
        let data = data::generate(&spec).unwrap();
        let shape = ModelShape {
            hidden_dim: None,
            output_dim: 3,
        };
        let mut model = init_model(shape.dims_for(&spec), 8).unwrap();
        let full = &data.train.samples;
        let mut prev = model.losses(full).unwrap().total();
        for _ in 0..300 {
            let g = model.backward_per_loss(full).unwrap();
            for k in 0..2 {
                let h = g.per_encoder_multimodal[k].add(&g.per_encoder_unimodal[k]).unwrap();
                model.group_mut(ParamGroup::Encoder(k)).axpy(-1e-3, &h).unwrap();
            }
            model.group_mut(ParamGroup::Other).axpy(-1e-3, &g.other_grad).unwrap();
            let l = model.losses(full).unwrap().total();
            assert!(l <= prev, "{l} > {prev}");
            prev = l;
        }
    }

    #[test]
    fn bad_configs() {
        let mut c = cfg(Strategy::MMPareto);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        let mut c = cfg(Strategy::MMPareto);
        c.strategy.gamma = 0.5;
        assert!(c.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"strategy":"pareto"}"#).unwrap();
        assert_eq!(parsed.momentum, 0.9);
        assert_eq!(parsed.strategy.gamma, 1.5);
        assert_eq!(parsed.eta, 1e-2);
    }
}
