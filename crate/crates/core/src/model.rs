//! Late-fusion multimodal MLP with one encoder per modality.
//!
//! Encoder `k` maps modality `k` to an embedding (optionally through one
//! tanh hidden layer). The joint head reads the concatenation of all
//! embeddings; unimodal head `k` reads embedding `k` alone. All losses are
//! mean cross-entropy over the batch, and gradients are computed in
//! closed form by reverse-mode accumulation, one loss at a time.
//!
//! Parameters live in flat vectors: one per encoder, and one ("other")
//! holding the joint head followed by every unimodal head. Each affine map
//! is stored as its row-major weight matrix (`out x in`) then its bias.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{check_len, Error, Result};
use crate::numerics::{l2_norm, Matrix, RealVec, RngStream};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub modality_dims: Vec<usize>,
    /// `None` gives a single affine encoder with no nonlinearity.
    pub hidden_dim: Option<usize>,
    pub output_dim: usize,
    pub n_classes: usize,
}

impl ModelDims {
    pub fn for_modalities(modality_dims: Vec<usize>, n_classes: usize) -> Self {
        Self {
            modality_dims,
            hidden_dim: Some(16),
            output_dim: 8,
            n_classes,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least two modalities, got {}",
                self.modality_dims.len()
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least two classes, got {}", self.n_classes)));
        }
        if self.modality_dims.contains(&0) || self.output_dim == 0 || self.hidden_dim == Some(0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Affine {
    in_dim: usize,
    out_dim: usize,
}

impl Affine {
    fn len(self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }

    fn weights(self, p: &[f64]) -> &[f64] {
        &p[..self.out_dim * self.in_dim]
    }

    fn bias(self, p: &[f64]) -> &[f64] {
        &p[self.out_dim * self.in_dim..self.len()]
    }

    fn forward(self, p: &[f64], x: &Matrix) -> Matrix {
        let (w, b) = (self.weights(p), self.bias(p));
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, y) in out.row_mut(r).iter_mut().enumerate() {
                let wr = &w[o * self.in_dim..(o + 1) * self.in_dim];
                *y = b[o] + wr.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        out
    }

    /// Returns (parameter gradient, input gradient) for upstream `dout`.
    fn backward(self, p: &[f64], x: &Matrix, dout: &Matrix) -> (Vec<f64>, Matrix) {
        let w = self.weights(p);
        let mut grad = vec![0.0; self.len()];
        let mut dx = Matrix::zeros(x.rows(), self.in_dim);
        let (gw, gb) = grad.split_at_mut(self.out_dim * self.in_dim);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let dr = dout.row(r);
            let dxr = dx.row_mut(r);
            for o in 0..self.out_dim {
                let d = dr[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let gwr = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
                let wr = &w[o * self.in_dim..(o + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    gwr[i] += d * xr[i];
                    dxr[i] += d * wr[i];
                }
            }
        }
        (grad, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct EncoderShape {
    hidden: Option<Affine>,
    out: Affine,
}

impl EncoderShape {
    fn new(in_dim: usize, hidden: Option<usize>, out_dim: usize) -> Self {
        match hidden {
            Some(h) => Self {
                hidden: Some(Affine { in_dim, out_dim: h }),
                out: Affine { in_dim: h, out_dim },
            },
            None => Self {
                hidden: None,
                out: Affine { in_dim, out_dim },
            },
        }
    }

    fn len(self) -> usize {
        self.hidden.map_or(0, Affine::len) + self.out.len()
    }

    fn split(self, p: &[f64]) -> (&[f64], &[f64]) {
        p.split_at(self.hidden.map_or(0, Affine::len))
    }
}

struct EncoderTrace {
    /// post-tanh hidden activations
    hidden: Option<Matrix>,
    embedding: Matrix,
}

impl EncoderShape {
    fn forward(self, p: &[f64], x: &Matrix) -> EncoderTrace {
        let (ph, po) = self.split(p);
        match self.hidden {
            Some(h) => {
                let mut a = h.forward(ph, x);
                for r in 0..a.rows() {
                    for v in a.row_mut(r) {
                        *v = v.tanh();
                    }
                }
                let embedding = self.out.forward(po, &a);
                EncoderTrace {
                    hidden: Some(a),
                    embedding,
                }
            }
            None => EncoderTrace {
                hidden: None,
                embedding: self.out.forward(po, x),
            },
        }
    }

    fn backward(self, p: &[f64], x: &Matrix, trace: &EncoderTrace, dz: &Matrix) -> Vec<f64> {
        let (ph, po) = self.split(p);
        match (self.hidden, &trace.hidden) {
            (Some(h), Some(act)) => {
                let (g_out, mut dact) = self.out.backward(po, act, dz);
                for r in 0..dact.rows() {
                    let ar = act.row(r);
                    for (d, a) in dact.row_mut(r).iter_mut().zip(ar) {
                        *d *= 1.0 - a * a;
                    }
                }
                let (mut g_hidden, _) = h.backward(ph, x, &dact);
                g_hidden.extend_from_slice(&g_out);
                g_hidden
            }
            _ => self.out.backward(po, x, dz).0,
        }
    }
}

/// Mean cross-entropy and its gradient w.r.t. the logits (already divided by batch size).
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let b = logits.rows();
    let mut grad = Matrix::zeros(b, logits.cols());
    let mut total = 0.0;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - row[labels[r]];
        let g = grad.row_mut(r);
        for (gj, z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() / b as f64;
        }
        g[labels[r]] -= 1.0 / b as f64;
    }
    (total / b as f64, grad)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = (0..logits.rows()).filter(|&r| argmax(logits.row(r)) == labels[r]).count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub joint_logits: Matrix,
    pub uni_logits: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValues {
    pub multimodal: f64,
    pub unimodal: Vec<f64>,
}

impl LossValues {
    pub fn total(&self) -> f64 {
        self.multimodal + self.unimodal.iter().sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.multimodal.is_finite() && self.unimodal.iter().all(|l| l.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    /// Gradient of the joint loss w.r.t. each encoder.
    pub per_encoder_multimodal: Vec<RealVec>,
    /// Gradient of unimodal loss `k` w.r.t. encoder `k`.
    pub per_encoder_unimodal: Vec<RealVec>,
    /// Gradient of the summed losses w.r.t. the heads.
    pub other_grad: RealVec,
    pub loss_values: LossValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss_multimodal: f64,
    pub loss_unimodal: Vec<f64>,
    pub acc_multimodal: f64,
    pub acc_unimodal: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder(usize),
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel {
    dims: ModelDims,
    encoders: Vec<EncoderShape>,
    fusion: Affine,
    uni_heads: Vec<Affine>,
    encoder_params: Vec<RealVec>,
    other_params: RealVec,
}

impl MultimodalModel {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let encoders: Vec<EncoderShape> = dims
            .modality_dims
            .iter()
            .map(|&d| EncoderShape::new(d, dims.hidden_dim, dims.output_dim))
            .collect();
        let fusion = Affine {
            in_dim: dims.output_dim * dims.n_modalities(),
            out_dim: dims.n_classes,
        };
        let uni_heads = vec![
            Affine {
                in_dim: dims.output_dim,
                out_dim: dims.n_classes,
            };
            dims.n_modalities()
        ];
        let encoder_params = encoders.iter().map(|e| RealVec::zeros(e.len())).collect();
        let other_len = fusion.len() + uni_heads.iter().map(|h| h.len()).sum::<usize>();
        Ok(Self {
            dims,
            encoders,
            fusion,
            uni_heads,
            encoder_params,
            other_params: RealVec::zeros(other_len),
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn n_modalities(&self) -> usize {
        self.dims.n_modalities()
    }

    pub fn encoder_dim(&self, k: usize) -> usize {
        self.encoders[k].len()
    }

    pub fn group(&self, g: ParamGroup) -> &RealVec {
        match g {
            ParamGroup::Encoder(k) => &self.encoder_params[k],
            ParamGroup::Other => &self.other_params,
        }
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut RealVec {
        match g {
            ParamGroup::Encoder(k) => &mut self.encoder_params[k],
            ParamGroup::Other => &mut self.other_params,
        }
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        (0..self.n_modalities())
            .map(ParamGroup::Encoder)
            .chain(std::iter::once(ParamGroup::Other))
            .collect()
    }

    /// Ranges inside the other-parameters vector: joint head, then each unimodal head.
    pub fn head_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(1 + self.uni_heads.len());
        let mut start = 0;
        for len in std::iter::once(self.fusion.len()).chain(self.uni_heads.iter().map(|h| h.len())) {
            out.push(start..start + len);
            start += len;
        }
        out
    }

    /// Ranges of the flat parameter vector, one per encoder and one per head,
    /// in the order returned by [`flat_params`](Self::flat_params).
    pub fn segment_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for p in &self.encoder_params {
            out.push(start..start + p.len());
            start += p.len();
        }
        for r in self.head_ranges() {
            out.push(start + r.start..start + r.end);
        }
        out
    }

    pub fn flat_params(&self) -> RealVec {
        let mut parts: Vec<&[f64]> = self.encoder_params.iter().map(|p| p.as_slice()).collect();
        parts.push(&self.other_params);
        RealVec::concat(&parts)
    }

    pub fn n_params(&self) -> usize {
        self.encoder_params.iter().map(|p| p.len()).sum::<usize>() + self.other_params.len()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len(self.n_params(), flat.len())?;
        let mut offset = 0;
        for p in &mut self.encoder_params {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        self.other_params.copy_from_slice(&flat[offset..]);
        Ok(())
    }

    pub fn param_norms(&self) -> Vec<f64> {
        self.groups()
            .into_iter()
            .map(|g| l2_norm(self.group(g)).unwrap_or(0.0))
            .collect()
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        check_len(self.n_modalities(), batch.n_modalities())?;
        for (m, &d) in batch.features.iter().zip(&self.dims.modality_dims) {
            check_len(d, m.cols())?;
            check_len(batch.len(), m.rows())?;
        }
        if let Some(&y) = batch.labels.iter().find(|&&y| y >= self.dims.n_classes) {
            return Err(Error::Config(format!("label {y} out of range")));
        }
        Ok(())
    }

    fn encode(&self, batch: &Batch) -> Vec<EncoderTrace> {
        self.encoders
            .iter()
            .zip(&self.encoder_params)
            .zip(&batch.features)
            .map(|((e, p), x)| e.forward(p, x))
            .collect()
    }

    fn fuse(&self, traces: &[EncoderTrace]) -> Matrix {
        let b = traces[0].embedding.rows();
        let o = self.dims.output_dim;
        let mut fused = Matrix::zeros(b, o * traces.len());
        for r in 0..b {
            let row = fused.row_mut(r);
            for (k, t) in traces.iter().enumerate() {
                row[k * o..(k + 1) * o].copy_from_slice(t.embedding.row(r));
            }
        }
        fused
    }

    fn head_params(&self, idx: usize) -> &[f64] {
        &self.other_params[self.head_ranges()[idx].clone()]
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let traces = self.encode(batch);
        let fused = self.fuse(&traces);
        let joint_logits = self.fusion.forward(self.head_params(0), &fused);
        let uni_logits = traces
            .iter()
            .enumerate()
            .map(|(k, t)| self.uni_heads[k].forward(self.head_params(k + 1), &t.embedding))
            .collect();
        Ok(ForwardOutput {
            joint_logits,
            uni_logits,
        })
    }

    pub fn losses(&self, batch: &Batch) -> Result<LossValues> {
        let out = self.forward(batch)?;
        Ok(LossValues {
            multimodal: cross_entropy(&out.joint_logits, &batch.labels).0,
            unimodal: out
                .uni_logits
                .iter()
                .map(|l| cross_entropy(l, &batch.labels).0)
                .collect(),
        })
    }

    pub fn evaluate(&self, dataset: &Dataset) -> Result<EvalMetrics> {
        let batch = &dataset.samples;
        let out = self.forward(batch)?;
        Ok(EvalMetrics {
            loss_multimodal: cross_entropy(&out.joint_logits, &batch.labels).0,
            loss_unimodal: out
                .uni_logits
                .iter()
                .map(|l| cross_entropy(l, &batch.labels).0)
                .collect(),
            acc_multimodal: accuracy(&out.joint_logits, &batch.labels),
            acc_unimodal: out.uni_logits.iter().map(|l| accuracy(l, &batch.labels)).collect(),
        })
    }

    pub fn backward_per_loss(&self, batch: &Batch) -> Result<LossGradients> {
        self.check_batch(batch)?;
        let traces = self.encode(batch);
        let fused = self.fuse(&traces);
        let o = self.dims.output_dim;

        let joint_logits = self.fusion.forward(self.head_params(0), &fused);
        let (loss_m, dlogits_m) = cross_entropy(&joint_logits, &batch.labels);
        let (g_fusion, dfused) = self.fusion.backward(self.head_params(0), &fused, &dlogits_m);

        let mut other = Vec::with_capacity(self.other_params.len());
        other.extend_from_slice(&g_fusion);

        let mut per_m = Vec::with_capacity(traces.len());
        let mut per_u = Vec::with_capacity(traces.len());
        let mut loss_u = Vec::with_capacity(traces.len());
        for (k, trace) in traces.iter().enumerate() {
            let mut dz_m = Matrix::zeros(dfused.rows(), o);
            for r in 0..dfused.rows() {
                dz_m.row_mut(r).copy_from_slice(&dfused.row(r)[k * o..(k + 1) * o]);
            }
            let head = self.head_params(k + 1);
            let logits = self.uni_heads[k].forward(head, &trace.embedding);
            let (l, dlogits) = cross_entropy(&logits, &batch.labels);
            let (g_head, dz_u) = self.uni_heads[k].backward(head, &trace.embedding, &dlogits);
            other.extend_from_slice(&g_head);
            loss_u.push(l);

            let enc = self.encoders[k];
            let p = &self.encoder_params[k];
            let x = &batch.features[k];
            per_m.push(RealVec::new(enc.backward(p, x, trace, &dz_m)));
            per_u.push(RealVec::new(enc.backward(p, x, trace, &dz_u)));
        }

        Ok(LossGradients {
            per_encoder_multimodal: per_m,
            per_encoder_unimodal: per_u,
            other_grad: RealVec::new(other),
            loss_values: LossValues {
                multimodal: loss_m,
                unimodal: loss_u,
            },
        })
    }

    /// Weights ~ N(0, 1/fan_in), biases zero; one random stream per layer.
    pub fn init_params(rng: &RngStream, dims: ModelDims) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        let fill = |p: &mut [f64], layer: Affine, tag: u64| {
            let mut r = rng.fork(tag);
            let std = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut p[..layer.out_dim * layer.in_dim] {
                *w = std * r.standard_normal();
            }
        };
        for k in 0..model.encoders.len() {
            let shape = model.encoders[k];
            let p = &mut model.encoder_params[k];
            let split = shape.hidden.map_or(0, Affine::len);
            if let Some(h) = shape.hidden {
                fill(&mut p[..split], h, 100 + 2 * k as u64);
            }
            fill(&mut p[split..], shape.out, 101 + 2 * k as u64);
        }
        let ranges = model.head_ranges();
        let layers: Vec<Affine> = std::iter::once(model.fusion).chain(model.uni_heads.iter().copied()).collect();
        for (i, (range, layer)) in ranges.into_iter().zip(layers).enumerate() {
            fill(&mut model.other_params[range], layer, 1000 + i as u64);
        }
        Ok(model)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            layout: CheckpointLayout {
                modality_dims: self.dims.modality_dims.clone(),
                hidden_dim: self.dims.hidden_dim,
                output_dim: self.dims.output_dim,
                n_classes: self.dims.n_classes,
                seed,
            },
            params: self.flat_params().into_inner(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint schema {}",
                ck.schema_version
            )));
        }
        let mut m = Self::zeros(ModelDims {
            modality_dims: ck.layout.modality_dims.clone(),
            hidden_dim: ck.layout.hidden_dim,
            output_dim: ck.layout.output_dim,
            n_classes: ck.layout.n_classes,
        })?;
        m.set_flat_params(&ck.params)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayout {
    pub modality_dims: Vec<usize>,
    pub hidden_dim: Option<usize>,
    pub output_dim: usize,
    pub n_classes: usize,
    pub seed: u64,
}

/// JSON checkpoint: layout header plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub layout: CheckpointLayout,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
