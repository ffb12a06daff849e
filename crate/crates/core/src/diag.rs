//! Gradient statistics, the noise-variance threshold of Pareto weighting, and
//! a one-dimensional loss-landscape scan.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::model::MultimodalModel;
use crate::numerics::{l2_norm, RealVec, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelector {
    /// Joint loss, differentiated w.r.t. the chosen encoder.
    Multimodal,
    /// The chosen encoder's own unimodal loss.
    Unimodal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradStats {
    pub mean_magnitude: f64,
    pub magnitude_samples: Vec<f64>,
    /// Trace of the empirical covariance (unbiased) of the gradient across batches.
    pub cov_trace: f64,
}

/// Gradient of one loss w.r.t. one encoder, evaluated on `n_batches`
/// independently drawn mini-batches of the frozen model.
///
/// Each batch is sampled without replacement and then sorted, so a batch of
/// the whole dataset is always evaluated in identical order.
pub fn gradient_stats(
    model: &MultimodalModel,
    dataset: &Dataset,
    selector: LossSelector,
    encoder: usize,
    n_batches: usize,
    batch_size: usize,
    rng: &mut RngStream,
) -> Result<GradStats> {
    if encoder >= model.n_modalities() {
        return Err(Error::Config(format!(
            "modality index {encoder} out of range ({} modalities)",
            model.n_modalities()
        )));
    }
    if n_batches < 2 {
        return Err(Error::Config(format!("n_batches must be >= 2, got {n_batches}")));
    }
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::Config(format!(
            "batch_size must lie in 1..={}, got {batch_size}",
            dataset.len()
        )));
    }
    let mut grads = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut idx = rng.permutation(dataset.len());
        idx.truncate(batch_size);
        idx.sort_unstable();
        let g = model.backward_per_loss(&dataset.select(&idx))?;
        grads.push(match selector {
            LossSelector::Multimodal => g.per_encoder_multimodal[encoder].clone(),
            LossSelector::Unimodal => g.per_encoder_unimodal[encoder].clone(),
        });
    }
    let magnitude_samples: Vec<f64> = grads.iter().map(|g| g.l2_norm()).collect::<Result<_>>()?;
    let mean_magnitude = magnitude_samples.iter().sum::<f64>() / n_batches as f64;
    Ok(GradStats {
        mean_magnitude,
        magnitude_samples,
        cov_trace: covariance_trace(&grads)?,
    })
}

/// Unbiased covariance trace, computed on samples shifted by the first one.
pub fn covariance_trace(samples: &[RealVec]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Config("covariance needs at least two samples".into()));
    }
    let d = samples[0].len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for s in samples {
        check_len(d, s.len())?;
        for j in 0..d {
            let x = s[j] - samples[0][j];
            sum[j] += x;
            sum_sq[j] += x * x;
        }
    }
    let nf = n as f64;
    let trace: f64 = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, q)| (q - s * s / nf).max(0.0))
        .sum::<f64>()
        / (nf - 1.0);
    Ok(trace)
}

fn threshold_formula(k: f64) -> f64 {
    (3.0 * k - 1.0) / (2.0 * k + 2.0)
}

/// Upper end `(3k - 1) / (2k + 2)` of the range of `alpha_m` for which Pareto
/// weighting yields less gradient noise than uniform weighting, when the
/// unimodal covariance is `k` times the multimodal one.
pub fn variance_threshold(k: f64) -> Result<f64> {
    if !(k >= 1.0) || !k.is_finite() {
        return Err(Error::Domain(format!("covariance ratio k must be finite and >= 1, got {k}")));
    }
    Ok(threshold_formula(k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceRatio {
    pub k_hat: f64,
    pub threshold: f64,
}

impl CovarianceRatio {
    pub fn new(cov_trace_unimodal: f64, cov_trace_multimodal: f64) -> Result<Self> {
        if !(cov_trace_multimodal > 0.0) || !(cov_trace_unimodal > 0.0) {
            return Err(Error::Domain(format!(
                "covariance traces must be positive, got {cov_trace_unimodal} / {cov_trace_multimodal}"
            )));
        }
        let k_hat = cov_trace_unimodal / cov_trace_multimodal;
        Ok(Self {
            k_hat,
            threshold: threshold_formula(k_hat),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseComparison {
    pub var_pareto: f64,
    pub var_uniform: f64,
    pub se_pareto: f64,
    pub se_uniform: f64,
    /// Standard error of `var_pareto - var_uniform` (common random numbers).
    pub se_difference: f64,
    pub analytic_pareto: f64,
    pub analytic_uniform: f64,
}

/// Total noise variance of the Pareto-weighted sum `2 a eps_m + 2 (1 - a) eps_u`
/// against the plain sum `eps_m + eps_u`, with `Cov(eps_u) = k Cov(eps_m)` and
/// `tr Cov(eps_m) = cov_m_trace`. Both estimates reuse the same draws.
pub fn noise_variance_compare(
    k: f64,
    alpha_m: f64,
    cov_m_trace: f64,
    n_samples: usize,
    rng: &mut RngStream,
) -> Result<NoiseComparison> {
    variance_threshold(k)?;
    if !(0.5..=1.0).contains(&alpha_m) {
        return Err(Error::Domain(format!("alpha_m must lie in [0.5, 1], got {alpha_m}")));
    }
    if !(cov_m_trace >= 0.0) || !cov_m_trace.is_finite() {
        return Err(Error::Domain(format!("cov_m_trace must be finite and >= 0, got {cov_m_trace}")));
    }
    if n_samples < 2 {
        return Err(Error::Config("n_samples must be >= 2".into()));
    }
    let (wm, wu) = (2.0 * alpha_m, 2.0 * (1.0 - alpha_m));
    let (sm, su) = (cov_m_trace.sqrt(), (k * cov_m_trace).sqrt());
    let mut p = Moments::default();
    let mut u = Moments::default();
    let mut diff = Moments::default();
    for _ in 0..n_samples {
        let em = sm * rng.standard_normal();
        let eu = su * rng.standard_normal();
        let zp = (wm * em + wu * eu).powi(2);
        let zu = (em + eu).powi(2);
        p.push(zp);
        u.push(zu);
        diff.push(zp - zu);
    }
    Ok(NoiseComparison {
        var_pareto: p.mean(),
        var_uniform: u.mean(),
        se_pareto: p.standard_error(),
        se_uniform: u.standard_error(),
        se_difference: diff.standard_error(),
        analytic_pareto: (wm * wm + wu * wu * k) * cov_m_trace,
        analytic_uniform: (1.0 + k) * cov_m_trace,
    })
}

#[derive(Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn mean(&self) -> f64 {
        self.mean
    }

    fn standard_error(&self) -> f64 {
        (self.m2 / (self.n as f64 - 1.0) / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins spanning `[min, max]` of the samples; the last bin is closed.
pub fn histogram(samples: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    if samples.is_empty() {
        return Err(Error::Empty);
    }
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + width * b as f64,
            hi: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &x in samples {
        let b = if width > 0.0 { (((x - lo) / width) as usize).min(bins - 1) } else { 0 };
        out[b].count += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeScan {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub accuracies: Vec<f64>,
    /// `(L(+d) + L(-d) - 2 L(0)) / d^2` at the innermost offset `d`.
    pub sharpness_proxy: f64,
}

/// Evaluates `eval(center + a * direction)` on `n_points` offsets `a` spread
/// evenly over `[-radius, radius]`. `eval` returns `(loss, accuracy)`.
pub fn scan_along<F>(center: &[f64], direction: &[f64], n_points: usize, radius: f64, mut eval: F) -> Result<LandscapeScan>
where
    F: FnMut(&[f64]) -> Result<(f64, f64)>,
{
    check_len(center.len(), direction.len())?;
    if n_points < 3 || n_points.is_multiple_of(2) {
        return Err(Error::Config(format!("n_points must be odd and >= 3, got {n_points}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Config(format!("radius must be finite and > 0, got {radius}")));
    }
    let half = (n_points / 2) as i64;
    let alphas: Vec<f64> = (-half..=half).map(|i| radius * i as f64 / half as f64).collect();
    let mut losses = Vec::with_capacity(n_points);
    let mut accuracies = Vec::with_capacity(n_points);
    let mut theta = vec![0.0; center.len()];
    for &a in &alphas {
        for ((t, c), d) in theta.iter_mut().zip(center).zip(direction) {
            *t = c + a * d;
        }
        let (loss, acc) = eval(&theta)?;
        if !loss.is_finite() {
            return Err(Error::RadiusTooLarge { offset: a, radius });
        }
        losses.push(loss);
        accuracies.push(acc);
    }
    let h = half as usize;
    let delta = alphas[h + 1];
    let sharpness_proxy = (losses[h + 1] + losses[h - 1] - 2.0 * losses[h]) / (delta * delta);
    Ok(LandscapeScan {
        alphas,
        losses,
        accuracies,
        sharpness_proxy,
    })
}

/// Random direction with each parameter segment (encoder, joint head, each
/// unimodal head) rescaled to the norm of that segment's parameters.
pub fn segment_scaled_direction(model: &MultimodalModel, rng: &mut RngStream) -> Result<RealVec> {
    let theta = model.flat_params();
    let mut dir: RealVec = (0..theta.len()).map(|_| rng.standard_normal()).collect();
    for r in model.segment_ranges() {
        let dn = l2_norm(&dir[r.clone()])?;
        let pn = l2_norm(&theta[r.clone()])?;
        let s = if dn > 0.0 { pn / dn } else { 0.0 };
        for x in &mut dir[r] {
            *x *= s;
        }
    }
    Ok(dir)
}

/// Summed training objective (joint plus unimodal losses) and joint accuracy
/// of `model` on `dataset`, along one segment-scaled random direction.
pub fn landscape_scan(
    model: &MultimodalModel,
    dataset: &Dataset,
    n_points: usize,
    radius: f64,
    rng: &mut RngStream,
) -> Result<LandscapeScan> {
    let center = model.flat_params();
    let direction = segment_scaled_direction(model, rng)?;
    let mut probe = model.clone();
    scan_along(&center, &direction, n_points, radius, |theta| {
        probe.set_flat_params(theta)?;
        let m = probe.evaluate(dataset)?;
        Ok((m.loss_multimodal + m.loss_unimodal.iter().sum::<f64>(), m.acc_multimodal))
    })
}

/// Worst relative disagreement between reverse-mode gradients and central
/// finite differences, per parameter group (each encoder, then the heads).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub max_rel_error: Vec<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares every analytic gradient of `model` on `batch` with central
/// differences of step `h`: the joint and own-unimodal loss for each encoder,
/// and the summed loss for the heads. An entry's error is
/// `|fd - g| / max(|g|, |fd|, floor)` where `floor` is `1e-3` times the largest
/// gradient entry of that group, so near-zero entries are judged on the
/// group's scale.
pub fn gradient_check(model: &MultimodalModel, batch: &crate::data::Batch, h: f64) -> Result<GradCheck> {
    let grads = model.backward_per_loss(batch)?;
    let theta = model.flat_params();
    let mut probe = model.clone();
    let n_enc = model.n_modalities();
    let enc_ranges: Vec<_> = model.segment_ranges().into_iter().take(n_enc).collect();
    let other_start = enc_ranges.last().map_or(0, |r| r.end);

    // loss values as a function of one perturbed coordinate
    let mut at = |j: usize, delta: f64| -> Result<crate::model::LossValues> {
        let mut t = theta.clone();
        t[j] += delta;
        probe.set_flat_params(&t)?;
        probe.losses(batch)
    };

    let mut errors = Vec::with_capacity(n_enc + 1);
    for (k, r) in enc_ranges.iter().enumerate() {
        let pairs = [
            (&grads.per_encoder_multimodal[k], None),
            (&grads.per_encoder_unimodal[k], Some(k)),
        ];
        let mut worst = 0.0f64;
        for (g, uni) in pairs {
            let pick = |l: &crate::model::LossValues| uni.map_or(l.multimodal, |u| l.unimodal[u]);
            let mut fd = Vec::with_capacity(r.len());
            for j in r.clone() {
                let (up, dn) = (at(j, h)?, at(j, -h)?);
                fd.push((pick(&up) - pick(&dn)) / (2.0 * h));
            }
            worst = worst.max(max_rel_error(g, &fd));
        }
        errors.push(worst);
    }
    let mut fd = Vec::with_capacity(theta.len() - other_start);
    for j in other_start..theta.len() {
        let (up, dn) = (at(j, h)?, at(j, -h)?);
        fd.push((up.total() - dn.total()) / (2.0 * h));
    }
    errors.push(max_rel_error(&grads.other_grad, &fd));
    Ok(GradCheck { max_rel_error: errors })
}

fn max_rel_error(g: &[f64], fd: &[f64]) -> f64 {
    let scale = g.iter().chain(fd).fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * scale).max(f64::MIN_POSITIVE);
    g.iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
