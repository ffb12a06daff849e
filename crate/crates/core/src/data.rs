//! Seeded synthetic multimodal classification data.
//!
//! Every class owns one mean per modality, drawn on the unit sphere of that
//! modality's informative coordinates. Samples add isotropic Gaussian noise
//! with a per-modality scale, so a noisier modality is a strictly harder
//! unimodal problem while the concatenation of all modalities stays at
//! least as informative as the best single one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

const STREAM_MEANS: u64 = 0x6d65_616e;
const STREAM_TRAIN: u64 = 0x7472_6169;
const STREAM_TEST: u64 = 0x7465_7374;

const MAGIC: &[u8; 4] = b"MMPD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim_per_modality: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub modality_noise: Vec<f64>,
    pub informative_frac: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Two modalities, one clean (sigma 0.5) and one noisy (sigma 2.0).
    pub fn asymmetric(seed: u64) -> Self {
        Self {
            n_classes: 6,
            dim_per_modality: vec![20, 20],
            n_train: 2400,
            n_test: 1200,
            modality_noise: vec![0.5, 2.0],
            informative_frac: vec![0.5, 1.0],
            seed,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.dim_per_modality.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        let n = self.dim_per_modality.len();
        if n == 0 {
            return Err(Error::Config("at least one modality is required".into()));
        }
        if self.modality_noise.len() != n || self.informative_frac.len() != n {
            return Err(Error::Config(format!(
                "modality_noise ({}) and informative_frac ({}) must both have {n} entries",
                self.modality_noise.len(),
                self.informative_frac.len()
            )));
        }
        if self.dim_per_modality.contains(&0) {
            return Err(Error::Config("modality dimensions must be positive".into()));
        }
        if let Some(s) = self.modality_noise.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("modality noise must be finite and >= 0, got {s}")));
        }
        if let Some(f) = self.informative_frac.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Config(format!("informative_frac must lie in (0, 1], got {f}")));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    fn informative_dims(&self, k: usize) -> usize {
        let d = self.dim_per_modality[k];
        ((self.informative_frac[k] * d as f64).round() as usize).clamp(1, d)
    }
}

/// Rows of every modality matrix line up with `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            features: self.features.iter().map(|m| m.select_rows(idx)).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Batch,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.samples.features.iter().map(Matrix::cols).collect()
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        self.samples.select(idx)
    }

    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select(perm),
            n_classes: self.n_classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub spec: SyntheticSpec,
    pub train: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl SplitDataset {
    pub fn split(&self, s: Split) -> &Dataset {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let root = RngStream::new(spec.seed, 0);

    // means[k][c] has length dim_per_modality[k]; non-informative coordinates are zero
    let mut mean_rng = root.fork(STREAM_MEANS);
    let means: Vec<Vec<Vec<f64>>> = (0..spec.n_modalities())
        .map(|k| {
            let d = spec.dim_per_modality[k];
            let m = spec.informative_dims(k);
            (0..spec.n_classes)
                .map(|_| {
                    let mut v: Vec<f64> = (0..m).map(|_| mean_rng.standard_normal()).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for x in &mut v {
                        *x /= norm;
                    }
                    v.resize(d, 0.0);
                    v
                })
                .collect()
        })
        .collect();

    let draw = |n: usize, tag: u64| -> Dataset {
        let mut rng = root.fork(tag);
        let balanced: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
        let perm = rng.permutation(n);
        let labels: Vec<usize> = perm.iter().map(|&i| balanced[i]).collect();
        let features = (0..spec.n_modalities())
            .map(|k| {
                let d = spec.dim_per_modality[k];
                let sigma = spec.modality_noise[k];
                let mut data = Vec::with_capacity(n * d);
                for &c in &labels {
                    for &mu in &means[k][c] {
                        data.push(mu + sigma * rng.standard_normal());
                    }
                }
                Matrix::from_vec(n, d, data).expect("shape by construction")
            })
            .collect();
        Dataset {
            samples: Batch { features, labels },
            n_classes: spec.n_classes,
        }
    };

    Ok(SplitDataset {
        spec: spec.clone(),
        train: draw(spec.n_train, STREAM_TRAIN),
        test: draw(spec.n_test, STREAM_TEST),
    })
}

/// Index sets for one shuffled epoch; the final partial batch is dropped.
pub fn epoch_indices(n: usize, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if batch_size > n {
        return Err(Error::Config(format!(
            "batch_size {batch_size} exceeds dataset size {n}"
        )));
    }
    let perm = rng.permutation(n);
    Ok(perm
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn batches(dataset: &Dataset, batch_size: usize, rng: &mut RngStream) -> Result<Vec<Batch>> {
    Ok(epoch_indices(dataset.len(), batch_size, rng)?
        .iter()
        .map(|idx| dataset.select(idx))
        .collect())
}

/// Accuracy of a nearest-class-mean classifier fitted on `train`, using the
/// concatenation of the listed modalities, each scaled by its pooled
/// within-class variance.
pub fn nearest_centroid_accuracy(train: &Dataset, test: &Dataset, modalities: &[usize]) -> Result<f64> {
    let n_mod = train.samples.n_modalities();
    if let Some(&bad) = modalities.iter().find(|&&k| k >= n_mod) {
        return Err(Error::Config(format!("modality index {bad} out of range ({n_mod} modalities)")));
    }
    let c = train.n_classes;
    let width: usize = modalities.iter().map(|&k| train.samples.features[k].cols()).sum();
    let row = |ds: &Dataset, i: usize| -> Vec<f64> {
        modalities
            .iter()
            .flat_map(|&k| ds.samples.features[k].row(i).iter().copied())
            .collect()
    };
    let mut centroids = vec![vec![0.0; width]; c];
    let mut counts = vec![0usize; c];
    for i in 0..train.len() {
        let y = train.samples.labels[i];
        counts[y] += 1;
        for (acc, x) in centroids[y].iter_mut().zip(row(train, i)) {
            *acc += x;
        }
    }
    for (cent, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            for x in cent.iter_mut() {
                *x /= n as f64;
            }
        }
    }
    // per-column inverse of the pooled within-class variance of its modality
    let mut inv_var = Vec::with_capacity(width);
    let mut offset = 0;
    for &k in modalities {
        let d = train.samples.features[k].cols();
        let mut ss = 0.0;
        for i in 0..train.len() {
            let cent = &centroids[train.samples.labels[i]][offset..offset + d];
            ss += train.samples.features[k]
                .row(i)
                .iter()
                .zip(cent)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let var = ss / (train.len() * d) as f64;
        let w = if var > 0.0 { 1.0 / var } else { 1.0 };
        inv_var.extend(std::iter::repeat_n(w, d));
        offset += d;
    }
    let mut correct = 0usize;
    for i in 0..test.len() {
        let x = row(test, i);
        let pred = centroids
            .iter()
            .enumerate()
            .filter(|(y, _)| counts[*y] > 0)
            .map(|(y, cent)| {
                let d: f64 = cent.iter().zip(&x).zip(&inv_var).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
                (y, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(y, _)| y)
            .unwrap_or(0);
        if pred == test.samples.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u32,
    spec: SyntheticSpec,
    n_train: usize,
    n_test: usize,
    dims: Vec<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    PathBuf::from(s)
}

/// Columnar little-endian binary: header, then per split the row count,
/// each modality column by column, then the labels. Spec in `<path>.json`.
pub fn save(data: &SplitDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    let dims = data.train.dims();
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    w.write_all(&(data.train.n_classes as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    for split in [&data.train, &data.test] {
        w.write_all(&(split.len() as u64).to_le_bytes())?;
        for m in &split.samples.features {
            for j in 0..m.cols() {
                for i in 0..m.rows() {
                    w.write_all(&m.get(i, j).to_le_bytes())?;
                }
            }
        }
        for &y in &split.samples.labels {
            w.write_all(&(y as u32).to_le_bytes())?;
        }
    }
    w.flush()?;

    let sidecar = Sidecar {
        format: "mmpareto-dataset".into(),
        version: FORMAT_VERSION,
        spec: data.spec.clone(),
        n_train: data.train.len(),
        n_test: data.test.len(),
        dims,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn load(path: &Path) -> Result<SplitDataset> {
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{} is not a dataset file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n_mod = read_u32(&mut r)? as usize;
    let n_classes = read_u32(&mut r)? as usize;
    let dims: Vec<usize> = (0..n_mod).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<_>>()?;
    if dims != sidecar.dims || n_classes != sidecar.spec.n_classes {
        return Err(Error::Format("binary header disagrees with sidecar".into()));
    }
    let read_split = |r: &mut BufReader<File>| -> Result<Dataset> {
        let n = read_u64(r)? as usize;
        let mut features = Vec::with_capacity(n_mod);
        for &d in &dims {
            let mut m = Matrix::zeros(n, d);
            for j in 0..d {
                for i in 0..n {
                    m.row_mut(i)[j] = read_f64(r)?;
                }
            }
            features.push(m);
        }
        let labels = (0..n)
            .map(|_| read_u32(r).map(|y| y as usize))
            .collect::<Result<Vec<_>>>()?;
        if let Some(y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Format(format!("label {y} out of range")));
        }
        Ok(Dataset {
            samples: Batch { features, labels },
            n_classes,
        })
    };
    let train = read_split(&mut r)?;
    let test = read_split(&mut r)?;
    if train.len() != sidecar.n_train || test.len() != sidecar.n_test {
        return Err(Error::Format("split sizes disagree with sidecar".into()));
    }
    Ok(SplitDataset {
        spec: sidecar.spec,
        train,
        test,
    })
}

/// Load `path` if it exists and matches `spec`, otherwise generate and save it.
/// Cache file for `spec` inside `dir`, named by a hash of the spec.
pub fn cache_file(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf> {
    let json = serde_json::to_vec(spec)?;
    // FNV-1a: stable across platforms and releases
    let hash = json
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    Ok(dir.join(format!("synthetic-{hash:016x}.mmpd")))
}

pub fn load_or_generate(spec: &SyntheticSpec, cache: Option<&Path>) -> Result<SplitDataset> {
    match cache {
        Some(p) if p.exists() => {
            let data = load(p)?;
            if &data.spec != spec {
                return Err(Error::Config(format!(
                    "dataset cache {} was generated from a different spec",
                    p.display()
                )));
            }
            Ok(data)
        }
        Some(p) => {
            let data = generate(spec)?;
            save(&data, p)?;
            Ok(data)
        }
        None => generate(spec),
    }
}
