//! Dense vector primitives, a small row-major matrix, and seeded random streams.
//!
//! Everything in the crate funnels through these types so that the inner
//! products used by the Pareto solver and the random draws used by the
//! trainer are reproducible bit for bit.

use std::ops::{Deref, DerefMut};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Flat vector of 64-bit reals, used for gradients and parameter groups.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RealVec(Vec<f64>);

impl RealVec {
    pub fn new(data: Vec<f64>) -> Self {
        Self(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self(data.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &RealVec) -> Result<f64> {
        dot(self, other)
    }

    pub fn l2_norm(&self) -> Result<f64> {
        l2_norm(self)
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &RealVec) -> Result<RealVec> {
        check_len(self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &RealVec) -> Result<RealVec> {
        check_len(self.len(), other.len())?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, factor: f64) -> RealVec {
        self.iter().map(|a| a * factor).collect()
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &RealVec) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.0.iter_mut().zip(other.iter()) {
            *a += factor * b;
        }
        Ok(())
    }

    /// `wa * a + wb * b`
    pub fn combine(wa: f64, a: &RealVec, wb: f64, b: &RealVec) -> Result<RealVec> {
        check_len(a.len(), b.len())?;
        Ok(a.iter().zip(b.iter()).map(|(x, y)| wa * x + wb * y).collect())
    }

    pub fn concat(parts: &[&[f64]]) -> RealVec {
        RealVec(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }
}

impl Deref for RealVec {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for RealVec {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for RealVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for RealVec {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<f64> for RealVec {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Empty);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn l2_norm(a: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty);
    }
    Ok(a.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// Cosine of the angle between `a` and `b`; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = dot(a, b)?;
    let na = l2_norm(a)?;
    let nb = l2_norm(b)?;
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Deterministic random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto the cipher's stream
/// counter, so distinct ids never overlap and results do not depend on
/// the platform or on which thread draws from which stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for a named sub-task. Independent of how much of the
    /// parent has already been consumed.
    pub fn fork(&self, tag: u64) -> RngStream {
        RngStream::new(self.seed, splitmix(self.stream_id ^ splitmix(tag)))
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            idx.swap(i, j);
        }
        idx
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw `mean + sqrt(diag_cov) * z` with `z` standard normal.
pub fn gaussian_sample(rng: &mut RngStream, mean: &[f64], diag_cov: &[f64]) -> Result<RealVec> {
    check_len(mean.len(), diag_cov.len())?;
    if let Some(bad) = diag_cov.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(Error::Domain(format!(
            "covariance entries must be finite and non-negative, got {bad}"
        )));
    }
    Ok(mean
        .iter()
        .zip(diag_cov)
        .map(|(m, c)| {
            let z = rng.standard_normal();
            if *c == 0.0 {
                *m
            } else {
                m + c.sqrt() * z
            }
        })
        .collect())
}
