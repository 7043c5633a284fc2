//! Deterministic linear-algebra and randomness substrate.
//!
//! Everything downstream (objectives, partitioning, the round engine, the
//! theory harness) draws its vectors and its randomness from here. Two
//! contracts matter: all reductions run in a fixed index order so parallel
//! client execution cannot change results, and every random draw comes from
//! a stream derived from `(master_seed, purpose, t, k)` so a run replays
//! bit-for-bit.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Flat vector of 64-bit model parameters.
///
/// Entries are finite by construction; dimension is fixed for the lifetime
/// of a value.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(
                "non-finite entry in parameter vector".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &Self) -> Result<()> {
        check_dims(self.dim(), other.dim())?;
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += c * b;
        }
        debug_assert!(self.0.iter().all(|v| v.is_finite()));
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| c * v).collect())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn dist_sq(&self, other: &Self) -> Result<f64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Cosine similarity, clamped to [-1, 1] against rounding.
///
/// Zero-norm inputs are rejected rather than silently mapped to 0 because
/// the value feeds a logarithm downstream.
pub fn cosine_similarity(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity of zero-norm vector".into(),
        ));
    }
    let cos = a.dot(b)? / (na * nb);
    Ok(cos.clamp(-1.0, 1.0))
}

/// Elementwise arithmetic mean, summed in ascending list-index order.
pub fn mean_vector(vs: &[ParamVector]) -> Result<ParamVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::EmptyInput("mean of zero vectors".into()))?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vs {
        check_dims(dim, v.dim())?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    ParamVector::new(acc)
}

/// A deterministic random stream addressed by `(master_seed, purpose, t, k)`.
///
/// Distinct paths yield independent streams; identical paths replay the
/// identical sample sequence. Workers never share a stream, each derives
/// its own.
pub struct RngStream {
    rng: ChaCha12Rng,
}

/// Derives an independent stream for the given path.
pub fn derive_stream(master_seed: u64, purpose: &str, t: u64, k: u64) -> RngStream {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update((purpose.len() as u64).to_le_bytes());
    hasher.update(purpose.as_bytes());
    hasher.update(t.to_le_bytes());
    hasher.update(k.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    RngStream {
        rng: ChaCha12Rng::from_seed(seed),
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

impl RngStream {
    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53-bit mantissa construction, bit-stable across platforms.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box-Muller on the stream's own uniforms.
    pub fn standard_normal(&mut self) -> f64 {
        loop {
            let u1 = self.uniform();
            if u1 > 0.0 {
                let u2 = self.uniform();
                return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            }
        }
    }

    /// Uniform integer in [0, bound).
    pub fn index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        // Rejection sampling to avoid modulo bias.
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `m` distinct indices from [0, n), returned in ascending order.
    pub fn sample_without_replacement(&mut self, n: usize, m: usize) -> Vec<usize> {
        debug_assert!(m <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        // Partial Fisher-Yates: first m slots.
        for i in 0..m {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        let mut picked: Vec<usize> = pool[..m].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        assert_eq!(
            cosine_similarity(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn cosine_collinear_is_one() {
        let c = cosine_similarity(&pv(&[1.0, 2.0]), &pv(&[2.0, 4.0])).unwrap();
        assert!((c - 1.0).abs() < 1e-14, "{c}");
    }

    #[test]
    fn cosine_hand_value() {
        // <(3,4),(4,3)> / (5*5) = 24/25
        let c = cosine_similarity(&pv(&[3.0, 4.0]), &pv(&[4.0, 3.0])).unwrap();
        assert!((c - 0.96).abs() < 1e-15);
    }

    #[test]
    fn cosine_zero_norm_errors() {
        assert!(cosine_similarity(&pv(&[0.0, 0.0]), &pv(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn cosine_self_similarity() {
        for vals in [&[0.3, -2.0, 5.5][..], &[1e-8, 7.0, 0.0], &[-4.0]] {
            let v = pv(vals);
            assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_scale_invariance() {
        let a = pv(&[0.2, -1.0, 3.0]);
        let b = pv(&[1.5, 0.7, -0.1]);
        let base = cosine_similarity(&a, &b).unwrap();
        for c in [0.001, 2.0, 1e6] {
            let scaled = cosine_similarity(&a.scaled(c), &b).unwrap();
            assert!((scaled - base).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_vector_examples() {
        let m = mean_vector(&[pv(&[1.0, 3.0]), pv(&[3.0, 1.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 2.0]);
        let single = mean_vector(&[pv(&[5.0])]).unwrap();
        assert_eq!(single.as_slice(), &[5.0]);
        let m3 = mean_vector(&[pv(&[1.0, 1.0]), pv(&[1.0, 1.0]), pv(&[4.0, 4.0])]).unwrap();
        assert_eq!(m3.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn mean_vector_rejects_bad_input() {
        assert!(mean_vector(&[]).is_err());
        assert!(mean_vector(&[pv(&[1.0]), pv(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn derived_stream_replays() {
        let mut a = derive_stream(42, "client", 3, 1);
        let mut b = derive_stream(42, "client", 3, 1);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn distinct_paths_differ() {
        // First draw differs with overwhelming probability over 10^4 pairs.
        let mut collisions = 0;
        for k in 0..10_000u64 {
            let mut a = derive_stream(7, "client", 3, 2 * k);
            let mut b = derive_stream(7, "client", 3, 2 * k + 1);
            if a.next_u64() == b.next_u64() {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }

    #[test]
    fn purpose_tags_decorrelate_streams() {
        // Correlation of uniforms across the two purposes should be ~0.
        let n = 10_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for t in 0..n as u64 {
            xs.push(derive_stream(11, "guide", t, 0).uniform());
            ys.push(derive_stream(11, "client", t, 0).uniform());
        }
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>()
            / n as f64;
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n as f64;
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n as f64;
        let corr = cov / (vx.sqrt() * vy.sqrt());
        assert!(corr.abs() < 0.05, "correlation {corr}");
    }

    #[test]
    fn sample_without_replacement_is_distinct_and_sorted() {
        let mut s = derive_stream(1, "select", 0, 0);
        let picked = s.sample_without_replacement(100, 20);
        assert_eq!(picked.len(), 20);
        for w in picked.windows(2) {
            assert!(w[0] < w[1]);
        }
    }
}
