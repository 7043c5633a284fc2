//! Strongly convex quadratic tasks with closed-form optima and exact
//! smoothness/convexity constants.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, ParamVector, RngStream};
use crate::objectives::Objective;

const SYMMETRY_TOL: f64 = 1e-12;
const POWER_ITER_TOL: f64 = 1e-12;
const POWER_ITER_MAX: usize = 100_000;

/// loss(w) = 0.5 w'Aw - b'w + c with A symmetric positive-definite.
///
/// Exposes L = lambda_max(A) and mu = lambda_min(A), the constants the
/// convergence bound needs.
#[derive(Clone, Debug)]
pub struct QuadraticTask {
    a: Vec<f64>, // row-major d x d
    b: Vec<f64>,
    c: f64,
    d: usize,
    chol: Vec<f64>, // lower-triangular Cholesky factor
    mu: f64,
    lsmooth: f64,
}

impl QuadraticTask {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        let d = b.len();
        if a.len() != d * d || d == 0 {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: a.len(),
            });
        }
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..d {
            for j in (i + 1)..d {
                if (a[i * d + j] - a[j * d + i]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        let chol = cholesky(&a, d)?;
        let lsmooth = power_iter_lambda_max(&a, d);
        // lambda_min(A) = s - lambda_max(sI - A) for s above the spectrum
        let s = lsmooth * (1.0 + 1e-9) + 1.0;
        let mut shifted = a.iter().map(|v| -v).collect::<Vec<f64>>();
        for i in 0..d {
            shifted[i * d + i] += s;
        }
        let mu = s - power_iter_lambda_max(&shifted, d);
        Ok(Self {
            a,
            b,
            c,
            d,
            chol,
            mu,
            lsmooth,
        })
    }

    /// Scalar task 0.5 a w^2 - b w + c.
    pub fn scalar(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(vec![a], vec![b], c)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lsmooth(&self) -> f64 {
        self.lsmooth
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn linear(&self) -> &[f64] {
        &self.b
    }

    pub fn offset(&self) -> f64 {
        self.c
    }

    /// Deterministic loss and gradient: 0.5 w'Aw - b'w + c, Aw - b.
    pub fn loss_grad_at(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        check_dims(self.d, w.dim())?;
        let aw = matvec(&self.a, w.as_slice(), self.d);
        let waw: f64 = w.as_slice().iter().zip(&aw).map(|(x, y)| x * y).sum();
        let bw: f64 = w.as_slice().iter().zip(&self.b).map(|(x, y)| x * y).sum();
        let loss = 0.5 * waw - bw + self.c;
        let grad: Vec<f64> = aw.iter().zip(&self.b).map(|(x, y)| x - y).collect();
        Ok((loss, ParamVector::new(grad)?))
    }

    /// Gradient with additive Gaussian(0, sigma^2 I) noise, realizing the
    /// bounded-variance stochastic-gradient model.
    pub fn noisy_grad(&self, w: &ParamVector, sigma: f64, stream: &mut RngStream) -> Result<ParamVector> {
        let (_, mut grad) = self.loss_grad_at(w)?;
        if sigma > 0.0 {
            for g in grad.as_mut_slice() {
                *g += sigma * stream.standard_normal();
            }
        }
        Ok(grad)
    }

    /// Closed-form optimum: w* solves Aw = b, f* = c - 0.5 b'w*.
    pub fn optimum(&self) -> Result<(ParamVector, f64)> {
        let w_star = chol_solve(&self.chol, &self.b, self.d);
        let f_star = self.c
            - 0.5
                * self
                    .b
                    .iter()
                    .zip(&w_star)
                    .map(|(x, y)| x * y)
                    .sum::<f64>();
        Ok((ParamVector::new(w_star)?, f_star))
    }
}

impl Objective for QuadraticTask {
    fn param_dim(&self) -> usize {
        self.d
    }
    fn input_dim(&self) -> usize {
        self.d
    }
    fn num_classes(&self) -> usize {
        0
    }
    fn loss_grad(&self, w: &ParamVector, _data: &Dataset, _idx: &[usize])
        -> Result<(f64, ParamVector)> {
        self.loss_grad_at(w)
    }
    fn features(&self, _w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        // Parameter-independent by decision: the raw input.
        Ok(x.to_vec())
    }
    fn logits(&self, _w: &ParamVector, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Domain("quadratic task has no class scores".into()))
    }
}

/// Data-driven quadratic: loss = mean over the batch of 0.5 ||w - x||^2.
///
/// Each client's optimum is its own data mean, so heterogeneity flows in
/// through the partition while mu = L = 1 stay exact. Used to wire
/// quadratic theory instances through the round engine.
#[derive(Clone, Debug)]
pub struct MeanEstimationTask {
    d: usize,
}

impl MeanEstimationTask {
    pub fn new(d: usize) -> Self {
        Self { d }
    }
}

impl Objective for MeanEstimationTask {
    fn param_dim(&self) -> usize {
        self.d
    }
    fn input_dim(&self) -> usize {
        self.d
    }
    fn num_classes(&self) -> usize {
        0
    }
    fn loss_grad(&self, w: &ParamVector, data: &Dataset, idx: &[usize])
        -> Result<(f64, ParamVector)> {
        check_dims(self.d, w.dim())?;
        check_dims(self.d, data.dim())?;
        if idx.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let mut loss = 0.0;
        let mut mean = vec![0.0; self.d];
        for &i in idx {
            let x = data.row(i);
            for (j, &xj) in x.iter().enumerate() {
                let diff = w[j] - xj;
                loss += 0.5 * diff * diff;
                mean[j] += xj;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        loss *= inv;
        let grad: Vec<f64> = (0..self.d).map(|j| w[j] - mean[j] * inv).collect();
        Ok((loss, ParamVector::new(grad)?))
    }
    fn features(&self, _w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
    fn logits(&self, _w: &ParamVector, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::Domain("mean-estimation task has no class scores".into()))
    }
}

fn matvec(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    // Ly = b
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * y[k];
        }
        y[i] = sum / l[i * d + i];
    }
    // L'x = y
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * x[k];
        }
        x[i] = sum / l[i * d + i];
    }
    x
}

/// Dominant eigenvalue of a symmetric PSD matrix by power iteration with a
/// deterministic start vector.
fn power_iter_lambda_max(a: &[f64], d: usize) -> f64 {
    if d == 1 {
        return a[0];
    }
    // Deterministic, non-degenerate start.
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 1e-3 * (i as f64 + 1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let av = matvec(a, &v, d);
        let new_lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
        let norm = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = av.into_iter().map(|x| x / norm).collect();
        if (new_lambda - lambda).abs() <= POWER_ITER_TOL * new_lambda.abs().max(1.0) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

/// Builds a symmetric matrix Q diag(eigs) Q' with a random orthogonal Q
/// drawn deterministically from the stream (Gram-Schmidt on a Gaussian
/// matrix). The spectrum is exact by construction.
pub fn spd_from_spectrum(eigenvalues: &[f64], stream: &mut RngStream) -> Vec<f64> {
    let d = eigenvalues.len();
    if d == 1 {
        return vec![eigenvalues[0]];
    }
    // Random orthogonal basis.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
        for u in &q {
            let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // numerically dependent draw, retry
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    // A = sum_k eig_k q_k q_k'
    let mut a = vec![0.0; d * d];
    for (lam, qk) in eigenvalues.iter().zip(&q) {
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] += lam * qk[i] * qk[j];
            }
        }
    }
    // Exact symmetry for downstream validation.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (a[i * d + j] + a[j * d + i]);
            a[i * d + j] = avg;
            a[j * d + i] = avg;
        }
    }
    a
}
