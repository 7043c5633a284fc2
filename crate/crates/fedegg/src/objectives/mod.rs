//! Task families: analytic losses, gradients, and feature extractors.

mod logreg;
mod mlp;
mod quadratic;

pub use logreg::LogRegTask;
pub use mlp::MlpTask;
pub use quadratic::{spd_from_spectrum, MeanEstimationTask, QuadraticTask};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// A differentiable training task over flat parameters.
///
/// `loss_grad` evaluates the mean loss and gradient over the rows of `data`
/// selected by `idx`; `features` is the penultimate representation used for
/// the similarity threshold (raw input for linear models, hidden
/// activations for the MLP).
pub trait Objective: Send + Sync {
    fn param_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// 0 for non-classification tasks.
    fn num_classes(&self) -> usize;

    fn loss_grad(&self, w: &ParamVector, data: &Dataset, idx: &[usize])
        -> Result<(f64, ParamVector)>;

    fn loss(&self, w: &ParamVector, data: &Dataset, idx: &[usize]) -> Result<f64> {
        self.loss_grad(w, data, idx).map(|(l, _)| l)
    }

    fn features(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>>;

    /// Class scores for prediction; error for non-classification tasks.
    fn logits(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>>;
}

/// Gradient-noise standard deviations realizing the bounded-variance
/// assumptions on client and guiding stochastic gradients.
#[derive(Clone, Copy, Debug)]
pub struct NoiseModel {
    pub sigma_client: f64,
    pub sigma_guide: f64,
}

impl NoiseModel {
    pub fn new(sigma_client: f64, sigma_guide: f64) -> Result<Self> {
        if !(sigma_client >= 0.0 && sigma_client.is_finite())
            || !(sigma_guide >= 0.0 && sigma_guide.is_finite())
        {
            return Err(Error::InvalidConfig(
                "noise std deviations must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            sigma_client,
            sigma_guide,
        })
    }
}

/// Central finite differences: (f(w + h e_i) - f(w - h e_i)) / 2h.
/// Test oracle for every analytic gradient in the crate.
pub fn finite_diff_grad<F: Fn(&ParamVector) -> f64>(
    loss_fn: F,
    w: &ParamVector,
    h: f64,
) -> ParamVector {
    assert!(h > 0.0);
    let mut grad = vec![0.0; w.dim()];
    let mut probe = w.clone();
    for i in 0..w.dim() {
        let orig = probe[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let minus = loss_fn(&probe);
        probe.as_mut_slice()[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    ParamVector::new(grad).expect("finite-difference gradient is finite")
}

/// Relative error between two gradients, scaled by the larger norm.
pub fn grad_relative_error(a: &ParamVector, b: &ParamVector) -> f64 {
    let diff = a.sub(b).expect("same dimension").norm();
    let scale = a.norm().max(b.norm()).max(1e-12);
    diff / scale
}
