//! Multiclass logistic regression on raw inputs.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, ParamVector};
use crate::objectives::Objective;

/// Softmax cross-entropy with a k x d weight matrix, no bias; parameters
/// are laid out row-major by class.
#[derive(Clone, Debug)]
pub struct LogRegTask {
    num_classes: usize,
    input_dim: usize,
}

impl LogRegTask {
    pub fn new(num_classes: usize, input_dim: usize) -> Result<Self> {
        if num_classes < 2 || input_dim == 0 {
            return Err(Error::InvalidConfig(
                "logistic regression needs k >= 2 and d >= 1".into(),
            ));
        }
        Ok(Self {
            num_classes,
            input_dim,
        })
    }
}

/// Stable log-sum-exp and softmax in place.
fn softmax(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    max + sum.ln()
}

impl Objective for LogRegTask {
    fn param_dim(&self) -> usize {
        self.num_classes * self.input_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn loss_grad(&self, w: &ParamVector, data: &Dataset, idx: &[usize])
        -> Result<(f64, ParamVector)> {
        check_dims(self.param_dim(), w.dim())?;
        check_dims(self.input_dim, data.dim())?;
        if idx.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let k = self.num_classes;
        let d = self.input_dim;
        let wv = w.as_slice();
        let mut loss = 0.0;
        let mut grad = vec![0.0; k * d];
        let mut probs = vec![0.0; k];
        for &i in idx {
            let label = data.label(i);
            if label >= k {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: k,
                });
            }
            let x = data.row(i);
            for (c, p) in probs.iter_mut().enumerate() {
                *p = wv[c * d..(c + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum();
            }
            let logit_y = probs[label];
            let lse = softmax(&mut probs);
            loss += lse - logit_y;
            for (c, &p) in probs.iter().enumerate() {
                let coeff = p - f64::from(c == label);
                for (g, &xj) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += coeff * xj;
                }
            }
        }
        let inv = 1.0 / idx.len() as f64;
        loss *= inv;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok((loss, ParamVector::new(grad)?))
    }

    fn features(&self, _w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        // Penultimate representation of a linear model is the input itself.
        Ok(x.to_vec())
    }

    fn logits(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.param_dim(), w.dim())?;
        check_dims(self.input_dim, x.len())?;
        let d = self.input_dim;
        let wv = w.as_slice();
        Ok((0..self.num_classes)
            .map(|c| {
                wv[c * d..(c + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_stream;
    use crate::objectives::{finite_diff_grad, grad_relative_error};

    fn small_batch() -> Dataset {
        Dataset::new(
            vec![1.0, 2.0, -0.5, 0.3, 0.0, 1.0],
            vec![0, 1, 2],
            2,
            10,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let task = LogRegTask::new(10, 2).unwrap();
        let w = ParamVector::zeros(task.param_dim());
        let data = small_batch();
        let (loss, _) = task.loss_grad(&w, &data, &[0, 1, 2]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn binary_worked_example() {
        // k=2, d=1, x=2, y=1, w=(0.3, -0.2): logits (0.6, -0.4),
        // p1 = sigmoid(-1), loss = softplus(1), grad = (sigmoid(1)*2, -sigmoid(1)*2)
        let task = LogRegTask::new(2, 1).unwrap();
        let data = Dataset::new(vec![2.0], vec![1], 1, 2).unwrap();
        let w = ParamVector::new(vec![0.3, -0.2]).unwrap();
        let (loss, grad) = task.loss_grad(&w, &data, &[0]).unwrap();
        let sig1 = 1.0 / (1.0 + (-1.0f64).exp());
        let expected_loss = (1.0 + 1.0f64.exp()).ln();
        assert!((loss - expected_loss).abs() < 1e-12);
        assert!((grad[0] - 2.0 * sig1).abs() < 1e-12);
        assert!((grad[1] + 2.0 * sig1).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let task = LogRegTask::new(10, 2).unwrap();
        let data = small_batch();
        let idx = [0usize, 1, 2];
        let mut stream = derive_stream(3, "fd", 0, 0);
        for _ in 0..20 {
            let w = ParamVector::new(
                (0..task.param_dim())
                    .map(|_| stream.standard_normal())
                    .collect(),
            )
            .unwrap();
            let (_, grad) = task.loss_grad(&w, &data, &idx).unwrap();
            let fd = finite_diff_grad(
                |v| task.loss(v, &data, &idx).unwrap(),
                &w,
                1e-5,
            );
            assert!(grad_relative_error(&grad, &fd) < 1e-5);
        }
    }

    #[test]
    fn label_out_of_range_rejected() {
        let task = LogRegTask::new(2, 2).unwrap();
        // dataset claims 10 classes, so label 5 is valid there but not for k=2
        let data = Dataset::new(vec![1.0, 0.0], vec![5], 2, 10).unwrap();
        let w = ParamVector::zeros(4);
        assert!(task.loss_grad(&w, &data, &[0]).is_err());
    }

    #[test]
    fn loss_nonnegative_and_gd_monotone() {
        let mut stream = derive_stream(5, "gd", 0, 0);
        let data = crate::data::gen_gaussian_mixture(3, 4, 30, 0.5, 2.0, &mut stream).unwrap();
        let task = LogRegTask::new(3, 4).unwrap();
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut w = ParamVector::zeros(task.param_dim());
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let (loss, grad) = task.loss_grad(&w, &data, &idx).unwrap();
            assert!(loss >= 0.0);
            assert!(loss <= prev + 1e-12, "loss rose: {prev} -> {loss}");
            prev = loss;
            w.axpy(-0.05, &grad).unwrap();
        }
        assert!(prev < 3f64.ln());
    }
}
