//! One-hidden-layer tanh MLP with manual backpropagation.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, ParamVector};
use crate::objectives::Objective;

/// d -> h -> k network with tanh hidden units and softmax cross-entropy.
///
/// Parameter layout: W1 (h x d, row-major), b1 (h), W2 (k x h), b2 (k).
/// tanh keeps the loss smooth so finite-difference checks stay tight.
#[derive(Clone, Debug)]
pub struct MlpTask {
    input_dim: usize,
    hidden: usize,
    num_classes: usize,
}

impl MlpTask {
    pub fn new(input_dim: usize, hidden: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || num_classes < 2 {
            return Err(Error::InvalidConfig(
                "MLP needs d >= 1, h >= 1, k >= 2".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden,
            num_classes,
        })
    }

    fn split<'a>(&self, w: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (d, h, k) = (self.input_dim, self.hidden, self.num_classes);
        let w1 = &w[0..h * d];
        let b1 = &w[h * d..h * d + h];
        let w2 = &w[h * d + h..h * d + h + k * h];
        let b2 = &w[h * d + h + k * h..];
        (w1, b1, w2, b2)
    }

    fn hidden_activations(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, h) = (self.input_dim, self.hidden);
        let (w1, b1, _, _) = self.split(w);
        (0..h)
            .map(|i| {
                let z: f64 = w1[i * d..(i + 1) * d]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + b1[i];
                z.tanh()
            })
            .collect()
    }

    fn output_logits(&self, w: &[f64], hidden: &[f64]) -> Vec<f64> {
        let (h, k) = (self.hidden, self.num_classes);
        let (_, _, w2, b2) = self.split(w);
        (0..k)
            .map(|c| {
                w2[c * h..(c + 1) * h]
                    .iter()
                    .zip(hidden)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + b2[c]
            })
            .collect()
    }
}

impl Objective for MlpTask {
    fn param_dim(&self) -> usize {
        let (d, h, k) = (self.input_dim, self.hidden, self.num_classes);
        h * d + h + k * h + k
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
        let (d, h, k) = (self.input_dim, self.hidden, self.num_classes);
        let wv = w.as_slice();
        let (_, _, w2, _) = self.split(wv);

        let mut loss = 0.0;
        let mut grad = vec![0.0; self.param_dim()];
        let w1_off = 0;
        let b1_off = h * d;
        let w2_off = h * d + h;
        let b2_off = h * d + h + k * h;

        for &i in idx {
            let label = data.label(i);
            if label >= k {
                return Err(Error::LabelOutOfRange {
                    label,
                    num_classes: k,
                });
            }
            let x = data.row(i);
            let a = self.hidden_activations(wv, x);
            let mut probs = self.output_logits(wv, &a);
            let logit_y = probs[label];
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - max).exp();
                sum += *p;
            }
            for p in probs.iter_mut() {
                *p /= sum;
            }
            loss += max + sum.ln() - logit_y;

            // delta at output: p - onehot(y)
            let mut delta_hidden = vec![0.0; h];
            for (c, &p) in probs.iter().enumerate() {
                let dc = p - f64::from(c == label);
                for (j, &aj) in a.iter().enumerate() {
                    grad[w2_off + c * h + j] += dc * aj;
                    delta_hidden[j] += dc * w2[c * h + j];
                }
                grad[b2_off + c] += dc;
            }
            // through tanh: (1 - a^2)
            for (j, (&dh, &aj)) in delta_hidden.iter().zip(&a).enumerate() {
                let dz = dh * (1.0 - aj * aj);
                for (jj, &xj) in x.iter().enumerate() {
                    grad[w1_off + j * d + jj] += dz * xj;
                }
                grad[b1_off + j] += dz;
            }
        }
        let inv = 1.0 / idx.len() as f64;
        loss *= inv;
        for g in grad.iter_mut() {
            *g *= inv;
        }
        Ok((loss, ParamVector::new(grad)?))
    }

    fn features(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.param_dim(), w.dim())?;
        check_dims(self.input_dim, x.len())?;
        Ok(self.hidden_activations(w.as_slice(), x))
    }

    fn logits(&self, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.param_dim(), w.dim())?;
        check_dims(self.input_dim, x.len())?;
        let a = self.hidden_activations(w.as_slice(), x);
        Ok(self.output_logits(w.as_slice(), &a))
    }
}
