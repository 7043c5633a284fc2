//! Synthetic Gaussian-mixture datasets, the desk-scale stand-in for image
//! corpora.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// A class-conditional Gaussian mixture: one isotropic Gaussian per class.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub spread: f64,
}

impl MixtureSpec {
    /// Class means drawn as Gaussian(0, shift^2 I), deterministically from
    /// the stream.
    pub fn random(num_classes: usize, dim: usize, shift: f64, stream: &mut RngStream) -> Self {
        let means = (0..num_classes)
            .map(|_| (0..dim).map(|_| shift * stream.standard_normal()).collect())
            .collect();
        Self {
            means,
            spread: 1.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }
}

/// Samples `n_per_class` points per class; labels are grouped by class in
/// ascending class order.
pub fn sample_mixture(spec: &MixtureSpec, n_per_class: usize, stream: &mut RngStream) -> Result<Dataset> {
    let k = spec.num_classes();
    let d = spec.dim();
    if k < 2 || n_per_class == 0 {
        return Err(Error::InvalidConfig(
            "mixture needs >= 2 classes and >= 1 sample per class".into(),
        ));
    }
    let mut features = Vec::with_capacity(k * n_per_class * d);
    let mut labels = Vec::with_capacity(k * n_per_class);
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..n_per_class {
            for m in mean {
                features.push(m + spec.spread * stream.standard_normal());
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, d, k)
}

/// Draws random class means then samples the mixture.
pub fn gen_gaussian_mixture(
    num_classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    shift: f64,
    stream: &mut RngStream,
) -> Result<Dataset> {
    let mut spec = MixtureSpec::random(num_classes, dim, shift, stream);
    spec.spread = spread;
    sample_mixture(&spec, n_per_class, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::derive_stream;

    #[test]
    fn counts_per_class() {
        let mut s = derive_stream(1, "data", 0, 0);
        let ds = gen_gaussian_mixture(2, 3, 50, 1.0, 2.0, &mut s).unwrap();
        assert_eq!(ds.len(), 100);
        let zeros = ds.labels().iter().filter(|&&l| l == 0).count();
        assert_eq!(zeros, 50);
    }

    #[test]
    fn deterministic_given_stream() {
        let mut a = derive_stream(9, "data", 0, 0);
        let mut b = derive_stream(9, "data", 0, 0);
        let da = gen_gaussian_mixture(3, 4, 10, 0.5, 2.0, &mut a).unwrap();
        let db = gen_gaussian_mixture(3, 4, 10, 0.5, 2.0, &mut b).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn zero_spread_collapses_to_means() {
        let mut s = derive_stream(3, "data", 0, 0);
        let ds = gen_gaussian_mixture(2, 2, 5, 0.0, 1.0, &mut s).unwrap();
        for i in 1..5 {
            assert_eq!(ds.row(i), ds.row(0));
        }
    }
}
