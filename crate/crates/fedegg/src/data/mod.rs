//! Datasets, synthetic generation, partitioning, guiding-set construction,
//! and the binary loaders.

mod guiding;
mod loaders;
mod partition;
mod synth;

pub use guiding::{build_guiding_set, select_similar_classes, GuideSource, GuidingSetSpec};
pub use loaders::{load_cifar10_bin, load_feature_file, write_feature_file};
pub use partition::{dirichlet_partition, iid_partition, mean_max_class_share, Partition};
pub use synth::{gen_gaussian_mixture, sample_mixture, MixtureSpec};

use crate::error::{Error, Result};

/// An in-memory labeled dataset: n rows of d features plus integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n: usize,
    d: usize,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, d: usize, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyInput("dataset with zero rows".into()));
        }
        if d == 0 || features.len() != labels.len() * d {
            return Err(Error::BadFormat(format!(
                "feature buffer length {} inconsistent with {} rows of dim {}",
                features.len(),
                labels.len(),
                d
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadFormat("non-finite feature value".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        let n = labels.len();
        Ok(Self {
            features,
            labels,
            n,
            d,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.label(i));
        }
        Self::new(features, labels, self.d, self.num_classes)
    }

    /// Per-class arithmetic mean of the raw feature rows.
    /// Classes with no samples come back as `None`.
    pub fn class_means(&self) -> Vec<Option<Vec<f64>>> {
        let mut sums = vec![vec![0.0; self.d]; self.num_classes];
        let mut counts = vec![0usize; self.num_classes];
        for i in 0..self.n {
            let c = self.labels[i];
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(self.row(i)) {
                *s += x;
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(mut s, c)| {
                if c == 0 {
                    None
                } else {
                    for v in s.iter_mut() {
                        *v /= c as f64;
                    }
                    Some(s)
                }
            })
            .collect()
    }
}
