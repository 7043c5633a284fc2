//! Client index partitions: Dirichlet non-IID and IID splits.

use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Disjoint per-client index lists into a dataset, plus aggregation weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub client_indices: Vec<Vec<usize>>,
    /// Defaults to |D_k| / |D|.
    pub weights: Vec<f64>,
}

impl Partition {
    fn from_indices(mut client_indices: Vec<Vec<usize>>, total: usize) -> Self {
        for list in client_indices.iter_mut() {
            list.sort_unstable();
        }
        let weights = client_indices
            .iter()
            .map(|l| l.len() as f64 / total as f64)
            .collect();
        Partition {
            client_indices,
            weights,
        }
    }

    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }
}

/// Dirichlet proportions over `n` clients via normalized Gamma(alpha, 1)
/// draws. A degenerate all-zero draw (possible for tiny alpha in floating
/// point) falls back to a single uniformly chosen client.
fn dirichlet_proportions(alpha: f64, n: usize, stream: &mut RngStream) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0 checked by caller");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(stream)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter().map(|g| g / sum).collect()
    } else {
        let winner = stream.index(n);
        (0..n).map(|i| if i == winner { 1.0 } else { 0.0 }).collect()
    }
}

/// Largest-remainder rounding of `total * proportions` into integer counts
/// summing exactly to `total`. Ties on remainder break by lower index.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let exact = p * total as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((exact - floor as f64, i));
    }
    let mut leftover = total - assigned.min(total);
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

/// Per-class Dirichlet partitioning: for each class, draw client proportions
/// from Dir(alpha * 1_N) and assign that class's indices by largest-remainder
/// rounding. Every client is guaranteed at least one sample by transferring
/// single samples from the largest client.
pub fn dirichlet_partition(
    labels: &[usize],
    num_clients: usize,
    alpha: f64,
    stream: &mut RngStream,
) -> Result<Partition> {
    if num_clients == 0 || alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidConfig(
            "dirichlet_partition needs clients >= 1 and alpha > 0".into(),
        ));
    }
    if num_clients > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} clients exceed {} samples",
            num_clients,
            labels.len()
        )));
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut client_indices: Vec<Vec<usize>> = vec![Vec::new(); num_clients];
    for class_idx in by_class.into_iter() {
        if class_idx.is_empty() {
            continue;
        }
        let q = dirichlet_proportions(alpha, num_clients, stream);
        let counts = largest_remainder(&q, class_idx.len());
        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            client_indices[client].extend_from_slice(&class_idx[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Empty clients break local updates; move single samples from the
    // largest client until everyone has one.
    loop {
        let Some(empty) = client_indices.iter().position(|l| l.is_empty()) else {
            break;
        };
        let largest = client_indices
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let moved = client_indices[largest].pop().unwrap();
        client_indices[empty].push(moved);
    }

    Ok(Partition::from_indices(client_indices, labels.len()))
}

/// Uniform shuffle split into near-equal chunks (sizes differ by at most 1).
pub fn iid_partition(
    labels: &[usize],
    num_clients: usize,
    stream: &mut RngStream,
) -> Result<Partition> {
    if num_clients == 0 || num_clients > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "iid_partition needs 1 <= clients <= {}",
            labels.len()
        )));
    }
    let n = labels.len();
    let mut perm: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut perm);
    let base = n / num_clients;
    let extra = n % num_clients;
    let mut client_indices = Vec::with_capacity(num_clients);
    let mut cursor = 0;
    for k in 0..num_clients {
        let size = base + usize::from(k < extra);
        client_indices.push(perm[cursor..cursor + size].to_vec());
        cursor += size;
    }
    Ok(Partition::from_indices(client_indices, n))
}

/// Mean over clients of each client's maximum class share. The statistic
/// behind the concentration checks: ~1/k for IID data, ~1 for one-class
/// clients.
pub fn mean_max_class_share(labels: &[usize], partition: &Partition) -> f64 {
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut total = 0.0;
    for list in &partition.client_indices {
        let mut counts = vec![0usize; num_classes];
        for &i in list {
            counts[labels[i]] += 1;
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        total += max as f64 / list.len() as f64;
    }
    total / partition.num_clients() as f64
}
