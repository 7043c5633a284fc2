//! Guiding-set construction: the deterministic embedding-similarity
//! surrogate for LLM-driven class selection.

use crate::data::{sample_mixture, Dataset, MixtureSpec};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, ParamVector, RngStream};

/// Where guiding samples come from.
#[derive(Clone, Debug)]
pub enum GuideSource {
    /// Sample Gaussians: shared classes reuse the clients' empirical
    /// class-conditional means, the rest get fresh means of scale `shift`.
    Synthetic { spread: f64, shift: f64 },
    /// Pick whole classes out of a precomputed embedding dataset.
    Features(Dataset),
}

/// Overlap level and size of the guiding set.
///
/// `overlap` is the fraction of guiding classes that share the clients'
/// class-conditional distributions: LH = 1.0, MH = 0.5, HH = 0.0.
#[derive(Clone, Debug)]
pub struct GuidingSetSpec {
    pub overlap: f64,
    pub per_class: usize,
    pub source: GuideSource,
}

impl GuidingSetSpec {
    pub fn overlap_for_mode(mode: &str) -> Result<f64> {
        match mode.to_ascii_uppercase().as_str() {
            "LH" => Ok(1.0),
            "MH" => Ok(0.5),
            "HH" => Ok(0.0),
            other => Err(Error::InvalidConfig(format!(
                "unknown heterogeneity mode '{other}', want LH|MH|HH"
            ))),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidConfig(format!(
                "overlap {} outside [0, 1]",
                self.overlap
            )));
        }
        if self.per_class == 0 {
            return Err(Error::InvalidConfig("guiding per_class must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ranks candidate classes by maximum cosine similarity to any client class
/// mean; ties break by ascending class id. Returns the `top_k` ids in rank
/// order.
pub fn select_similar_classes(
    client_class_means: &[ParamVector],
    candidate_class_means: &[ParamVector],
    top_k: usize,
) -> Result<Vec<usize>> {
    if top_k > candidate_class_means.len() {
        return Err(Error::InvalidConfig(format!(
            "top_k {} exceeds {} candidates",
            top_k,
            candidate_class_means.len()
        )));
    }
    if client_class_means.is_empty() {
        return Err(Error::EmptyInput("no client class means".into()));
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(candidate_class_means.len());
    for (id, cand) in candidate_class_means.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for client in client_class_means {
            let sim = cosine_similarity(client, cand)?;
            if sim > best {
                best = sim;
            }
        }
        scored.push((best, id));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(top_k).map(|(_, id)| id).collect())
}

fn required_class_means(data: &Dataset) -> Result<Vec<Vec<f64>>> {
    data.class_means()
        .into_iter()
        .enumerate()
        .map(|(c, m)| {
            m.ok_or_else(|| Error::DegenerateInput(format!("no samples for class {c}")))
        })
        .collect()
}

/// Builds a guiding dataset with the requested class overlap against the
/// client data. Shared classes keep the clients' class-conditional
/// distributions (the lowest class ids, deterministically); the remainder
/// come from shifted distributions or from the least-similar candidate
/// classes.
pub fn build_guiding_set(
    spec: &GuidingSetSpec,
    client_data: &Dataset,
    stream: &mut RngStream,
) -> Result<Dataset> {
    spec.validate()?;
    let k = client_data.num_classes();
    let shared = (spec.overlap * k as f64).round() as usize;
    match &spec.source {
        GuideSource::Synthetic { spread, shift } => {
            let client_means = required_class_means(client_data)?;
            let mut means = Vec::with_capacity(k);
            for (c, mean) in client_means.into_iter().enumerate() {
                if c < shared {
                    means.push(mean);
                } else {
                    means.push(
                        (0..client_data.dim())
                            .map(|_| shift * stream.standard_normal())
                            .collect(),
                    );
                }
            }
            let mix = MixtureSpec {
                means,
                spread: *spread,
            };
            sample_mixture(&mix, spec.per_class, stream)
        }
        GuideSource::Features(candidates) => {
            if candidates.dim() != client_data.dim() {
                return Err(Error::DimensionMismatch {
                    expected: client_data.dim(),
                    got: candidates.dim(),
                });
            }
            let client_means: Vec<ParamVector> = required_class_means(client_data)?
                .into_iter()
                .map(ParamVector::new)
                .collect::<Result<_>>()?;
            let cand_means: Vec<ParamVector> = required_class_means(candidates)?
                .into_iter()
                .map(ParamVector::new)
                .collect::<Result<_>>()?;
            if k > cand_means.len() {
                return Err(Error::InvalidConfig(format!(
                    "need {k} guiding classes but only {} candidates",
                    cand_means.len()
                )));
            }
            let ranking = select_similar_classes(&client_means, &cand_means, cand_means.len())?;
            // Most-similar candidates fill the shared slots, least-similar
            // fill the rest.
            let mut chosen: Vec<usize> = ranking[..shared].to_vec();
            chosen.extend(ranking[ranking.len() - (k - shared)..].iter().rev());

            let mut features = Vec::with_capacity(k * spec.per_class * candidates.dim());
            let mut labels = Vec::with_capacity(k * spec.per_class);
            for (slot, &cand_class) in chosen.iter().enumerate() {
                let rows: Vec<usize> = (0..candidates.len())
                    .filter(|&i| candidates.label(i) == cand_class)
                    .take(spec.per_class)
                    .collect();
                if rows.len() < spec.per_class {
                    return Err(Error::InvalidConfig(format!(
                        "candidate class {cand_class} has {} samples, need {}",
                        rows.len(),
                        spec.per_class
                    )));
                }
                for i in rows {
                    features.extend_from_slice(candidates.row(i));
                    labels.push(slot);
                }
            }
            Dataset::new(features, labels, candidates.dim(), k)
        }
    }
}
