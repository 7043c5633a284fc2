//! The guiding mechanism: similarity threshold, log-loss-ratio gate,
//! guiding-task updates, and momentum loss tracking.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, mean_vector, ParamVector, RngStream};
use crate::objectives::Objective;
use crate::schedule::Schedule;

/// Floor applied to client/guide losses before the log ratio; converged
/// synthetic tasks can reach exactly zero.
pub const LOSS_FLOOR: f64 = 1e-12;

/// Hyper-parameters of the guiding mechanism.
#[derive(Clone, Debug)]
pub struct GuidanceConfig {
    /// Threshold temperature.
    pub rho: f64,
    /// Threshold offset.
    pub iota: f64,
    /// One base for both the similarity log and the loss-ratio log.
    pub log_base: f64,
    /// Momentum on the client loss.
    pub beta: f64,
    /// Guiding steps per gated round.
    pub guide_steps: usize,
    /// Guiding-task learning rate by round.
    pub gamma: Schedule,
    /// Clamp on the cosine before the logarithm; the similarity is
    /// undefined at cos <= 0 and a finite floor preserves ordering.
    pub cos_floor: f64,
    /// Guiding minibatch size (0 = full batch).
    pub guide_batch: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            rho: 2.0,
            iota: -0.5,
            log_base: 2.0,
            beta: 0.9,
            guide_steps: 1,
            gamma: Schedule::default_eta(),
            cos_floor: 1e-6,
            guide_batch: 64,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.log_base <= 1.0 || !self.log_base.is_finite() {
            return Err(Error::InvalidConfig("log_base must be > 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        if self.cos_floor <= 0.0 {
            return Err(Error::InvalidConfig("cos_floor must be positive".into()));
        }
        if self.guide_steps == 0 {
            return Err(Error::InvalidConfig("guide_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mutable gate state owned by the server loop.
#[derive(Clone, Debug)]
pub struct GuidanceState {
    pub tau: f64,
    /// Momentum client loss; None until the first round's update.
    pub loss_c: Option<f64>,
    /// Guiding loss, refreshed on the full guiding set after gated rounds.
    pub loss_g: f64,
    pub guide_data: Dataset,
    pub steps_taken_total: u64,
}

/// Mean feature of a dataset under the initial model.
pub fn client_mean_feature(
    task: &dyn Objective,
    w0: &ParamVector,
    data: &Dataset,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::EmptyInput("feature mean of empty dataset".into()));
    }
    let feats: Vec<ParamVector> = (0..data.len())
        .map(|i| task.features(w0, data.row(i)).and_then(ParamVector::new))
        .collect::<Result<_>>()?;
    mean_vector(&feats)
}

/// Per-client similarity term: log of the (floored) cosine between the
/// client's mean feature and the guiding data's mean feature.
pub fn tau_k(
    client_feat: &ParamVector,
    guide_feat: &ParamVector,
    cfg: &GuidanceConfig,
) -> Result<f64> {
    let cos = cosine_similarity(client_feat, guide_feat)?;
    Ok(cos.max(cfg.cos_floor).log(cfg.log_base))
}

/// Threshold: rho * mean(tau_k) + iota.
pub fn tau_threshold(taus: &[f64], cfg: &GuidanceConfig) -> Result<f64> {
    if taus.is_empty() {
        return Err(Error::EmptyInput("no per-client similarity terms".into()));
    }
    let mean = taus.iter().sum::<f64>() / taus.len() as f64;
    Ok(cfg.rho * mean + cfg.iota)
}

/// Log loss ratio log_base(loss_c / loss_g).
pub fn llr(loss_c: f64, loss_g: f64, log_base: f64) -> Result<f64> {
    if loss_c <= 0.0 || loss_g <= 0.0 {
        return Err(Error::Domain(format!(
            "log loss ratio needs positive losses, got {loss_c}, {loss_g}"
        )));
    }
    Ok((loss_c / loss_g).log(log_base))
}

/// The gate opens iff llr < tau, strictly.
pub fn gate_open(llr_value: f64, tau: f64) -> bool {
    llr_value < tau
}

/// One guiding update: w - gamma * grad F(w, batch).
pub fn guiding_step(
    w: &ParamVector,
    task: &dyn Objective,
    guide_data: &Dataset,
    batch: &[usize],
    gamma: f64,
) -> Result<ParamVector> {
    let (_, grad) = task.loss_grad(w, guide_data, batch)?;
    let mut next = w.clone();
    next.axpy(-gamma, &grad)?;
    Ok(next)
}

/// Momentum blend of the client loss.
pub fn update_momentum_loss(loss_c_prev: f64, mean_local_loss: f64, beta: f64) -> f64 {
    beta * loss_c_prev + (1.0 - beta) * mean_local_loss
}

/// Draws a guiding minibatch (with replacement; 0 = full dataset).
pub fn guide_batch_indices(n: usize, batch: usize, stream: &mut RngStream) -> Vec<usize> {
    if batch == 0 || batch >= n {
        (0..n).collect()
    } else {
        (0..batch).map(|_| stream.index(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_mixture;
    use crate::numerics::derive_stream;
    use crate::objectives::LogRegTask;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn tau_k_values() {
        let cfg = GuidanceConfig::default();
        let a = pv(&[1.0, 1.0]);
        assert!(tau_k(&a, &a, &cfg).unwrap().abs() < 1e-14);

        // cos = 0.5 exactly: unit vectors at 60 degrees
        let b = pv(&[1.0, 0.0]);
        let c = pv(&[0.5, 0.75f64.sqrt()]);
        assert!((tau_k(&b, &c, &cfg).unwrap() + 1.0).abs() < 1e-12);

        // orthogonal -> clamped at 1e-6
        let d = pv(&[0.0, 1.0]);
        let expected = 1e-6f64.log2();
        assert!((tau_k(&b, &d, &cfg).unwrap() - expected).abs() < 1e-9);
        assert!((expected + 19.9316).abs() < 1e-4);
    }

    #[test]
    fn tau_k_scale_invariant() {
        let cfg = GuidanceConfig::default();
        let a = pv(&[0.4, -1.2, 2.0]);
        let b = pv(&[1.0, 0.5, 0.25]);
        let base = tau_k(&a, &b, &cfg).unwrap();
        for c in [0.01, 3.0, 1e5] {
            assert!((tau_k(&a.scaled(c), &b, &cfg).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_arithmetic() {
        let cfg = GuidanceConfig::default();
        assert_eq!(tau_threshold(&[0.0, 0.0], &cfg).unwrap(), -0.5);
        assert_eq!(tau_threshold(&[-1.0, -3.0], &cfg).unwrap(), -4.5);
        let degenerate = GuidanceConfig {
            rho: 0.0,
            ..GuidanceConfig::default()
        };
        assert_eq!(tau_threshold(&[5.0, -7.0], &degenerate).unwrap(), -0.5);
        assert!(tau_threshold(&[], &cfg).is_err());
    }

    #[test]
    fn llr_values_and_errors() {
        assert_eq!(llr(4.0, 1.0, 2.0).unwrap(), 2.0);
        assert_eq!(llr(1.0, 4.0, 2.0).unwrap(), -2.0);
        assert_eq!(llr(0.7, 0.7, 2.0).unwrap(), 0.0);
        assert!(llr(0.0, 1.0, 2.0).is_err());
        assert!(llr(1.0, -2.0, 2.0).is_err());
    }

    #[test]
    fn gate_is_strict() {
        assert!(!gate_open(2.0, -0.5));
        assert!(gate_open(-2.0, -0.5));
        assert!(!gate_open(-0.5, -0.5));
    }

    #[test]
    fn momentum_blend() {
        assert!((update_momentum_loss(1.0, 0.5, 0.9) - 0.95).abs() < 1e-15);
        assert_eq!(update_momentum_loss(1.0, 0.5, 0.0), 0.5);
        assert_eq!(update_momentum_loss(1.0, 0.5, 1.0), 1.0);
    }

    #[test]
    fn guiding_step_hand_example() {
        // F(w) = 0.5 (w - 2)^2 via mean estimation on a single point x = 2
        use crate::objectives::MeanEstimationTask;
        let task = MeanEstimationTask::new(1);
        let data = Dataset::new(vec![2.0], vec![0], 1, 1).unwrap();
        let w = pv(&[0.0]);
        let next = guiding_step(&w, &task, &data, &[0], 0.1).unwrap();
        assert!((next[0] - 0.2).abs() < 1e-15);

        let frozen = guiding_step(&w, &task, &data, &[0], 0.0).unwrap();
        assert_eq!(frozen, w);

        let at_opt = guiding_step(&pv(&[2.0]), &task, &data, &[0], 0.1).unwrap();
        assert_eq!(at_opt.as_slice(), &[2.0]);
    }

    #[test]
    fn client_mean_feature_examples() {
        let task = LogRegTask::new(2, 2).unwrap();
        let w0 = ParamVector::zeros(task.param_dim());
        let single = Dataset::new(vec![3.0, -1.0], vec![0], 2, 2).unwrap();
        assert_eq!(
            client_mean_feature(&task, &w0, &single).unwrap().as_slice(),
            &[3.0, -1.0]
        );
        let two = Dataset::new(vec![1.0, 0.0, 0.0, 1.0], vec![0, 1], 2, 2).unwrap();
        assert_eq!(
            client_mean_feature(&task, &w0, &two).unwrap().as_slice(),
            &[0.5, 0.5]
        );
    }

    #[test]
    fn tau_ordering_tracks_heterogeneity() {
        // LH > MH > HH for constructed guiding sets, per seed.
        use crate::data::{build_guiding_set, GuideSource, GuidingSetSpec};
        let cfg = GuidanceConfig::default();
        let task = LogRegTask::new(10, 16).unwrap();
        for seed in 0..5u64 {
            let mut data_stream = derive_stream(seed, "tau-order", 0, 0);
            let client = gen_gaussian_mixture(10, 16, 40, 0.5, 3.0, &mut data_stream).unwrap();
            let w0 = ParamVector::zeros(task.param_dim());
            let client_feat = client_mean_feature(&task, &w0, &client).unwrap();
            let mut taus = Vec::new();
            for overlap in [1.0, 0.5, 0.0] {
                let spec = GuidingSetSpec {
                    overlap,
                    per_class: 40,
                    source: GuideSource::Synthetic {
                        spread: 0.5,
                        shift: 3.0,
                    },
                };
                let mut gs = derive_stream(seed, "tau-order-guide", 0, 0);
                let guide = build_guiding_set(&spec, &client, &mut gs).unwrap();
                let guide_feat = client_mean_feature(&task, &w0, &guide).unwrap();
                let tk = tau_k(&client_feat, &guide_feat, &cfg).unwrap();
                taus.push(tau_threshold(&[tk], &cfg).unwrap());
            }
            assert!(
                taus[0] > taus[1] && taus[1] > taus[2],
                "seed {seed}: taus {taus:?}"
            );
        }
    }
}
