//! One-step convergence decomposition on strongly convex quadratics:
//! closed-form constants, the epsilon bound, and Monte Carlo verification
//! that the guided update stays within epsilon of the plain aggregate.

use std::io::Write as IoWrite;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{derive_stream, ParamVector};
use crate::objectives::{spd_from_spectrum, QuadraticTask};

/// Constants entering the bound. `mu` and `l` cover both the aggregate
/// client objective and the guiding objective (min and max over the pair).
#[derive(Clone, Debug)]
pub struct TheoryParams {
    pub mu: f64,
    pub l: f64,
    pub gamma: f64,
    pub eta: f64,
    pub sigma_g: f64,
    pub sigma_k: Vec<f64>,
}

impl TheoryParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0) || !(self.l >= self.mu) {
            return Err(Error::InvalidConfig(
                "need 0 < mu <= L in theory parameters".into(),
            ));
        }
        if self.gamma < 0.0 || self.eta < 0.0 || self.sigma_g < 0.0 {
            return Err(Error::InvalidConfig(
                "gamma, eta, sigma_g must be nonnegative".into(),
            ));
        }
        if self.sigma_k.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::InvalidConfig(
                "client noise levels must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// A weighted federation of quadratic client tasks plus a guiding task of
/// the same dimension.
#[derive(Clone, Debug)]
pub struct TaskPair {
    pub clients: Vec<(f64, QuadraticTask)>,
    pub guide: QuadraticTask,
}

impl TaskPair {
    pub fn new(clients: Vec<(f64, QuadraticTask)>, guide: QuadraticTask) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::EmptyInput("no client tasks".into()));
        }
        let d = guide.dim();
        let mut weight_sum = 0.0;
        for (p, task) in &clients {
            if task.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: task.dim(),
                });
            }
            if !(*p > 0.0) {
                return Err(Error::InvalidConfig("client weights must be positive".into()));
            }
            weight_sum += p;
        }
        if (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "client weights must sum to 1, got {weight_sum}"
            )));
        }
        Ok(Self { clients, guide })
    }

    /// The aggregate objective f = sum_k p_k f_k, itself quadratic.
    pub fn combined(&self) -> Result<QuadraticTask> {
        let d = self.guide.dim();
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        let mut c = 0.0;
        for (p, task) in &self.clients {
            for (acc, v) in a.iter_mut().zip(task.matrix()) {
                *acc += p * v;
            }
            for (acc, v) in b.iter_mut().zip(task.linear()) {
                *acc += p * v;
            }
            c += p * task.offset();
        }
        QuadraticTask::new(a, b, c)
    }

    /// Mean client gradient at w (exact, no noise).
    pub fn mean_gradient(&self, w: &ParamVector) -> Result<ParamVector> {
        let mut g = ParamVector::zeros(self.guide.dim());
        for (p, task) in &self.clients {
            let (_, gk) = task.loss_grad_at(w)?;
            g.axpy(*p, &gk)?;
        }
        Ok(g)
    }
}

/// Task heterogeneity: f* - F*, the gap between the optimal aggregate
/// client loss and the optimal guiding loss.
pub fn gamma_g(pair: &TaskPair) -> Result<f64> {
    let (_, f_star) = pair.combined()?.optimum()?;
    let (_, big_f_star) = pair.guide.optimum()?;
    Ok(f_star - big_f_star)
}

/// Guiding strength at an iterate: f* - F(w_bar). Negative when the
/// guiding loss at the iterate dominates the optimal client loss.
pub fn pi(f_star: f64, guide: &QuadraticTask, w_bar: &ParamVector) -> Result<f64> {
    let (loss, _) = guide.loss_grad_at(w_bar)?;
    Ok(f_star - loss)
}

/// Closed-form bound:
/// epsilon = gamma^2 sigma_g^2 + 2(1/mu - 2 gamma (1 - L gamma)) Gamma_g
///         + 4 gamma (1 - L gamma) Pi.
pub fn epsilon(p: &TheoryParams, gamma_g: f64, pi: f64) -> f64 {
    let g = p.gamma;
    g * g * p.sigma_g * p.sigma_g
        + 2.0 * (1.0 / p.mu - 2.0 * g * (1.0 - p.l * g)) * gamma_g
        + 4.0 * g * (1.0 - p.l * g) * pi
}

/// Algebraically identical regrouping of `epsilon`; kept separate so the
/// two printed forms can be cross-checked numerically.
pub fn epsilon_alt(p: &TheoryParams, gamma_g: f64, pi: f64) -> f64 {
    let g = p.gamma;
    g * g * p.sigma_g * p.sigma_g
        + (2.0 / p.mu + 4.0 * p.l * g * g - 4.0 * g) * gamma_g
        + (4.0 * g - 4.0 * p.l * g * g) * pi
}

/// Upper bound on Pi during guided rounds:
/// Pi <= -(1/(2 mu gamma (1 - L gamma)) - 1) Gamma_g
///       - gamma^2 sigma_g^2 / (4 gamma (1 - L gamma)).
/// Requires 0 < gamma < 1/L.
pub fn pi_upper_bound(p: &TheoryParams, gamma_g: f64) -> Result<f64> {
    if p.gamma <= 0.0 || p.gamma >= 1.0 / p.l {
        return Err(Error::Domain(format!(
            "pi bound needs 0 < gamma < 1/L, got gamma = {}, L = {}",
            p.gamma, p.l
        )));
    }
    let g = p.gamma;
    let shrink = g * (1.0 - p.l * g);
    Ok(-(1.0 / (2.0 * p.mu * shrink) - 1.0) * gamma_g
        - g * g * p.sigma_g * p.sigma_g / (4.0 * shrink))
}

/// Sign diagnostic for the bound's stated premise 2 mu gamma (1 - L gamma) > 1;
/// positive values would satisfy it. It cannot be positive when mu <= L,
/// so it is reported rather than enforced.
pub fn pi_bound_premise(p: &TheoryParams) -> f64 {
    2.0 * p.mu * p.gamma * (1.0 - p.l * p.gamma) - 1.0
}

/// Monte Carlo one-step comparison.
#[derive(Clone, Copy, Debug)]
pub struct OneStepResult {
    pub delta_fedegg: f64,
    pub delta_fedavg: f64,
    pub epsilon_closed: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// Noise with total variance sigma^2 regardless of dimension, matching the
/// bounded-variance model on the full gradient vector.
fn add_noise(g: &mut ParamVector, sigma: f64, stream: &mut crate::numerics::RngStream) {
    if sigma == 0.0 {
        return;
    }
    let scale = sigma / (g.dim() as f64).sqrt();
    for v in g.as_mut_slice() {
        *v += scale * stream.standard_normal();
    }
}

/// One paired trial: returns squared distances to w* after the guided and
/// the plain update, sharing the client-gradient draw.
fn one_trial(
    pair: &TaskPair,
    p: &TheoryParams,
    w_t: &ParamVector,
    w_star: &ParamVector,
    master_seed: u64,
    trial: u64,
) -> Result<(f64, f64)> {
    let d = pair.guide.dim();
    let mut g = ParamVector::zeros(d);
    for (k, (pk, task)) in pair.clients.iter().enumerate() {
        let mut stream = derive_stream(master_seed, "one-step-client", trial, k as u64);
        let (_, mut gk) = task.loss_grad_at(w_t)?;
        let sigma = p.sigma_k.get(k).copied().unwrap_or(0.0);
        add_noise(&mut gk, sigma, &mut stream);
        g.axpy(*pk, &gk)?;
    }
    let mut w_avg = w_t.clone();
    w_avg.axpy(-p.eta, &g)?;
    let e_avg = w_avg.dist_sq(w_star)?;

    let mut guide_stream = derive_stream(master_seed, "one-step-guide", trial, 0);
    let (_, mut q) = pair.guide.loss_grad_at(&w_avg)?;
    add_noise(&mut q, p.sigma_g, &mut guide_stream);
    let mut w_egg = w_avg;
    w_egg.axpy(-p.gamma, &q)?;
    let e_egg = w_egg.dist_sq(w_star)?;
    Ok((e_egg, e_avg))
}

/// Estimates both one-step distances and checks them against the closed
/// form, with Pi evaluated at the deterministic aggregated iterate
/// w_t - eta * mean_grad(w_t).
pub fn one_step_experiment(
    pair: &TaskPair,
    p: &TheoryParams,
    w_t: &ParamVector,
    trials: usize,
    master_seed: u64,
) -> Result<OneStepResult> {
    p.validate()?;
    if trials == 0 {
        return Err(Error::EmptyInput("need at least one trial".into()));
    }
    if p.eta > 1.0 / (4.0 * p.l) + 1e-15 {
        return Err(Error::Domain(format!(
            "one-step experiment needs eta <= 1/(4L); eta = {}, L = {}",
            p.eta, p.l
        )));
    }
    let combined = pair.combined()?;
    let (w_star, f_star) = combined.optimum()?;

    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| one_trial(pair, p, w_t, &w_star, master_seed, t))
        .collect::<Result<_>>()?;

    let n = trials as f64;
    let delta_fedegg = per_trial.iter().map(|(e, _)| e).sum::<f64>() / n;
    let delta_fedavg = per_trial.iter().map(|(_, a)| a).sum::<f64>() / n;
    let mean_diff = delta_fedegg - delta_fedavg;
    let var = per_trial
        .iter()
        .map(|(e, a)| {
            let d = e - a - mean_diff;
            d * d
        })
        .sum::<f64>()
        / n.max(2.0);
    let stderr = (var / n).sqrt();

    let g_bar = pair.mean_gradient(w_t)?;
    let mut w_bar = w_t.clone();
    w_bar.axpy(-p.eta, &g_bar)?;
    let gamma_g_val = gamma_g(pair)?;
    let pi_val = pi(f_star, &pair.guide, &w_bar)?;
    let epsilon_closed = epsilon(p, gamma_g_val, pi_val);

    Ok(OneStepResult {
        delta_fedegg,
        delta_fedavg,
        epsilon_closed,
        stderr,
        holds: delta_fedegg <= delta_fedavg + epsilon_closed + 3.0 * stderr,
    })
}

/// True iff the guided and plain one-step iterates are bitwise identical
/// across trials. Intended for gamma = 0, sigma_g = 0, where the guiding
/// step vanishes.
pub fn consistency_check(
    pair: &TaskPair,
    p: &TheoryParams,
    w_t: &ParamVector,
    trials: usize,
    master_seed: u64,
) -> Result<bool> {
    for t in 0..trials as u64 {
        let d = pair.guide.dim();
        let mut g = ParamVector::zeros(d);
        for (k, (pk, task)) in pair.clients.iter().enumerate() {
            let mut stream = derive_stream(master_seed, "one-step-client", t, k as u64);
            let (_, mut gk) = task.loss_grad_at(w_t)?;
            add_noise(&mut gk, p.sigma_k.get(k).copied().unwrap_or(0.0), &mut stream);
            g.axpy(*pk, &gk)?;
        }
        let mut w_avg = w_t.clone();
        w_avg.axpy(-p.eta, &g)?;
        let mut guide_stream = derive_stream(master_seed, "one-step-guide", t, 0);
        let (_, mut q) = pair.guide.loss_grad_at(&w_avg)?;
        add_noise(&mut q, p.sigma_g, &mut guide_stream);
        let mut w_egg = w_avg.clone();
        w_egg.axpy(-p.gamma, &q)?;
        if w_egg
            .as_slice()
            .iter()
            .zip(w_avg.as_slice())
            .any(|(a, b)| a.to_bits() != b.to_bits())
        {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A randomized verification instance with closed-form constants.
#[derive(Clone, Debug)]
pub struct TheoryInstance {
    pub instance_id: u64,
    pub pair: TaskPair,
    pub params: TheoryParams,
    pub w_t: ParamVector,
}

/// Draws a random instance. Dimensions rotate through {1, 2, 10};
/// spectra lie in [0.5, 3]; step sizes satisfy eta <= 1/(4L) and
/// gamma <= 1/(2L). Client offsets are shifted so that the aggregate
/// optimum value sits at or above the guiding loss at the aggregate
/// optimizer (f* >= F(w*)), the regime in which the bound's derivation
/// is valid; the guiding offset normalizes F* to 0.
pub fn random_instance(instance_id: u64, master_seed: u64) -> Result<TheoryInstance> {
    let dims = [1usize, 2, 10];
    let d = dims[(instance_id % 3) as usize];
    let mut stream = derive_stream(master_seed, "theory-instance", instance_id, 0);

    let n_clients = 2 + stream.index(3); // 2..=4
    let raw: Vec<f64> = (0..n_clients).map(|_| 0.2 + stream.uniform()).collect();
    let total: f64 = raw.iter().sum();

    let mut clients = Vec::with_capacity(n_clients);
    for w in &raw {
        let eigs: Vec<f64> = (0..d).map(|_| 0.5 + 2.5 * stream.uniform()).collect();
        let a = spd_from_spectrum(&eigs, &mut stream);
        let center: Vec<f64> = (0..d).map(|_| 2.0 * stream.standard_normal()).collect();
        // 0.5 (w - v)'A(w - v) = 0.5 w'Aw - (Av)'w + 0.5 v'Av
        let av = mat_apply(&a, &center, d);
        let c0 = 0.5 * dot(&center, &av);
        clients.push((w / total, QuadraticTask::new(a, av, c0)?));
    }

    let eigs: Vec<f64> = (0..d).map(|_| 0.5 + 2.5 * stream.uniform()).collect();
    let a = spd_from_spectrum(&eigs, &mut stream);
    let center: Vec<f64> = (0..d).map(|_| 2.0 * stream.standard_normal()).collect();
    let av = mat_apply(&a, &center, d);
    let guide = QuadraticTask::new(a, av.clone(), 0.5 * dot(&center, &av))?;
    // F* = 0 by construction of the offset above.

    let pair = TaskPair::new(clients, guide)?;
    let combined = pair.combined()?;
    let (w_star, f_star_base) = combined.optimum()?;
    let (guide_loss_at_w_star, _) = pair.guide.loss_grad_at(&w_star)?;
    let slack = 2.0 * stream.uniform();
    let shift = guide_loss_at_w_star + slack - f_star_base;
    let clients_shifted: Vec<(f64, QuadraticTask)> = pair
        .clients
        .iter()
        .map(|(p, t)| {
            QuadraticTask::new(t.matrix().to_vec(), t.linear().to_vec(), t.offset() + shift)
                .map(|t| (*p, t))
        })
        .collect::<Result<_>>()?;
    let pair = TaskPair::new(clients_shifted, pair.guide)?;

    let combined = pair.combined()?;
    let mu = combined.mu().min(pair.guide.mu());
    let l = combined.lsmooth().max(pair.guide.lsmooth());
    let eta = (0.05 + 0.95 * stream.uniform()) / (4.0 * l);
    let gamma = (0.05 + 0.95 * stream.uniform()) / (2.0 * l);
    let w_t = ParamVector::new((0..d).map(|_| 2.0 * stream.standard_normal()).collect())?;

    Ok(TheoryInstance {
        instance_id,
        pair,
        params: TheoryParams {
            mu,
            l,
            gamma,
            eta,
            sigma_g: 0.0,
            sigma_k: vec![0.0; n_clients],
        },
        w_t,
    })
}

fn mat_apply(a: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d)
        .map(|i| a[i * d..(i + 1) * d].iter().zip(x).map(|(u, v)| u * v).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One exported row of a verification sweep.
#[derive(Clone, Debug)]
pub struct TheoryRow {
    pub instance_id: u64,
    pub d: usize,
    pub mu: f64,
    pub l: f64,
    pub eta: f64,
    pub gamma: f64,
    pub sigma_g: f64,
    pub gamma_g: f64,
    pub pi: f64,
    pub epsilon: f64,
    pub delta_fedegg: f64,
    pub delta_fedavg: f64,
    pub stderr: f64,
    pub holds: bool,
}

/// Evaluates one instance end to end (noiseless instances need one trial).
pub fn evaluate_instance(inst: &TheoryInstance, trials: usize, master_seed: u64) -> Result<TheoryRow> {
    let result = one_step_experiment(&inst.pair, &inst.params, &inst.w_t, trials, master_seed)?;
    let combined = inst.pair.combined()?;
    let (_, f_star) = combined.optimum()?;
    let g_bar = inst.pair.mean_gradient(&inst.w_t)?;
    let mut w_bar = inst.w_t.clone();
    w_bar.axpy(-inst.params.eta, &g_bar)?;
    let gg = gamma_g(&inst.pair)?;
    let pi_val = pi(f_star, &inst.pair.guide, &w_bar)?;
    Ok(TheoryRow {
        instance_id: inst.instance_id,
        d: inst.pair.guide.dim(),
        mu: inst.params.mu,
        l: inst.params.l,
        eta: inst.params.eta,
        gamma: inst.params.gamma,
        sigma_g: inst.params.sigma_g,
        gamma_g: gg,
        pi: pi_val,
        epsilon: result.epsilon_closed,
        delta_fedegg: result.delta_fedegg,
        delta_fedavg: result.delta_fedavg,
        stderr: result.stderr,
        holds: result.holds,
    })
}

pub fn write_theory_csv(path: &Path, rows: &[TheoryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "instance_id,d,mu,L,eta,gamma,sigma_g,gamma_g,pi,epsilon,delta_fedegg,delta_fedavg,stderr,holds"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.instance_id,
            r.d,
            r.mu,
            r.l,
            r.eta,
            r.gamma,
            r.sigma_g,
            r.gamma_g,
            r.pi,
            r.epsilon,
            r.delta_fedegg,
            r.delta_fedavg,
            r.stderr,
            r.holds
        )?;
    }
    Ok(())
}

/// The worked 1-D setup used across tests: clients 0.5(w-1)^2 and
/// 0.5(w+1)^2 with equal weight (aggregate optimum 0.5 at w = 0) and
/// guide 0.5(w-2)^2 (optimum 0 at w = 2).
pub fn worked_example() -> Result<TaskPair> {
    let c1 = QuadraticTask::scalar(1.0, 1.0, 0.5)?;
    let c2 = QuadraticTask::scalar(1.0, -1.0, 0.5)?;
    let guide = QuadraticTask::scalar(1.0, 2.0, 2.0)?;
    TaskPair::new(vec![(0.5, c1), (0.5, c2)], guide)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_params(gamma: f64, sigma_g: f64) -> TheoryParams {
        TheoryParams {
            mu: 1.0,
            l: 1.0,
            gamma,
            eta: 0.1,
            sigma_g,
            sigma_k: vec![0.0, 0.0],
        }
    }

    #[test]
    fn gamma_g_examples() {
        let pair = worked_example().unwrap();
        assert!((gamma_g(&pair).unwrap() - 0.5).abs() < 1e-12);

        // identical tasks
        let t = QuadraticTask::scalar(1.0, 1.0, 0.0).unwrap();
        let same = TaskPair::new(vec![(1.0, t.clone())], t).unwrap();
        assert_eq!(gamma_g(&same).unwrap(), 0.0);

        // raising the guiding offset by 1 lowers the gap by 1
        let shifted = TaskPair::new(
            pair.clients.clone(),
            QuadraticTask::scalar(1.0, 2.0, 3.0).unwrap(),
        )
        .unwrap();
        assert!((gamma_g(&shifted).unwrap() - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn pi_examples() {
        let pair = worked_example().unwrap();
        let (_, f_star) = pair.combined().unwrap().optimum().unwrap();
        // at the guiding optimum, pi collapses to the heterogeneity gap
        let (guide_opt, _) = pair.guide.optimum().unwrap();
        let at_opt = pi(f_star, &pair.guide, &guide_opt).unwrap();
        assert!((at_opt - gamma_g(&pair).unwrap()).abs() < 1e-12);
        // at w = 0: 0.5 - 2.0 = -1.5
        let at_zero = pi(f_star, &pair.guide, &ParamVector::zeros(1)).unwrap();
        assert!((at_zero + 1.5).abs() < 1e-12);
        assert!(at_zero < 0.0);
    }

    #[test]
    fn epsilon_examples() {
        let p0 = example_params(0.0, 0.0);
        assert_eq!(epsilon(&p0, 0.0, 0.0), 0.0);
        assert!((epsilon(&p0, 0.5, -1.5) - 1.0).abs() < 1e-12);

        let p = example_params(0.1, 0.0);
        assert!((epsilon(&p, 0.5, -1.5) - 0.28).abs() < 1e-12);
    }

    #[test]
    fn epsilon_forms_agree_and_monotone_in_pi() {
        for id in 0..60 {
            let inst = random_instance(id, 99).unwrap();
            let gg = gamma_g(&inst.pair).unwrap();
            for pi_val in [-3.0, -0.1, 0.0, 0.7] {
                let a = epsilon(&inst.params, gg, pi_val);
                let b = epsilon_alt(&inst.params, gg, pi_val);
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                    "forms diverge: {a} vs {b}"
                );
                // strictly increasing in pi for 0 < gamma < 1/L
                let up = epsilon(&inst.params, gg, pi_val + 0.5);
                assert!(up > a);
            }
        }
    }

    #[test]
    fn pi_bound_examples() {
        let p = example_params(0.1, 0.0);
        let b = pi_upper_bound(&p, 0.5).unwrap();
        assert!((b - (-(1.0 / 0.18 - 1.0) * 0.5)).abs() < 1e-12);
        assert!((b + 2.27778).abs() < 1e-5);

        let pn = example_params(0.1, 1.0);
        let bn = pi_upper_bound(&pn, 0.5).unwrap();
        assert!((bn - (b - 0.01 / 0.36)).abs() < 1e-12);
        assert!((bn + 2.30556).abs() < 1e-5);

        assert_eq!(pi_upper_bound(&example_params(0.1, 0.0), 0.0).unwrap(), 0.0);
        assert!(pi_upper_bound(&example_params(0.0, 0.0), 0.5).is_err());
        assert!(pi_upper_bound(&example_params(1.0, 0.0), 0.5).is_err());

        // the stated premise is never satisfiable with mu <= L
        assert!(pi_bound_premise(&p) < 0.0);
    }

    #[test]
    fn worked_example_noiseless() {
        let pair = worked_example().unwrap();
        let p = example_params(0.1, 0.0);
        let r = one_step_experiment(&pair, &p, &ParamVector::zeros(1), 10, 7).unwrap();
        assert!((r.delta_fedegg - 0.04).abs() < 1e-12);
        assert_eq!(r.delta_fedavg, 0.0);
        assert!((r.epsilon_closed - 0.28).abs() < 1e-12);
        assert!(r.stderr < 1e-15);
        assert!(r.holds);
    }

    #[test]
    fn worked_example_stochastic() {
        let pair = worked_example().unwrap();
        for sigma in [0.5, 1.0] {
            let p = example_params(0.1, sigma);
            let r = one_step_experiment(&pair, &p, &ParamVector::zeros(1), 100_000, 11).unwrap();
            // E delta_fedegg = 0.04 + 0.01 sigma^2, epsilon = 0.28 + 0.01 sigma^2
            let expect = 0.04 + 0.01 * sigma * sigma;
            assert!((r.delta_fedegg - expect).abs() < 5e-4, "{}", r.delta_fedegg);
            assert!(r.stderr < 1e-3);
            assert!(r.holds);
        }
    }

    #[test]
    fn consistency_at_gamma_zero() {
        let pair = worked_example().unwrap();
        let w = ParamVector::new(vec![0.7]).unwrap();
        let p0 = example_params(0.0, 0.0);
        assert!(consistency_check(&pair, &p0, &w, 20, 5).unwrap());
        let p_tiny = example_params(1e-9, 0.0);
        assert!(!consistency_check(&pair, &p_tiny, &w, 20, 5).unwrap());
    }

    #[test]
    fn randomized_instances_satisfy_bound() {
        for id in 0..200 {
            let inst = random_instance(id, 123).unwrap();
            let row = evaluate_instance(&inst, 1, 123).unwrap();
            assert!(
                row.delta_fedegg <= row.delta_fedavg + row.epsilon + 1e-9,
                "instance {id}: {} > {} + {}",
                row.delta_fedegg,
                row.delta_fedavg,
                row.epsilon
            );
        }
    }

    #[test]
    fn instance_generator_shapes() {
        let i0 = random_instance(0, 1).unwrap();
        let i1 = random_instance(1, 1).unwrap();
        let i2 = random_instance(2, 1).unwrap();
        assert_eq!(i0.pair.guide.dim(), 1);
        assert_eq!(i1.pair.guide.dim(), 2);
        assert_eq!(i2.pair.guide.dim(), 10);
        for inst in [&i0, &i1, &i2] {
            let p = &inst.params;
            assert!(p.eta <= 1.0 / (4.0 * p.l) + 1e-15);
            assert!(p.gamma <= 1.0 / (2.0 * p.l) + 1e-15);
            // F* normalized to 0, f* at or above F(w*)
            let (_, f_star) = inst.pair.combined().unwrap().optimum().unwrap();
            let (_, big_f_star) = inst.pair.guide.optimum().unwrap();
            assert!(big_f_star.abs() < 1e-9);
            let (w_star, _) = inst.pair.combined().unwrap().optimum().unwrap();
            let (f_at, _) = inst.pair.guide.loss_grad_at(&w_star).unwrap();
            assert!(f_star >= f_at - 1e-9);
        }
        // determinism of the generator
        let again = random_instance(0, 1).unwrap();
        assert_eq!(again.w_t, i0.w_t);
    }
}
