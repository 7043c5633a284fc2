//! Client-side local update rules and server-side aggregation.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, ParamVector, RngStream};
use crate::objectives::Objective;
use crate::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyKind {
    FedAvg,
    FedProx,
    Scaffold,
    FedNova,
}

impl StrategyKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Self::FedAvg),
            "fedprox" => Ok(Self::FedProx),
            "scaffold" => Ok(Self::Scaffold),
            "fednova" => Ok(Self::FedNova),
            other => Err(Error::InvalidConfig(format!(
                "unknown strategy '{other}' (expected fedavg, fedprox, scaffold, fednova)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::FedAvg => "fedavg",
            Self::FedProx => "fedprox",
            Self::Scaffold => "scaffold",
            Self::FedNova => "fednova",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Local SGD steps per round (uniform across clients unless a
    /// per-client override is supplied to the engine).
    pub local_steps: usize,
    /// Minibatch size with replacement; 0 means full batch.
    pub batch_size: usize,
    /// Proximal coefficient, FedProx only.
    pub mu_prox: f64,
    pub eta: Schedule,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::FedAvg,
            local_steps: 5,
            batch_size: 32,
            mu_prox: 0.0,
            eta: Schedule::default_eta(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_steps == 0 {
            return Err(Error::InvalidConfig("local_steps must be >= 1".into()));
        }
        if self.mu_prox < 0.0 || !self.mu_prox.is_finite() {
            return Err(Error::InvalidConfig(
                "mu_prox must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one client's local work in a round.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub new_params: ParamVector,
    /// Loss over the client's full local set at the final local iterate.
    pub final_local_loss: f64,
    pub steps_taken: usize,
    /// Control-variate delta, SCAFFOLD only.
    pub control_delta: Option<ParamVector>,
    /// Updated client control, SCAFFOLD only.
    pub new_control: Option<ParamVector>,
}

/// Draws a minibatch of positions into `local` with replacement.
fn draw_batch(local: &[usize], batch_size: usize, stream: &mut RngStream) -> Vec<usize> {
    if batch_size == 0 || batch_size >= local.len() {
        local.to_vec()
    } else {
        (0..batch_size)
            .map(|_| local[stream.index(local.len())])
            .collect()
    }
}

fn local_loop<G>(
    task: &dyn Objective,
    w_global: &ParamVector,
    data: &Dataset,
    local: &[usize],
    steps: usize,
    batch_size: usize,
    eta: f64,
    stream: &mut RngStream,
    mut correct: G,
) -> Result<(ParamVector, f64)>
where
    G: FnMut(&ParamVector, ParamVector) -> Result<ParamVector>,
{
    if local.is_empty() {
        return Err(Error::EmptyInput("client has no local data".into()));
    }
    let mut v = w_global.clone();
    for _ in 0..steps {
        let batch = draw_batch(local, batch_size, stream);
        let (_, grad) = task.loss_grad(&v, data, &batch)?;
        let dir = correct(&v, grad)?;
        v.axpy(-eta, &dir)?;
    }
    let final_loss = task.loss(&v, data, local)?;
    Ok((v, final_loss))
}

/// Plain local SGD (FedAvg client).
pub fn local_update_sgd(
    task: &dyn Objective,
    w_global: &ParamVector,
    data: &Dataset,
    local: &[usize],
    cfg: &StrategyConfig,
    eta: f64,
    stream: &mut RngStream,
) -> Result<ClientUpdate> {
    let (v, loss) = local_loop(
        task,
        w_global,
        data,
        local,
        cfg.local_steps,
        cfg.batch_size,
        eta,
        stream,
        |_, g| Ok(g),
    )?;
    Ok(ClientUpdate {
        new_params: v,
        final_local_loss: loss,
        steps_taken: cfg.local_steps,
        control_delta: None,
        new_control: None,
    })
}

/// Local SGD with a proximal pull toward the broadcast model:
/// direction = grad + mu_prox (v - w_global).
pub fn local_update_prox(
    task: &dyn Objective,
    w_global: &ParamVector,
    data: &Dataset,
    local: &[usize],
    cfg: &StrategyConfig,
    eta: f64,
    stream: &mut RngStream,
) -> Result<ClientUpdate> {
    let mu = cfg.mu_prox;
    let (v, loss) = local_loop(
        task,
        w_global,
        data,
        local,
        cfg.local_steps,
        cfg.batch_size,
        eta,
        stream,
        |v, mut g| {
            if mu != 0.0 {
                let drift = v.sub(w_global)?;
                g.axpy(mu, &drift)?;
            }
            Ok(g)
        },
    )?;
    Ok(ClientUpdate {
        new_params: v,
        final_local_loss: loss,
        steps_taken: cfg.local_steps,
        control_delta: None,
        new_control: None,
    })
}

/// Variance-reduced local SGD: each step uses grad - c_k + c_global.
/// The new client control is c_k - c_global + (w_global - V_k) / (steps * eta).
pub fn local_update_scaffold(
    task: &dyn Objective,
    w_global: &ParamVector,
    data: &Dataset,
    local: &[usize],
    cfg: &StrategyConfig,
    eta: f64,
    c_client: &ParamVector,
    c_global: &ParamVector,
    stream: &mut RngStream,
) -> Result<ClientUpdate> {
    check_dims(w_global.dim(), c_client.dim())?;
    check_dims(w_global.dim(), c_global.dim())?;
    if eta <= 0.0 {
        return Err(Error::Domain(
            "scaffold control update needs a positive learning rate".into(),
        ));
    }
    let (v, loss) = local_loop(
        task,
        w_global,
        data,
        local,
        cfg.local_steps,
        cfg.batch_size,
        eta,
        stream,
        |_, mut g| {
            g.axpy(-1.0, c_client)?;
            g.axpy(1.0, c_global)?;
            Ok(g)
        },
    )?;
    let mut new_control = c_client.sub(c_global)?;
    let drift = w_global.sub(&v)?;
    new_control.axpy(1.0 / (cfg.local_steps as f64 * eta), &drift)?;
    let control_delta = new_control.sub(c_client)?;
    Ok(ClientUpdate {
        new_params: v,
        final_local_loss: loss,
        steps_taken: cfg.local_steps,
        control_delta: Some(control_delta),
        new_control: Some(new_control),
    })
}

/// Uniform average of sampled client models, reduced in ascending
/// client order so worker scheduling never changes the result.
pub fn aggregate_mean(updates: &[ClientUpdate]) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("no client updates to aggregate".into()));
    }
    let dim = updates[0].new_params.dim();
    let mut acc = ParamVector::zeros(dim);
    for u in updates {
        acc.axpy(1.0, &u.new_params)?;
    }
    Ok(acc.scaled(1.0 / updates.len() as f64))
}

/// Normalized averaging: each client's drift is divided by its step count
/// before averaging, then rescaled by the mean step count. Reduces to
/// `aggregate_mean` when all step counts agree.
pub fn aggregate_fednova(
    updates: &[ClientUpdate],
    w_global: &ParamVector,
    eta: f64,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::EmptyInput("no client updates to aggregate".into()));
    }
    if eta <= 0.0 {
        return Err(Error::Domain(
            "normalized aggregation needs a positive learning rate".into(),
        ));
    }
    if updates.iter().any(|u| u.steps_taken == 0) {
        return Err(Error::Domain("client took zero local steps".into()));
    }
    // Equal effective lengths make the rescaling the identity; take the
    // exact path so the reduction to plain averaging is bitwise.
    if updates.iter().all(|u| u.steps_taken == updates[0].steps_taken) {
        return aggregate_mean(updates);
    }
    let dim = w_global.dim();
    let mut d_bar = ParamVector::zeros(dim);
    let mut tau_eff = 0.0;
    for u in updates {
        let drift = w_global.sub(&u.new_params)?;
        d_bar.axpy(1.0 / (u.steps_taken as f64 * eta), &drift)?;
        tau_eff += u.steps_taken as f64;
    }
    let m = updates.len() as f64;
    let d_bar = d_bar.scaled(1.0 / m);
    tau_eff /= m;
    let mut next = w_global.clone();
    next.axpy(-eta * tau_eff, &d_bar)?;
    Ok(next)
}
