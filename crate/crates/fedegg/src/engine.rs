//! Round-by-round orchestration: client sampling, local updates, server
//! aggregation, the guiding gate, evaluation, and metrics export.

use std::io::Write as IoWrite;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::data::{build_guiding_set, Dataset, GuidingSetSpec, Partition};
use crate::error::{Error, Result};
use crate::guidance::{
    client_mean_feature, gate_open, guide_batch_indices, guiding_step, llr, tau_k,
    tau_threshold, update_momentum_loss, GuidanceConfig, GuidanceState, LOSS_FLOOR,
};
use crate::numerics::{derive_stream, ParamVector};
use crate::objectives::Objective;
use crate::strategies::{
    aggregate_fednova, aggregate_mean, local_update_prox, local_update_scaffold,
    local_update_sgd, ClientUpdate, StrategyConfig, StrategyKind,
};

/// How the guiding dataset is obtained.
#[derive(Clone, Debug)]
pub enum GuideData {
    /// Construct from the training data via the overlap spec.
    Spec(GuidingSetSpec),
    /// Use a caller-supplied dataset verbatim.
    Prebuilt(Dataset),
}

/// Guiding-mechanism wiring for a simulation.
#[derive(Clone, Debug)]
pub struct GuidanceSetup {
    pub config: GuidanceConfig,
    pub data: GuideData,
    /// Replaces the computed threshold when set; +inf forces the gate open
    /// every round, -inf keeps it shut.
    pub tau_override: Option<f64>,
}

/// Everything a run needs. The client count is the partition's length.
#[derive(Clone)]
pub struct SimulationConfig {
    pub task: Arc<dyn Objective>,
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub partition: Partition,
    pub strategy: StrategyConfig,
    pub guidance: Option<GuidanceSetup>,
    /// Clients sampled per round (m).
    pub sampled_per_round: usize,
    pub rounds: usize,
    pub master_seed: u64,
    pub eval_every: usize,
    pub tail_window: usize,
    /// Worker threads for per-client updates; 0 picks the rayon default.
    /// Never affects results, only speed.
    pub workers: usize,
    /// Initial model; zeros when absent.
    pub init_params: Option<ParamVector>,
}

impl SimulationConfig {
    pub fn num_clients(&self) -> usize {
        self.partition.client_indices.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_clients();
        if n == 0 {
            return Err(Error::InvalidConfig("partition has no clients".into()));
        }
        if self.sampled_per_round == 0 || self.sampled_per_round > n {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= sampled clients <= {n}, got {}",
                self.sampled_per_round
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be >= 1".into()));
        }
        self.strategy.validate()?;
        if let Some(g) = &self.guidance {
            g.config.validate()?;
        }
        if let Some(w) = &self.init_params {
            if w.dim() != self.task.param_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.task.param_dim(),
                    got: w.dim(),
                });
            }
        }
        Ok(())
    }
}

/// One CSV row. Guide fields are None when guidance is not configured;
/// test fields are None on non-evaluation rounds.
#[derive(Clone, Debug)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_local_loss: f64,
    pub loss_c: Option<f64>,
    pub loss_g: Option<f64>,
    pub llr: Option<f64>,
    pub tau: Option<f64>,
    pub gate_open: Option<bool>,
    pub guide_steps: usize,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
    pub wall_ms: f64,
}

/// Completed run: per-round metrics plus the final model and threshold.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: Vec<RoundMetrics>,
    pub final_params: ParamVector,
    pub tau: Option<f64>,
}

/// Mean loss and argmax accuracy over a test set. Ties in the class
/// scores resolve to the lowest class id.
pub fn evaluate(w: &ParamVector, task: &dyn Objective, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::EmptyInput("empty test set".into()));
    }
    let idx: Vec<usize> = (0..test.len()).collect();
    let loss = task.loss(w, test, &idx)?;
    let mut correct = 0usize;
    for i in 0..test.len() {
        let logits = task.logits(w, test.row(i))?;
        let mut best = 0usize;
        for (c, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = c;
            }
        }
        if best == test.label(i) {
            correct += 1;
        }
    }
    Ok((loss, correct as f64 / test.len() as f64))
}

struct ServerState {
    w: ParamVector,
    guidance: Option<GuidanceState>,
    guide_cfg: Option<GuidanceConfig>,
    c_global: ParamVector,
    c_clients: Vec<ParamVector>,
}

fn run_client(
    cfg: &SimulationConfig,
    state: &ServerState,
    t: usize,
    k: usize,
    eta: f64,
) -> Result<ClientUpdate> {
    let local = &cfg.partition.client_indices[k];
    let mut stream = derive_stream(cfg.master_seed, "client", t as u64, k as u64);
    match cfg.strategy.kind {
        StrategyKind::FedAvg | StrategyKind::FedNova => local_update_sgd(
            cfg.task.as_ref(),
            &state.w,
            &cfg.train,
            local,
            &cfg.strategy,
            eta,
            &mut stream,
        ),
        StrategyKind::FedProx => local_update_prox(
            cfg.task.as_ref(),
            &state.w,
            &cfg.train,
            local,
            &cfg.strategy,
            eta,
            &mut stream,
        ),
        StrategyKind::Scaffold => local_update_scaffold(
            cfg.task.as_ref(),
            &state.w,
            &cfg.train,
            local,
            &cfg.strategy,
            eta,
            &state.c_clients[k],
            &state.c_global,
            &mut stream,
        ),
    }
}

fn run_round(cfg: &SimulationConfig, state: &mut ServerState, t: usize) -> Result<RoundMetrics> {
    let start = Instant::now();
    let n = cfg.num_clients();
    let mut sample_stream = derive_stream(cfg.master_seed, "sample", t as u64, 0);
    let sampled = sample_stream.sample_without_replacement(n, cfg.sampled_per_round);
    let eta = cfg.strategy.eta.value(t as u64);

    // Fan out; results land in sampled (ascending) order regardless of
    // worker scheduling.
    let updates: Vec<ClientUpdate> = sampled
        .par_iter()
        .map(|&k| run_client(cfg, state, t, k, eta))
        .collect::<Result<_>>()?;

    let mut w_bar = match cfg.strategy.kind {
        StrategyKind::FedNova => aggregate_fednova(&updates, &state.w, eta)?,
        _ => aggregate_mean(&updates)?,
    };

    if cfg.strategy.kind == StrategyKind::Scaffold {
        let m = updates.len() as f64;
        let mut mean_delta = ParamVector::zeros(state.w.dim());
        for (u, &k) in updates.iter().zip(&sampled) {
            mean_delta.axpy(1.0 / m, u.control_delta.as_ref().expect("scaffold delta"))?;
            state.c_clients[k] = u.new_control.clone().expect("scaffold control");
        }
        state.c_global.axpy(m / n as f64, &mean_delta)?;
    }

    let mean_local_loss =
        updates.iter().map(|u| u.final_local_loss).sum::<f64>() / updates.len() as f64;

    let mut loss_c_out = None;
    let mut loss_g_out = None;
    let mut llr_out = None;
    let mut tau_out = None;
    let mut gate_out = None;
    let mut guide_steps = 0usize;

    if let (Some(gs), Some(gc)) = (state.guidance.as_mut(), state.guide_cfg.as_ref()) {
        let loss_c = match gs.loss_c {
            None => mean_local_loss,
            Some(prev) => update_momentum_loss(prev, mean_local_loss, gc.beta),
        };
        gs.loss_c = Some(loss_c);
        let llr_val = llr(loss_c.max(LOSS_FLOOR), gs.loss_g.max(LOSS_FLOOR), gc.log_base)?;
        let open = gate_open(llr_val, gs.tau);
        if open {
            let n_g = gs.guide_data.len();
            let all: Vec<usize>;
            let gamma = gc.gamma.value(t as u64);
            for step in 0..gc.guide_steps {
                let mut gstream =
                    derive_stream(cfg.master_seed, "guide-batch", t as u64, step as u64);
                let batch = guide_batch_indices(n_g, gc.guide_batch, &mut gstream);
                w_bar = guiding_step(&w_bar, cfg.task.as_ref(), &gs.guide_data, &batch, gamma)?;
            }
            guide_steps = gc.guide_steps;
            gs.steps_taken_total += gc.guide_steps as u64;
            all = (0..n_g).collect();
            gs.loss_g = cfg.task.loss(&w_bar, &gs.guide_data, &all)?;
        }
        loss_c_out = Some(loss_c);
        loss_g_out = Some(gs.loss_g);
        llr_out = Some(llr_val);
        tau_out = Some(gs.tau);
        gate_out = Some(open);
    }

    state.w = w_bar;

    let (mut test_loss, mut test_acc) = (None, None);
    if let Some(test) = &cfg.test {
        if t % cfg.eval_every == 0 || t + 1 == cfg.rounds {
            let (l, a) = evaluate(&state.w, cfg.task.as_ref(), test)?;
            test_loss = Some(l);
            test_acc = Some(a);
        }
    }

    Ok(RoundMetrics {
        round: t,
        mean_local_loss,
        loss_c: loss_c_out,
        loss_g: loss_g_out,
        llr: llr_out,
        tau: tau_out,
        gate_open: gate_out,
        guide_steps,
        test_loss,
        test_acc,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs the full simulation: guiding-set construction and threshold
/// computation first (when configured), then the round loop.
pub fn run_simulation(cfg: &SimulationConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| run_simulation_inner(cfg))
}

fn run_simulation_inner(cfg: &SimulationConfig) -> Result<RunOutput> {
    let w0 = cfg
        .init_params
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(cfg.task.param_dim()));

    let mut state = ServerState {
        w: w0.clone(),
        guidance: None,
        guide_cfg: None,
        c_global: ParamVector::zeros(cfg.task.param_dim()),
        c_clients: vec![ParamVector::zeros(cfg.task.param_dim()); cfg.num_clients()],
    };

    let mut tau_report = None;
    if let Some(setup) = &cfg.guidance {
        let guide_data = match &setup.data {
            GuideData::Prebuilt(d) => d.clone(),
            GuideData::Spec(spec) => {
                let mut stream = derive_stream(cfg.master_seed, "guide-build", 0, 0);
                build_guiding_set(spec, &cfg.train, &mut stream)?
            }
        };
        let guide_feat = client_mean_feature(cfg.task.as_ref(), &w0, &guide_data)?;
        // All clients contribute to the threshold, not just eventual
        // participants.
        let taus: Vec<f64> = cfg
            .partition
            .client_indices
            .par_iter()
            .map(|idx| {
                let local = cfg.train.subset(idx)?;
                let feat = client_mean_feature(cfg.task.as_ref(), &w0, &local)?;
                tau_k(&feat, &guide_feat, &setup.config)
            })
            .collect::<Result<_>>()?;
        let tau = match setup.tau_override {
            Some(t) => t,
            None => tau_threshold(&taus, &setup.config)?,
        };
        let all: Vec<usize> = (0..guide_data.len()).collect();
        let loss_g = cfg.task.loss(&w0, &guide_data, &all)?;
        tau_report = Some(tau);
        state.guidance = Some(GuidanceState {
            tau,
            loss_c: None,
            loss_g,
            guide_data,
            steps_taken_total: 0,
        });
        state.guide_cfg = Some(setup.config.clone());
    }

    let mut metrics = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        metrics.push(run_round(cfg, &mut state, t)?);
    }

    Ok(RunOutput {
        metrics,
        final_params: state.w,
        tau: tau_report,
    })
}

/// Ablation baseline: spend `pretrain_steps` full-batch steps on the
/// guiding data alone, then run the base strategy with guidance disabled
/// from the pretrained model.
pub fn run_offline_pretrain(cfg: &SimulationConfig, pretrain_steps: usize) -> Result<RunOutput> {
    let setup = cfg
        .guidance
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("offline pretraining needs guidance configured".into()))?;
    cfg.validate()?;
    let guide_data = match &setup.data {
        GuideData::Prebuilt(d) => d.clone(),
        GuideData::Spec(spec) => {
            let mut stream = derive_stream(cfg.master_seed, "guide-build", 0, 0);
            build_guiding_set(spec, &cfg.train, &mut stream)?
        }
    };
    let mut w = cfg
        .init_params
        .clone()
        .unwrap_or_else(|| ParamVector::zeros(cfg.task.param_dim()));
    let all: Vec<usize> = (0..guide_data.len()).collect();
    for s in 0..pretrain_steps {
        let gamma = setup.config.gamma.value(s as u64);
        w = guiding_step(&w, cfg.task.as_ref(), &guide_data, &all, gamma)?;
    }
    let mut plain = cfg.clone();
    plain.guidance = None;
    plain.init_params = Some(w);
    run_simulation(&plain)
}

/// Mean test accuracy over the final `tail_window` evaluated rounds.
pub fn tail_window_score(metrics: &[RoundMetrics], tail_window: usize) -> Option<f64> {
    let evaluated: Vec<f64> = metrics.iter().filter_map(|m| m.test_acc).collect();
    if evaluated.is_empty() {
        return None;
    }
    let take = tail_window.min(evaluated.len());
    Some(evaluated[evaluated.len() - take..].iter().sum::<f64>() / take as f64)
}

/// Mean training loss over the final `tail_window` rounds.
pub fn tail_window_train_loss(metrics: &[RoundMetrics], tail_window: usize) -> Option<f64> {
    if metrics.is_empty() {
        return None;
    }
    let take = tail_window.min(metrics.len());
    Some(
        metrics[metrics.len() - take..]
            .iter()
            .map(|m| m.mean_local_loss)
            .sum::<f64>()
            / take as f64,
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Serializes metrics with the fixed header; floats use the shortest
/// round-trip representation so identical runs produce identical bytes.
pub fn render_metrics_csv(metrics: &[RoundMetrics]) -> String {
    let mut out = String::from(
        "round,mean_local_loss,loss_c,loss_g,llr,tau,gate_open,guide_steps,test_loss,test_acc,wall_ms\n",
    );
    for m in metrics {
        let gate = m
            .gate_open
            .map(|g| if g { "1" } else { "0" }.to_string())
            .unwrap_or_default();
        let guide_steps = if m.gate_open.is_some() {
            m.guide_steps.to_string()
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            m.round,
            m.mean_local_loss,
            fmt_opt(m.loss_c),
            fmt_opt(m.loss_g),
            fmt_opt(m.llr),
            fmt_opt(m.tau),
            gate,
            guide_steps,
            fmt_opt(m.test_loss),
            fmt_opt(m.test_acc),
            m.wall_ms,
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(render_metrics_csv(metrics).as_bytes())?;
    Ok(())
}

/// Strips the environment-dependent wall_ms column; determinism
/// comparisons use this view.
pub fn metrics_csv_without_wall(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .map(|l| format!("{l}\n"))
        .collect()
}
