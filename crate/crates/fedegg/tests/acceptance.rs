//! End-to-end acceptance suite. Each numbered check prints one PASS/FAIL
//! line (visible with --nocapture); the test fails if any check fails or
//! blows its runtime budget.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fedegg::data::{
    dirichlet_partition, mean_max_class_share, sample_mixture, GuideSource, GuidingSetSpec,
    MixtureSpec,
};
use fedegg::engine::{
    metrics_csv_without_wall, render_metrics_csv, run_offline_pretrain, run_simulation,
    tail_window_score, tail_window_train_loss, GuidanceSetup, GuideData, RoundMetrics, RunOutput,
    SimulationConfig,
};
use fedegg::guidance::GuidanceConfig;
use fedegg::numerics::{derive_stream, ParamVector};
use fedegg::objectives::{
    finite_diff_grad, grad_relative_error, spd_from_spectrum, LogRegTask, MlpTask, Objective,
    QuadraticTask,
};
use fedegg::schedule::Schedule;
use fedegg::strategies::{StrategyConfig, StrategyKind};
use fedegg::theory::{
    epsilon, evaluate_instance, one_step_experiment, random_instance, worked_example, TheoryParams,
};

struct Report {
    lines: Vec<String>,
    failures: usize,
}

impl Report {
    fn new() -> Self {
        Self {
            lines: Vec::new(),
            failures: 0,
        }
    }

    fn record(&mut self, name: &str, pass: bool, elapsed: Duration, detail: String) {
        let status = if pass { "PASS" } else { "FAIL" };
        let line = if detail.is_empty() {
            format!("{name}: {status} ({:.2}s)", elapsed.as_secs_f64())
        } else {
            format!("{name}: {status} ({:.2}s) {detail}", elapsed.as_secs_f64())
        };
        println!("{line}");
        if !pass {
            self.failures += 1;
        }
        self.lines.push(line);
    }
}

/// Desk-scale guided-learning benchmark: 10-class Gaussian mixture in 20
/// dimensions whose class means share a common component (mirroring the
/// shared low-level statistics of natural images), split over 20 clients
/// by Dir(0.1), trained with multinomial logistic regression.
fn bench_config(seed: u64, overlap: Option<f64>, rounds: usize) -> SimulationConfig {
    let mut ds = derive_stream(seed, "bench-data", 0, 0);
    let base: Vec<f64> = (0..20).map(|_| 3.0 * ds.standard_normal()).collect();
    let means: Vec<Vec<f64>> = (0..10)
        .map(|_| base.iter().map(|b| b + 1.5 * ds.standard_normal()).collect())
        .collect();
    let spec = MixtureSpec { means, spread: 1.0 };
    let train = sample_mixture(&spec, 100, &mut ds).unwrap();
    let mut ts = derive_stream(seed, "bench-test", 0, 0);
    let test = sample_mixture(&spec, 25, &mut ts).unwrap();
    let mut ps = derive_stream(seed, "bench-part", 0, 0);
    let partition = dirichlet_partition(train.labels(), 20, 0.1, &mut ps).unwrap();
    let task: Arc<dyn Objective> = Arc::new(LogRegTask::new(10, 20).unwrap());
    let guidance = overlap.map(|o| GuidanceSetup {
        config: GuidanceConfig {
            gamma: Schedule::constant(0.1),
            guide_steps: 10,
            guide_batch: 0,
            ..GuidanceConfig::default()
        },
        data: GuideData::Spec(GuidingSetSpec {
            overlap: o,
            per_class: 10,
            source: GuideSource::Synthetic {
                spread: 1.0,
                shift: 1.5,
            },
        }),
        tau_override: None,
    });
    SimulationConfig {
        task,
        train,
        test: Some(test),
        partition,
        strategy: StrategyConfig {
            batch_size: 32,
            eta: Schedule::constant(0.05),
            ..StrategyConfig::default()
        },
        guidance,
        sampled_per_round: 20,
        rounds,
        master_seed: seed,
        eval_every: 1,
        tail_window: 50,
        workers: 0,
        init_params: None,
    }
}

/// Small 4-class mixture over 8 clients used by the exactness checks.
fn small_config(seed: u64, kind: StrategyKind, rounds: usize) -> SimulationConfig {
    let mut ds = derive_stream(seed, "small-data", 0, 0);
    let mut spec = MixtureSpec::random(4, 6, 3.0, &mut ds);
    spec.spread = 1.0;
    let train = sample_mixture(&spec, 40, &mut ds).unwrap();
    let mut ts = derive_stream(seed, "small-test", 0, 0);
    let test = sample_mixture(&spec, 10, &mut ts).unwrap();
    let mut ps = derive_stream(seed, "small-part", 0, 0);
    let partition = dirichlet_partition(train.labels(), 8, 0.5, &mut ps).unwrap();
    let task: Arc<dyn Objective> = Arc::new(LogRegTask::new(4, 6).unwrap());
    SimulationConfig {
        task,
        train,
        test: Some(test),
        partition,
        strategy: StrategyConfig {
            kind,
            batch_size: 16,
            eta: Schedule::constant(0.05),
            ..StrategyConfig::default()
        },
        guidance: None,
        sampled_per_round: 4,
        rounds,
        master_seed: seed,
        eval_every: 5,
        tail_window: 10,
        workers: 0,
        init_params: None,
    }
}

fn trajectories_match(a: &RunOutput, b: &RunOutput) -> bool {
    a.metrics.len() == b.metrics.len()
        && a.metrics
            .iter()
            .zip(&b.metrics)
            .all(|(x, y)| x.mean_local_loss.to_bits() == y.mean_local_loss.to_bits())
        && a.final_params
            .as_slice()
            .iter()
            .zip(b.final_params.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn csv_sans_wall(out: &RunOutput) -> String {
    metrics_csv_without_wall(&render_metrics_csv(&out.metrics))
}

fn check_bound_suite(report: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut ok = true;
    for id in 0..1000u64 {
        let inst = random_instance(id, 42).unwrap();
        let row = evaluate_instance(&inst, 1, 42).unwrap();
        let slack = row.delta_fedegg - row.delta_fedavg - row.epsilon;
        worst = worst.max(slack);
        if slack > 1e-9 {
            ok = false;
        }
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed < Duration::from_secs(10);
    report.record(
        "01 one-step bound, 1000 random noiseless instances",
        ok && in_budget,
        elapsed,
        format!("worst slack {worst:.3e}"),
    );
}

fn check_stochastic_bound(report: &mut Report) {
    let t0 = Instant::now();
    let pair = worked_example().unwrap();
    let w_t = ParamVector::zeros(1);
    let mut ok = true;
    let mut detail = String::new();
    for sigma_g in [0.5, 1.0] {
        let p = TheoryParams {
            mu: 1.0,
            l: 1.0,
            gamma: 0.1,
            eta: 0.1,
            sigma_g,
            sigma_k: vec![0.0, 0.0],
        };
        let r = one_step_experiment(&pair, &p, &w_t, 100_000, 42).unwrap();
        if !r.holds {
            ok = false;
        }
        detail.push_str(&format!(
            "sigma_g={sigma_g}: lhs {:.5} rhs {:.5}; ",
            r.delta_fedegg,
            r.delta_fedavg + r.epsilon_closed + 3.0 * r.stderr
        ));
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed < Duration::from_secs(30);
    report.record(
        "02 stochastic one-step bound, 1e5 trials",
        ok && in_budget,
        elapsed,
        detail,
    );
}

fn check_worked_constants(report: &mut Report) {
    let t0 = Instant::now();
    let p = TheoryParams {
        mu: 1.0,
        l: 1.0,
        gamma: 0.1,
        eta: 0.1,
        sigma_g: 0.0,
        sigma_k: vec![0.0, 0.0],
    };
    let eps = epsilon(&p, 0.5, -1.5);
    let pair = worked_example().unwrap();
    let r = one_step_experiment(&pair, &p, &ParamVector::zeros(1), 1, 42).unwrap();
    let ok = (eps - 0.28).abs() <= 1e-12
        && (r.delta_fedegg - 0.04).abs() <= 1e-12
        && r.delta_fedavg == 0.0
        && (r.epsilon_closed - 0.28).abs() <= 1e-12;
    report.record(
        "03 worked example constants (epsilon 0.28, distances 0.04 / 0.0)",
        ok,
        t0.elapsed(),
        format!(
            "epsilon {eps:.17}, guided {:.17}, plain {}",
            r.delta_fedegg, r.delta_fedavg
        ),
    );
}

fn check_disabled_guidance(report: &mut Report, pool: &mut Vec<RoundMetrics>) {
    let t0 = Instant::now();
    // Two independently built plain runs must agree byte for byte.
    let plain_a = run_simulation(&small_config(7, StrategyKind::FedAvg, 30)).unwrap();
    let plain_b = run_simulation(&small_config(7, StrategyKind::FedAvg, 30)).unwrap();
    let bytes_ok = csv_sans_wall(&plain_a) == csv_sans_wall(&plain_b);

    // A zero-rate guiding task applied on every round must leave the
    // trajectory untouched.
    let mut guided_cfg = small_config(7, StrategyKind::FedAvg, 30);
    guided_cfg.guidance = Some(GuidanceSetup {
        config: GuidanceConfig {
            gamma: Schedule::constant(0.0),
            ..GuidanceConfig::default()
        },
        data: GuideData::Spec(GuidingSetSpec {
            overlap: 1.0,
            per_class: 10,
            source: GuideSource::Synthetic {
                spread: 1.0,
                shift: 3.0,
            },
        }),
        tau_override: Some(f64::INFINITY),
    });
    let guided = run_simulation(&guided_cfg).unwrap();
    let traj_ok = trajectories_match(&plain_a, &guided);
    let every_round_gated = guided.metrics.iter().all(|m| m.gate_open == Some(true));

    pool.extend(plain_a.metrics.iter().cloned());
    pool.extend(guided.metrics.iter().cloned());
    report.record(
        "04 disabled and zero-rate guidance reduce to the plain run",
        bytes_ok && traj_ok && every_round_gated,
        t0.elapsed(),
        String::new(),
    );
}

fn check_reduction_chain(report: &mut Report, pool: &mut Vec<RoundMetrics>) {
    let t0 = Instant::now();
    let avg = run_simulation(&small_config(11, StrategyKind::FedAvg, 20)).unwrap();

    let mut prox_cfg = small_config(11, StrategyKind::FedProx, 20);
    prox_cfg.strategy.mu_prox = 0.0;
    let prox = run_simulation(&prox_cfg).unwrap();

    let nova = run_simulation(&small_config(11, StrategyKind::FedNova, 20)).unwrap();

    let avg1 = run_simulation(&small_config(11, StrategyKind::FedAvg, 1)).unwrap();
    let scaffold1 = run_simulation(&small_config(11, StrategyKind::Scaffold, 1)).unwrap();

    let ok = trajectories_match(&avg, &prox)
        && trajectories_match(&avg, &nova)
        && trajectories_match(&avg1, &scaffold1);
    pool.extend(avg.metrics.iter().cloned());
    pool.extend(prox.metrics.iter().cloned());
    pool.extend(nova.metrics.iter().cloned());
    pool.extend(scaffold1.metrics.iter().cloned());
    report.record(
        "05 baselines reduce to plain averaging bitwise (prox mu=0, nova equal steps, scaffold round 1)",
        ok,
        t0.elapsed(),
        String::new(),
    );
}

fn check_gradients(report: &mut Report) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut stream = derive_stream(5, "acc-grad", 0, 0);

    // random 4-d quadratic
    let eigs: Vec<f64> = (0..4).map(|_| 0.5 + 2.5 * stream.uniform()).collect();
    let a = spd_from_spectrum(&eigs, &mut stream);
    let b: Vec<f64> = (0..4).map(|_| stream.standard_normal()).collect();
    let quad = QuadraticTask::new(a, b, 0.7).unwrap();
    for _ in 0..20 {
        let w = ParamVector::new((0..4).map(|_| 2.0 * stream.standard_normal()).collect()).unwrap();
        let (_, g) = quad.loss_grad_at(&w).unwrap();
        let fd = finite_diff_grad(|v| quad.loss_grad_at(v).unwrap().0, &w, 1e-5);
        worst = worst.max(grad_relative_error(&g, &fd));
    }

    let mut data_stream = derive_stream(6, "acc-grad-data", 0, 0);
    let spec = MixtureSpec::random(3, 5, 2.0, &mut data_stream);
    let data = sample_mixture(&spec, 15, &mut data_stream).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let tasks: Vec<Arc<dyn Objective>> = vec![
        Arc::new(LogRegTask::new(3, 5).unwrap()),
        Arc::new(MlpTask::new(5, 8, 3).unwrap()),
    ];
    for task in &tasks {
        for _ in 0..20 {
            let w = ParamVector::new(
                (0..task.param_dim())
                    .map(|_| 0.5 * stream.standard_normal())
                    .collect(),
            )
            .unwrap();
            let (_, g) = task.loss_grad(&w, &data, &idx).unwrap();
            let fd = finite_diff_grad(|v| task.loss(v, &data, &idx).unwrap(), &w, 1e-5);
            worst = worst.max(grad_relative_error(&g, &fd));
        }
    }
    report.record(
        "06 analytic gradients match finite differences (rel err < 1e-5, 20 points x 3 families)",
        worst < 1e-5,
        t0.elapsed(),
        format!("worst {worst:.3e}"),
    );
}

fn check_partitioner(report: &mut Report) {
    let t0 = Instant::now();
    let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat(c).take(100)).collect();
    let mut means = Vec::new();
    for alpha in [0.05, 1.0, 1000.0] {
        let mut total = 0.0;
        for seed in 0..20u64 {
            let mut s = derive_stream(seed, "acc-partition", 0, 0);
            let p = dirichlet_partition(&labels, 100, alpha, &mut s).unwrap();
            total += mean_max_class_share(&labels, &p);
        }
        means.push(total / 20.0);
    }
    let ok = means[0] >= 0.8
        && (means[2] - 0.1).abs() <= 0.05
        && means[0] > means[1]
        && means[1] > means[2];
    report.record(
        "07 Dirichlet concentration (alpha 0.05 / 1 / 1000 over 20 seeds)",
        ok,
        t0.elapsed(),
        format!(
            "max-class share {:.3} / {:.3} / {:.3}",
            means[0], means[1], means[2]
        ),
    );
}

struct BenchRuns {
    guided: Vec<RunOutput>,
}

fn check_direction_of_effect(report: &mut Report, pool: &mut Vec<RoundMetrics>) -> BenchRuns {
    let t0 = Instant::now();
    let mut faster = 0;
    let mut acc_ok = 0;
    let mut guided_runs = Vec::new();
    let mut details = Vec::new();
    for seed in 0..10u64 {
        let avg = run_simulation(&bench_config(seed, None, 150)).unwrap();
        let egg = run_simulation(&bench_config(seed, Some(1.0), 150)).unwrap();
        let target = avg.metrics.last().unwrap().mean_local_loss;
        let r_a = avg
            .metrics
            .iter()
            .position(|m| m.mean_local_loss <= target)
            .unwrap();
        let r_e = egg
            .metrics
            .iter()
            .position(|m| m.mean_local_loss <= target)
            .unwrap_or(usize::MAX);
        if r_e < r_a {
            faster += 1;
        }
        let acc_a = tail_window_score(&avg.metrics, 50).unwrap();
        let acc_e = tail_window_score(&egg.metrics, 50).unwrap();
        if acc_e >= acc_a - 0.005 {
            acc_ok += 1;
        }
        details.push(format!("{r_e}<{r_a}"));
        pool.extend(avg.metrics.iter().cloned());
        pool.extend(egg.metrics.iter().cloned());
        guided_runs.push(egg);
    }
    let elapsed = t0.elapsed();
    let in_budget = elapsed < Duration::from_secs(120);
    report.record(
        "08 guided runs hit the plain-run final loss earlier (10-seed benchmark)",
        faster >= 8 && acc_ok == 10 && in_budget,
        elapsed,
        format!(
            "faster in {faster}/10 [{}], tail accuracy held in {acc_ok}/10",
            details.join(", ")
        ),
    );
    BenchRuns {
        guided: guided_runs,
    }
}

fn check_tau_ordering(report: &mut Report) {
    let t0 = Instant::now();
    let mut ok = true;
    let mut detail = String::new();
    for seed in 0..10u64 {
        let mut taus = Vec::new();
        for overlap in [1.0, 0.5, 0.0] {
            let cfg = bench_config(seed, Some(overlap), 0);
            let out = run_simulation(&cfg).unwrap();
            taus.push(out.tau.unwrap());
        }
        if !(taus[0] > taus[1] && taus[1] > taus[2]) {
            ok = false;
            detail = format!("seed {seed}: {taus:?}");
        }
    }
    report.record(
        "09 threshold orders guide-set overlap (high > mixed > disjoint, 10 seeds)",
        ok,
        t0.elapsed(),
        detail,
    );
}

fn check_gate_soundness(report: &mut Report, pool: &[RoundMetrics]) {
    let t0 = Instant::now();
    let mut rows = 0usize;
    let mut ok = true;
    for m in pool {
        rows += 1;
        let opened = m.gate_open == Some(true);
        if (m.guide_steps > 0) != opened {
            ok = false;
        }
        if opened {
            match (m.llr, m.tau) {
                (Some(llr), Some(tau)) => {
                    if !(llr < tau) {
                        ok = false;
                    }
                }
                _ => ok = false,
            }
        }
    }
    report.record(
        "10 gate soundness on every recorded round",
        ok && rows > 0,
        t0.elapsed(),
        format!("{rows} rows"),
    );
}

fn check_offline_vs_online(report: &mut Report, bench: &BenchRuns) {
    let t0 = Instant::now();
    let mut online_wins = 0;
    for seed in 0..10u64 {
        let off = run_offline_pretrain(&bench_config(seed, Some(1.0), 150), 50).unwrap();
        let tl_on = tail_window_train_loss(&bench.guided[seed as usize].metrics, 50).unwrap();
        let tl_off = tail_window_train_loss(&off.metrics, 50).unwrap();
        if tl_on <= tl_off {
            online_wins += 1;
        }
    }
    report.record(
        "11 online guidance beats a 50-step offline pretrain (tail train loss)",
        online_wins >= 8,
        t0.elapsed(),
        format!("online at or below offline in {online_wins}/10"),
    );
}

fn check_cli_determinism(report: &mut Report) {
    let t0 = Instant::now();
    let bin = env!("CARGO_BIN_EXE_fedegg");
    let tmp = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cli");
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let cfg_path = tmp.join("run.cfg");
    std::fs::write(
        &cfg_path,
        "seed=11\n\
         rounds=12\n\
         eval_every=4\n\
         clients.total=10\n\
         clients.sampled=4\n\
         strategy.eta_stages=0:0.05\n\
         data.kind=mixture\n\
         data.classes=4\n\
         data.dim=6\n\
         data.per_class=30\n\
         data.test_per_class=10\n\
         guidance.enabled=true\n\
         guidance.overlap=1.0\n\
         model.kind=logreg\n\
         partition.kind=dirichlet\n\
         partition.alpha=0.5\n",
    )
    .unwrap();

    let mut csvs = Vec::new();
    let mut ran_ok = true;
    for (label, workers) in [("one", 1usize), ("many", 4)] {
        let out_dir = tmp.join(label);
        let status = Command::new(bin)
            .args([
                "run",
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--workers",
                &workers.to_string(),
            ])
            .status()
            .unwrap();
        if !status.success() {
            ran_ok = false;
        }
        let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap_or_default();
        csvs.push(metrics_csv_without_wall(&csv));
    }
    let ok = ran_ok && !csvs[0].is_empty() && csvs[0] == csvs[1];
    report.record(
        "12 CLI output identical across worker counts (wall clock excluded)",
        ok,
        t0.elapsed(),
        String::new(),
    );
}

#[test]
fn acceptance() {
    let mut report = Report::new();
    let mut pool: Vec<RoundMetrics> = Vec::new();

    check_bound_suite(&mut report);
    check_stochastic_bound(&mut report);
    check_worked_constants(&mut report);
    check_disabled_guidance(&mut report, &mut pool);
    check_reduction_chain(&mut report, &mut pool);
    check_gradients(&mut report);
    check_partitioner(&mut report);
    let bench = check_direction_of_effect(&mut report, &mut pool);
    check_tau_ordering(&mut report);
    check_gate_soundness(&mut report, &pool);
    check_offline_vs_online(&mut report, &bench);
    check_cli_determinism(&mut report);

    assert_eq!(
        report.failures,
        0,
        "acceptance failures:\n{}",
        report.lines.join("\n")
    );
}
