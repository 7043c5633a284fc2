use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedegg::config::{RawConfig, ResolvedConfig};
use fedegg::engine::{
    run_offline_pretrain, run_simulation, tail_window_score, tail_window_train_loss,
    write_metrics_csv, RunOutput,
};
use fedegg::error::{Error, Result};
use fedegg::numerics::derive_stream;
use fedegg::theory::{evaluate_instance, random_instance, write_theory_csv, TheoryRow};

#[derive(Parser)]
#[command(
    name = "fedegg",
    about = "Deterministic federated-learning simulator with a gated server-side guiding task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRun {
    /// Path to a key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread override (never changes results).
    #[arg(long)]
    workers: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation: metrics CSV plus a replayable config snapshot.
    Run {
        #[command(flatten)]
        common: CommonRun,
    },
    /// One run per gate-threshold override, with a tail-score summary.
    SweepTau {
        #[command(flatten)]
        common: CommonRun,
        /// Comma-separated threshold overrides (inf / -inf allowed).
        #[arg(long)]
        taus: String,
    },
    /// One run per Dirichlet concentration, with a tail-score summary.
    SweepAlpha {
        #[command(flatten)]
        common: CommonRun,
        #[arg(long)]
        alphas: String,
    },
    /// One run per participation rate (fraction of clients per round).
    SweepParticipation {
        #[command(flatten)]
        common: CommonRun,
        #[arg(long)]
        rates: String,
    },
    /// Randomized one-step bound verification; nonzero exit on violation.
    VerifyTheory {
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        instances: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Per-client label histograms for a Dirichlet partition.
    PartitionStats {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        clients: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        force: bool,
    },
    /// Paired comparison: guided training vs pretraining on the guide set.
    OfflineVsOnline {
        #[command(flatten)]
        common: CommonRun,
        #[arg(long, default_value_t = 50)]
        pretrain_steps: usize,
    },
}

fn guarded(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidConfig(format!(
            "refusing to overwrite {} (pass --force)",
            path.display()
        )));
    }
    Ok(())
}

fn write_guarded(path: &Path, force: bool, contents: &str) -> Result<()> {
    guarded(path, force)?;
    std::fs::write(path, contents)?;
    Ok(())
}

fn load_config(common: &CommonRun) -> Result<ResolvedConfig> {
    let text = std::fs::read_to_string(&common.config)?;
    let raw = RawConfig::parse(&text)?;
    let mut cfg = ResolvedConfig::from_raw(&raw)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run_one(cfg: &ResolvedConfig) -> Result<RunOutput> {
    let sim = cfg.build()?;
    run_simulation(&sim)
}

fn write_run(dir: &Path, name: &str, force: bool, out: &RunOutput) -> Result<()> {
    let path = dir.join(name);
    guarded(&path, force)?;
    write_metrics_csv(&path, &out.metrics)?;
    Ok(())
}

fn cmd_run(common: &CommonRun) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    write_guarded(&common.out.join("resolved_config.txt"), common.force, &cfg.render())?;
    let out = run_one(&cfg)?;
    write_run(&common.out, "metrics.csv", common.force, &out)?;
    if let Some(tau) = out.tau {
        println!("tau={tau}");
    }
    if let Some(acc) = tail_window_score(&out.metrics, cfg.tail_window) {
        println!("tail_acc={acc}");
    }
    Ok(())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| match v.trim() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad {what} value '{other}'"))),
        })
        .collect()
}

fn sweep<F>(common: &CommonRun, values: &[f64], label: &str, mut apply: F) -> Result<()>
where
    F: FnMut(&mut ResolvedConfig, f64),
{
    let base = load_config(common)?;
    prepare_out(&common.out)?;
    write_guarded(&common.out.join("resolved_config.txt"), common.force, &base.render())?;
    let mut summary = format!("{label},tail_train_loss,tail_acc\n");
    for (i, &v) in values.iter().enumerate() {
        let mut cfg = base.clone();
        apply(&mut cfg, v);
        let out = run_one(&cfg)?;
        write_run(&common.out, &format!("metrics_{i}.csv"), common.force, &out)?;
        let loss = tail_window_train_loss(&out.metrics, cfg.tail_window).unwrap_or(f64::NAN);
        let acc = tail_window_score(&out.metrics, cfg.tail_window)
            .map(|a| a.to_string())
            .unwrap_or_default();
        summary.push_str(&format!("{v},{loss},{acc}\n"));
    }
    write_guarded(&common.out.join("summary.csv"), common.force, &summary)?;
    Ok(())
}

fn cmd_verify_theory(
    trials: usize,
    instances: u64,
    out_dir: &Path,
    seed: u64,
    force: bool,
) -> Result<bool> {
    prepare_out(out_dir)?;
    write_guarded(
        &out_dir.join("resolved_config.txt"),
        force,
        &format!("trials={trials}\ninstances={instances}\nseed={seed}\n"),
    )?;
    let mut rows: Vec<TheoryRow> = Vec::with_capacity(instances as usize);
    let mut violations = 0usize;
    for id in 0..instances {
        let inst = random_instance(id, seed)?;
        let row = evaluate_instance(&inst, trials.max(1), seed)?;
        if !row.holds {
            violations += 1;
        }
        rows.push(row);
    }
    let csv_path = out_dir.join("theory.csv");
    guarded(&csv_path, force)?;
    write_theory_csv(&csv_path, &rows)?;
    println!(
        "instances={} violations={} {}",
        instances,
        violations,
        if violations == 0 { "PASS" } else { "FAIL" }
    );
    Ok(violations == 0)
}

fn cmd_partition_stats(
    alpha: f64,
    clients: usize,
    classes: usize,
    per_class: usize,
    out_dir: &Path,
    seed: u64,
    force: bool,
) -> Result<()> {
    prepare_out(out_dir)?;
    write_guarded(
        &out_dir.join("resolved_config.txt"),
        force,
        &format!(
            "alpha={alpha}\nclients={clients}\nclasses={classes}\nper_class={per_class}\nseed={seed}\n"
        ),
    )?;
    let labels: Vec<usize> = (0..classes)
        .flat_map(|c| std::iter::repeat(c).take(per_class))
        .collect();
    let mut stream = derive_stream(seed, "partition", 0, 0);
    let partition = fedegg::data::dirichlet_partition(&labels, clients, alpha, &mut stream)?;
    let mut csv = String::from("client,total");
    for c in 0..classes {
        csv.push_str(&format!(",class_{c}"));
    }
    csv.push_str(",max_share\n");
    for (k, idx) in partition.client_indices.iter().enumerate() {
        let mut counts = vec![0usize; classes];
        for &i in idx {
            counts[labels[i]] += 1;
        }
        let max = counts.iter().copied().max().unwrap_or(0);
        csv.push_str(&format!("{k},{}", idx.len()));
        for c in counts {
            csv.push_str(&format!(",{c}"));
        }
        csv.push_str(&format!(",{}\n", max as f64 / idx.len().max(1) as f64));
    }
    write_guarded(&out_dir.join("partition.csv"), force, &csv)?;
    Ok(())
}

fn cmd_offline_vs_online(common: &CommonRun, pretrain_steps: usize) -> Result<()> {
    let cfg = load_config(common)?;
    prepare_out(&common.out)?;
    write_guarded(&common.out.join("resolved_config.txt"), common.force, &cfg.render())?;
    let sim = cfg.build()?;
    let online = run_simulation(&sim)?;
    let offline = run_offline_pretrain(&sim, pretrain_steps)?;
    write_run(&common.out, "metrics_online.csv", common.force, &online)?;
    write_run(&common.out, "metrics_offline.csv", common.force, &offline)?;
    let mut summary = String::from("variant,tail_train_loss,tail_acc\n");
    for (name, out) in [("online", &online), ("offline", &offline)] {
        let loss = tail_window_train_loss(&out.metrics, cfg.tail_window).unwrap_or(f64::NAN);
        let acc = tail_window_score(&out.metrics, cfg.tail_window)
            .map(|a| a.to_string())
            .unwrap_or_default();
        summary.push_str(&format!("{name},{loss},{acc}\n"));
    }
    write_guarded(&common.out.join("summary.csv"), common.force, &summary)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common } => cmd_run(&common).map(|_| true),
        Command::SweepTau { common, taus } => {
            let values = parse_list(&taus, "tau")?;
            sweep(&common, &values, "tau", |cfg, v| {
                cfg.guidance_enabled = true;
                cfg.tau_override = Some(v);
            })
            .map(|_| true)
        }
        Command::SweepAlpha { common, alphas } => {
            let values = parse_list(&alphas, "alpha")?;
            sweep(&common, &values, "alpha", |cfg, v| {
                cfg.partition_kind = "dirichlet".to_string();
                cfg.alpha = v;
            })
            .map(|_| true)
        }
        Command::SweepParticipation { common, rates } => {
            let values = parse_list(&rates, "rate")?;
            sweep(&common, &values, "rate", |cfg, v| {
                let m = ((cfg.clients_total as f64 * v).round() as usize)
                    .clamp(1, cfg.clients_total);
                cfg.clients_sampled = m;
            })
            .map(|_| true)
        }
        Command::VerifyTheory {
            trials,
            instances,
            out,
            seed,
            force,
        } => cmd_verify_theory(trials, instances, &out, seed, force),
        Command::PartitionStats {
            alpha,
            clients,
            classes,
            per_class,
            out,
            seed,
            force,
        } => cmd_partition_stats(alpha, clients, classes, per_class, &out, seed, force)
            .map(|_| true),
        Command::OfflineVsOnline {
            common,
            pretrain_steps,
        } => cmd_offline_vs_online(&common, pretrain_steps).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
