//! Flat key=value run configuration: parsing, defaults, and construction
//! of a ready-to-run simulation plus a replayable resolved snapshot.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::sync::Arc;

use crate::data::{
    dirichlet_partition, gen_gaussian_mixture, iid_partition, load_cifar10_bin,
    load_feature_file, sample_mixture, Dataset, GuideSource, GuidingSetSpec, MixtureSpec,
};
use crate::engine::{GuidanceSetup, GuideData, SimulationConfig};
use crate::error::{Error, Result};
use crate::guidance::GuidanceConfig;
use crate::numerics::{derive_stream, ParamVector};
use crate::objectives::{LogRegTask, MeanEstimationTask, MlpTask, Objective};
use crate::schedule::Schedule;
use crate::strategies::{StrategyConfig, StrategyKind};

const KEYS: &[&str] = &[
    "seed",
    "rounds",
    "eval_every",
    "tail_window",
    "workers",
    "clients.total",
    "clients.sampled",
    "strategy.kind",
    "strategy.local_steps",
    "strategy.batch_size",
    "strategy.mu_prox",
    "strategy.eta_stages",
    "guidance.enabled",
    "guidance.rho",
    "guidance.iota",
    "guidance.log_base",
    "guidance.beta",
    "guidance.Tg",
    "guidance.batch_size",
    "guidance.cos_floor",
    "guidance.gamma_stages",
    "guidance.tau_override",
    "guidance.overlap",
    "guidance.per_class",
    "data.kind",
    "data.classes",
    "data.dim",
    "data.per_class",
    "data.test_per_class",
    "data.spread",
    "data.shift",
    "data.path",
    "data.test_path",
    "model.kind",
    "model.hidden",
    "model.init",
    "model.init_scale",
    "partition.kind",
    "partition.alpha",
];

/// Parsed key=value pairs with the line each key appeared on.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or(Error::Config {
                line,
                msg: format!("expected key=value, got '{stripped}'"),
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key '{key}'"),
                });
            }
            if entries.contains_key(&key) {
                return Err(Error::Config {
                    line,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            entries.insert(key, (value.trim().to_string(), line));
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), (value, 0));
    }

    fn get(&self, key: &str) -> Option<&(String, usize)> {
        self.entries.get(key)
    }

    fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key)
            .map(|(v, _)| v.clone())
            .unwrap_or_else(|| default.to_string())
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => v.parse().map_err(|_| Error::Config {
                line: *line,
                msg: format!("cannot parse value '{v}' for key '{key}'"),
            }),
        }
    }

    fn parse_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => other.parse().map_err(|_| Error::Config {
                    line: *line,
                    msg: format!("cannot parse number '{v}' for key '{key}'"),
                }),
            },
        }
    }

    fn parse_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(Error::Config {
                    line: *line,
                    msg: format!("expected true/false for key '{key}', got '{v}'"),
                }),
            },
        }
    }
}

/// Fully resolved settings: every canonical key with its final value.
#[derive(Clone, Debug)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub rounds: usize,
    pub eval_every: usize,
    pub tail_window: usize,
    pub workers: usize,
    pub clients_total: usize,
    pub clients_sampled: usize,
    pub strategy: StrategyConfig,
    pub guidance_enabled: bool,
    pub guidance: GuidanceConfig,
    pub tau_override: Option<f64>,
    pub overlap: f64,
    pub guide_per_class: usize,
    pub data_kind: String,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub spread: f64,
    pub shift: f64,
    pub data_path: Option<String>,
    pub test_path: Option<String>,
    pub model_kind: String,
    pub hidden: usize,
    pub model_init: String,
    pub init_scale: f64,
    pub partition_kind: String,
    pub alpha: f64,
}

impl ResolvedConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let line_of = |key: &str| raw.get(key).map(|(_, l)| *l).unwrap_or(0);
        let strategy_kind = StrategyKind::parse(&raw.str_or("strategy.kind", "fedavg"))
            .map_err(|e| Error::Config {
                line: line_of("strategy.kind"),
                msg: e.to_string(),
            })?;
        let eta = Schedule::parse(&raw.str_or("strategy.eta_stages", "0:1e-2,100:1e-3,200:1e-4"))
            .map_err(|e| Error::Config {
                line: line_of("strategy.eta_stages"),
                msg: e.to_string(),
            })?;
        let gamma_default = eta.render();
        let gamma = Schedule::parse(&raw.str_or("guidance.gamma_stages", &gamma_default))
            .map_err(|e| Error::Config {
                line: line_of("guidance.gamma_stages"),
                msg: e.to_string(),
            })?;

        let tau_override = match raw.get("guidance.tau_override") {
            None => None,
            Some(_) => Some(raw.parse_f64("guidance.tau_override", 0.0)?),
        };

        let cfg = Self {
            seed: raw.parse_as("seed", 42u64)?,
            rounds: raw.parse_as("rounds", 300usize)?,
            eval_every: raw.parse_as("eval_every", 1usize)?,
            tail_window: raw.parse_as("tail_window", 50usize)?,
            workers: raw.parse_as("workers", 1usize)?,
            clients_total: raw.parse_as("clients.total", 100usize)?,
            clients_sampled: raw.parse_as("clients.sampled", 20usize)?,
            strategy: StrategyConfig {
                kind: strategy_kind,
                local_steps: raw.parse_as("strategy.local_steps", 5usize)?,
                batch_size: raw.parse_as("strategy.batch_size", 32usize)?,
                mu_prox: raw.parse_f64("strategy.mu_prox", 0.0)?,
                eta,
            },
            guidance_enabled: raw.parse_bool("guidance.enabled", false)?,
            guidance: GuidanceConfig {
                rho: raw.parse_f64("guidance.rho", 2.0)?,
                iota: raw.parse_f64("guidance.iota", -0.5)?,
                log_base: raw.parse_f64("guidance.log_base", 2.0)?,
                beta: raw.parse_f64("guidance.beta", 0.9)?,
                guide_steps: raw.parse_as("guidance.Tg", 1usize)?,
                gamma,
                cos_floor: raw.parse_f64("guidance.cos_floor", 1e-6)?,
                guide_batch: raw.parse_as("guidance.batch_size", 64usize)?,
            },
            tau_override,
            overlap: raw.parse_f64("guidance.overlap", 1.0)?,
            guide_per_class: raw.parse_as("guidance.per_class", 0usize)?,
            data_kind: raw.str_or("data.kind", "mixture"),
            classes: raw.parse_as("data.classes", 10usize)?,
            dim: raw.parse_as("data.dim", 20usize)?,
            per_class: raw.parse_as("data.per_class", 100usize)?,
            test_per_class: raw.parse_as("data.test_per_class", 25usize)?,
            spread: raw.parse_f64("data.spread", 1.0)?,
            shift: raw.parse_f64("data.shift", 3.0)?,
            data_path: raw.get("data.path").map(|(v, _)| v.clone()),
            test_path: raw.get("data.test_path").map(|(v, _)| v.clone()),
            model_kind: raw.str_or("model.kind", "logreg"),
            hidden: raw.parse_as("model.hidden", 16usize)?,
            model_init: raw.str_or("model.init", "auto"),
            init_scale: raw.parse_f64("model.init_scale", 0.1)?,
            partition_kind: raw.str_or("partition.kind", "dirichlet"),
            alpha: raw.parse_f64("partition.alpha", 0.1)?,
        };
        if !["mixture", "cifar10", "features"].contains(&cfg.data_kind.as_str()) {
            return Err(Error::Config {
                line: line_of("data.kind"),
                msg: format!("unknown data.kind '{}'", cfg.data_kind),
            });
        }
        if !["logreg", "mlp", "mean"].contains(&cfg.model_kind.as_str()) {
            return Err(Error::Config {
                line: line_of("model.kind"),
                msg: format!("unknown model.kind '{}'", cfg.model_kind),
            });
        }
        if !["dirichlet", "iid"].contains(&cfg.partition_kind.as_str()) {
            return Err(Error::Config {
                line: line_of("partition.kind"),
                msg: format!("unknown partition.kind '{}'", cfg.partition_kind),
            });
        }
        if !["auto", "zeros", "random"].contains(&cfg.model_init.as_str()) {
            return Err(Error::Config {
                line: line_of("model.init"),
                msg: format!("unknown model.init '{}'", cfg.model_init),
            });
        }
        Ok(cfg)
    }

    fn load_train(&self) -> Result<Dataset> {
        match self.data_kind.as_str() {
            "mixture" => {
                let mut stream = derive_stream(self.seed, "dataset", 0, 0);
                gen_gaussian_mixture(
                    self.classes,
                    self.dim,
                    self.per_class,
                    self.spread,
                    self.shift,
                    &mut stream,
                )
            }
            kind => {
                let path = self.data_path.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("data.path required for file-backed datasets".into())
                })?;
                if kind == "cifar10" {
                    load_cifar10_bin(std::path::Path::new(path))
                } else {
                    load_feature_file(std::path::Path::new(path))
                }
            }
        }
    }

    fn load_test(&self) -> Result<Option<Dataset>> {
        if self.data_kind == "mixture" {
            if self.test_per_class == 0 {
                return Ok(None);
            }
            // same class means as the training mixture, fresh draws
            let mut mean_stream = derive_stream(self.seed, "dataset", 0, 0);
            let mut spec = MixtureSpec::random(self.classes, self.dim, self.shift, &mut mean_stream);
            spec.spread = self.spread;
            let mut stream = derive_stream(self.seed, "testset", 0, 0);
            return Ok(Some(sample_mixture(&spec, self.test_per_class, &mut stream)?));
        }
        match &self.test_path {
            None => Ok(None),
            Some(path) => {
                let p = std::path::Path::new(path);
                Ok(Some(if self.data_kind == "cifar10" {
                    load_cifar10_bin(p)?
                } else {
                    load_feature_file(p)?
                }))
            }
        }
    }

    fn build_task(&self, train: &Dataset) -> Result<Arc<dyn Objective>> {
        let k = train.num_classes();
        let d = train.dim();
        Ok(match self.model_kind.as_str() {
            "logreg" => Arc::new(LogRegTask::new(k, d)?),
            "mlp" => Arc::new(MlpTask::new(d, self.hidden, k)?),
            _ => Arc::new(MeanEstimationTask::new(d)),
        })
    }

    fn init_params(&self, task: &dyn Objective) -> Result<Option<ParamVector>> {
        let random = match self.model_init.as_str() {
            "zeros" => false,
            "random" => true,
            // zero-initialized MLPs have zero-norm hidden features, which
            // the similarity threshold rejects
            _ => self.model_kind == "mlp",
        };
        if !random {
            return Ok(None);
        }
        let mut stream = derive_stream(self.seed, "init", 0, 0);
        Ok(Some(ParamVector::new(
            (0..task.param_dim())
                .map(|_| self.init_scale * stream.standard_normal())
                .collect(),
        )?))
    }

    /// Materializes data, partition, task, and engine configuration.
    pub fn build(&self) -> Result<SimulationConfig> {
        let train = self.load_train()?;
        let test = self.load_test()?;
        let mut pstream = derive_stream(self.seed, "partition", 0, 0);
        let partition = match self.partition_kind.as_str() {
            "iid" => iid_partition(train.labels(), self.clients_total, &mut pstream)?,
            _ => dirichlet_partition(
                train.labels(),
                self.clients_total,
                self.alpha,
                &mut pstream,
            )?,
        };
        let task = self.build_task(&train)?;
        let init_params = self.init_params(task.as_ref())?;

        let guidance = if self.guidance_enabled {
            let per_class = if self.guide_per_class > 0 {
                self.guide_per_class
            } else {
                // default guiding size: twice one client's mean share,
                // split evenly across classes
                let mean_client = train.len() as f64 / self.clients_total as f64;
                ((2.0 * mean_client / train.num_classes() as f64).round() as usize).max(1)
            };
            let source = if self.data_kind == "mixture" {
                GuideSource::Synthetic {
                    spread: self.spread,
                    shift: self.shift,
                }
            } else {
                GuideSource::Features(train.clone())
            };
            Some(GuidanceSetup {
                config: self.guidance.clone(),
                data: GuideData::Spec(GuidingSetSpec {
                    overlap: self.overlap,
                    per_class,
                    source,
                }),
                tau_override: self.tau_override,
            })
        } else {
            None
        };

        Ok(SimulationConfig {
            task,
            train,
            test,
            partition,
            strategy: self.strategy.clone(),
            guidance,
            sampled_per_round: self.clients_sampled,
            rounds: self.rounds,
            master_seed: self.seed,
            eval_every: self.eval_every,
            tail_window: self.tail_window,
            workers: self.workers,
            init_params,
        })
    }

    /// Snapshot with every canonical key; parsing it back reproduces the
    /// run exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("seed", self.seed.to_string());
        put("rounds", self.rounds.to_string());
        put("eval_every", self.eval_every.to_string());
        put("tail_window", self.tail_window.to_string());
        put("workers", self.workers.to_string());
        put("clients.total", self.clients_total.to_string());
        put("clients.sampled", self.clients_sampled.to_string());
        put("strategy.kind", self.strategy.kind.name().to_string());
        put("strategy.local_steps", self.strategy.local_steps.to_string());
        put("strategy.batch_size", self.strategy.batch_size.to_string());
        put("strategy.mu_prox", self.strategy.mu_prox.to_string());
        put("strategy.eta_stages", self.strategy.eta.render());
        put("guidance.enabled", self.guidance_enabled.to_string());
        put("guidance.rho", self.guidance.rho.to_string());
        put("guidance.iota", self.guidance.iota.to_string());
        put("guidance.log_base", self.guidance.log_base.to_string());
        put("guidance.beta", self.guidance.beta.to_string());
        put("guidance.Tg", self.guidance.guide_steps.to_string());
        put("guidance.batch_size", self.guidance.guide_batch.to_string());
        put("guidance.cos_floor", self.guidance.cos_floor.to_string());
        put("guidance.gamma_stages", self.guidance.gamma.render());
        if let Some(t) = self.tau_override {
            let rendered = if t == f64::INFINITY {
                "inf".to_string()
            } else if t == f64::NEG_INFINITY {
                "-inf".to_string()
            } else {
                t.to_string()
            };
            put("guidance.tau_override", rendered);
        }
        put("guidance.overlap", self.overlap.to_string());
        put("guidance.per_class", self.guide_per_class.to_string());
        put("data.kind", self.data_kind.clone());
        put("data.classes", self.classes.to_string());
        put("data.dim", self.dim.to_string());
        put("data.per_class", self.per_class.to_string());
        put("data.test_per_class", self.test_per_class.to_string());
        put("data.spread", self.spread.to_string());
        put("data.shift", self.shift.to_string());
        if let Some(p) = &self.data_path {
            put("data.path", p.clone());
        }
        if let Some(p) = &self.test_path {
            put("data.test_path", p.clone());
        }
        put("model.kind", self.model_kind.clone());
        put("model.hidden", self.hidden.to_string());
        put("model.init", self.model_init.clone());
        put("model.init_scale", self.init_scale.to_string());
        put("partition.kind", self.partition_kind.clone());
        put("partition.alpha", self.alpha.to_string());
        s
    }
}
