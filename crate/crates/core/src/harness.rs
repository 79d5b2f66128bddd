//! Experiment configuration and the evaluation grid.
//!
//! A config file is TOML:
//!
//! ```toml
//! betas = [200.0, 150.0, 100.0]
//! policies = ["random", "rr", "nearest", "fastest", "ddql"]
//! horizons = [10000.0, 100000.0]
//! seeds = [1, 2, 3, 4, 5]
//! output_dir = "results"
//! train_seed = 0            # optional
//!
//! [topology]                # optional; generated unless `file` is set
//! nodes = 20
//! clusters = 5
//! seed = 0
//! # file = "topo.toml"
//!
//! [schedule]                # optional; any TrainSchedule field overrides
//! preset = "desk"
//! total_train_steps = 15000
//!
//! [[apps]]                  # optional; defaults to one app per category
//! ```
//!
//! `FOGLB_SEEDS` (comma-separated) and `FOGLB_OUTPUT_DIR` override the
//! corresponding fields.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddql::{evaluate, moving_average, run_training, AgentKind, DdqlPolicy, TrainEnv, TrainSchedule, Trained, TrainingCurve};
use crate::des::{run_episode, EpisodeResult, EpisodeSpec};
use crate::metrics::{export_csv, write_summary, write_summary_ci, SummaryRow};
use crate::par::{self, Execution};
use crate::policies::PolicyKind;
use crate::topology::{generate_with, Topology, TopologyParams};
use crate::workload::{AppSpec, GenConfig};
use crate::{Error, Result};

pub const SEEDS_ENV: &str = "FOGLB_SEEDS";
pub const OUTPUT_DIR_ENV: &str = "FOGLB_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    /// Load this topology file instead of generating one.
    pub file: Option<PathBuf>,
    pub nodes: usize,
    pub clusters: usize,
    pub seed: u64,
    pub params: TopologyParams,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            file: None,
            nodes: 20,
            clusters: 5,
            seed: 0,
            params: TopologyParams::default(),
        }
    }
}

impl TopologyConfig {
    pub fn build(&self) -> Result<Topology> {
        match &self.file {
            Some(path) => Topology::load(path),
            None => generate_with(self.nodes, self.clusters, self.seed, &self.params),
        }
    }
}

/// A preset name plus optional per-field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub preset: Option<String>,
    pub total_train_steps: Option<u64>,
    pub decay_fraction: Option<f64>,
    pub eps_start: Option<f64>,
    pub eps_end: Option<f64>,
    pub train_period: Option<u64>,
    pub target_period: Option<u64>,
    pub batch_size: Option<usize>,
    pub gamma: Option<f64>,
    pub replay_capacity: Option<usize>,
    pub prefill: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub episode_horizon: Option<f64>,
    pub overflow_penalty: Option<f64>,
    pub overflow_capacity: Option<usize>,
}

impl ScheduleConfig {
    pub fn resolve(&self) -> Result<TrainSchedule> {
        let mut s = TrainSchedule::preset(self.preset.as_deref().unwrap_or("desk"))?;
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    s.$field = v.clone();
                })*
            };
        }
        apply!(
            total_train_steps,
            decay_fraction,
            eps_start,
            eps_end,
            train_period,
            target_period,
            batch_size,
            gamma,
            replay_capacity,
            prefill,
            learning_rate,
            hidden,
            episode_horizon,
            overflow_penalty,
            overflow_capacity
        );
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default = "AppSpec::defaults")]
    pub apps: Vec<AppSpec>,
    /// Per-application probabilities; empty means uniform.
    #[serde(default)]
    pub mix: Vec<f64>,
    pub betas: Vec<f64>,
    pub policies: Vec<String>,
    pub horizons: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Seed for agent initialisation and training episodes.
    #[serde(default)]
    pub train_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            apps: AppSpec::defaults(),
            mix: Vec::new(),
            betas: vec![200.0, 150.0, 100.0],
            policies: ["random", "rr", "nearest", "fastest", "ddql", "plrl-ed", "plrl-ql", "plrl-edql"]
                .map(String::from)
                .to_vec(),
            horizons: vec![10_000.0, 100_000.0],
            seeds: (1..=5).collect(),
            schedule: ScheduleConfig::default(),
            train_seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// Applies `FOGLB_SEEDS` / `FOGLB_OUTPUT_DIR` style overrides from `get`.
    pub fn apply_overrides(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(seeds) = get(SEEDS_ENV) {
            self.seeds = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(vec![format!("{SEEDS_ENV} must be comma-separated integers")]))?;
        }
        if let Some(dir) = get(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn policy_kinds(&self) -> Result<Vec<PolicyKind>> {
        self.policies.iter().map(|p| p.parse()).collect()
    }

    /// Every invariant violation; an empty list means the config is usable.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, empty) in [
            ("betas", self.betas.is_empty()),
            ("policies", self.policies.is_empty()),
            ("horizons", self.horizons.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                v.push(format!("{name} must not be empty"));
            }
        }
        for &beta in &self.betas {
            if !(beta > 0.0 && beta.is_finite()) {
                v.push(format!("beta must be positive, got {beta}"));
            }
        }
        v.extend(self.gen(1.0).violations(self.apps.len()));
        for &h in &self.horizons {
            if !(h > 0.0 && h.is_finite()) {
                v.push(format!("horizon must be positive, got {h}"));
            }
        }
        for p in &self.policies {
            if p.parse::<PolicyKind>().is_err() {
                v.push(format!("unknown policy {p:?}"));
            }
        }
        v.extend(AppSpec::violations(&self.apps));
        match self.schedule.resolve() {
            Ok(s) => v.extend(s.violations()),
            Err(e) => v.push(e.to_string()),
        }
        match &self.topology.file {
            Some(path) if !path.exists() => v.push(format!("topology file {} does not exist", path.display())),
            Some(_) => {}
            None => {
                if self.topology.clusters == 0 || self.topology.nodes < self.topology.clusters + 2 {
                    v.push(format!(
                        "{} nodes cannot hold a Cloud, a Fog node and {} clusters",
                        self.topology.nodes, self.topology.clusters
                    ));
                }
            }
        }
        v
    }

    pub fn gen(&self, beta: f64) -> GenConfig {
        GenConfig {
            beta,
            mix: self.mix.clone(),
        }
    }
}

/// Reads, parses and checks a config file, reporting every violation at
/// once. Environment overrides are applied before checking.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    config.apply_overrides(|k| std::env::var(k).ok())?;
    let problems = config.violations();
    if problems.is_empty() {
        Ok(config)
    } else {
        Err(Error::Config(problems))
    }
}

/// Trains one learned policy on the config's topology at rate `beta`.
pub fn train_agent(config: &ExperimentConfig, kind: AgentKind, beta: f64, seed: u64, exec: Execution) -> Result<Trained> {
    let topology = config.topology.build()?;
    let gen = config.gen(beta);
    let env = TrainEnv {
        topology: &topology,
        apps: &config.apps,
        gen: &gen,
    };
    run_training(env, kind, &config.schedule.resolve()?, seed, exec)
}

#[derive(Clone, Copy, Debug)]
pub enum EvalTarget<'a> {
    Agent(&'a DdqlPolicy),
    Baseline(PolicyKind),
}

/// Runs one evaluation episode with either a trained agent or a baseline.
pub fn evaluate_one(
    config: &ExperimentConfig,
    policy: EvalTarget<'_>,
    beta: f64,
    horizon: f64,
    seed: u64,
) -> Result<EpisodeResult> {
    let topology = config.topology.build()?;
    let gen = config.gen(beta);
    let spec = EpisodeSpec {
        topology: &topology,
        apps: &config.apps,
        gen: &gen,
        horizon,
        seed,
    };
    match policy {
        EvalTarget::Agent(agent) => {
            let (actions, clusters, _) = agent.dims();
            if actions != topology.fog_nodes().len() || clusters != topology.clusters().len() {
                return Err(Error::invalid(format!(
                    "agent was trained for {actions} Fog nodes and {clusters} clusters, topology has {} and {}",
                    topology.fog_nodes().len(),
                    topology.clusters().len()
                )));
            }
            evaluate(agent, spec)
        }
        EvalTarget::Baseline(kind) => run_episode(spec, &mut kind.baseline(&topology, &config.apps, seed)?),
    }
}

/// File stem shared by every artifact of one grid cell.
pub fn cell_stem(policy: &str, beta: f64, horizon: f64, seed: u64) -> String {
    format!("{policy}_b{beta}_h{horizon}_s{seed}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFailure {
    pub policy: String,
    pub beta: f64,
    pub horizon: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct GridReport {
    pub rows: Vec<SummaryRow>,
    pub run_files: Vec<PathBuf>,
    pub failures: Vec<CellFailure>,
    pub curves: BTreeMap<(String, u64), TrainingCurve>,
    pub summary: PathBuf,
}

impl GridReport {
    pub fn cells_ok(&self) -> usize {
        self.run_files.len()
    }
}

#[derive(Clone, Copy)]
struct Cell<'a> {
    policy: PolicyKind,
    horizon: f64,
    seed: u64,
    agent: Option<&'a DdqlPolicy>,
}

/// Runs every (beta, policy, horizon, seed) cell. Learned policies are
/// trained once per beta and evaluated greedily. Each cell writes
/// `runs/<stem>.csv`; the grid writes `summary.csv` and `summary_ci.csv`.
/// Failing cells are reported and skipped.
pub fn run_grid(config: &ExperimentConfig, exec: Execution) -> Result<GridReport> {
    let problems = config.violations();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let topology = config.topology.build()?;
    let sched = config.schedule.resolve()?;
    let kinds = config.policy_kinds()?;
    let out = &config.output_dir;
    for sub in ["runs", "checkpoints", "curves"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut report = GridReport::default();
    for &beta in &config.betas {
        let gen = config.gen(beta);
        let env = TrainEnv {
            topology: &topology,
            apps: &config.apps,
            gen: &gen,
        };
        let learned: Vec<AgentKind> = kinds.iter().filter_map(|&k| AgentKind::from_policy(k)).collect();
        let trained = par::map(exec, learned, |kind| {
            (kind, run_training(env, kind, &sched, config.train_seed, exec))
        });
        let mut agents = BTreeMap::new();
        for (kind, result) in trained {
            match result {
                Ok(t) => {
                    let name = kind.name();
                    let mut meta = BTreeMap::new();
                    meta.insert("beta".to_string(), beta.to_string());
                    let ckpt = out.join("checkpoints").join(format!("{name}_b{beta}.ckpt"));
                    t.policy.checkpoint(&meta).save(&ckpt)?;
                    write_curve(&t.curve, &out.join("curves").join(format!("{name}_b{beta}.csv")))?;
                    report.curves.insert((name.to_string(), beta.to_bits()), t.curve);
                    agents.insert(kind.policy_kind(), t.policy);
                }
                Err(e) => {
                    for &horizon in &config.horizons {
                        for &seed in &config.seeds {
                            report.failures.push(CellFailure {
                                policy: kind.name().to_string(),
                                beta,
                                horizon,
                                seed,
                                error: format!("training failed: {e}"),
                            });
                        }
                    }
                }
            }
        }

        let mut cells = Vec::new();
        for &policy in &kinds {
            if policy.is_learned() && !agents.contains_key(&policy) {
                continue;
            }
            for &horizon in &config.horizons {
                for &seed in &config.seeds {
                    cells.push(Cell {
                        policy,
                        horizon,
                        seed,
                        agent: agents.get(&policy),
                    });
                }
            }
        }
        let results = par::map(exec, cells, |cell| {
            let spec = EpisodeSpec {
                topology: &topology,
                apps: &config.apps,
                gen: &gen,
                horizon: cell.horizon,
                seed: cell.seed,
            };
            (cell, run_cell(cell, spec))
        });
        for (cell, result) in results {
            let name = cell.policy.name();
            let outcome = result.and_then(|r| {
                let path = out.join("runs").join(format!("{}.csv", cell_stem(name, beta, cell.horizon, cell.seed)));
                export_csv(&r.records, &path)?;
                Ok((path, r))
            });
            match outcome {
                Ok((path, r)) => {
                    report.rows.extend(SummaryRow::from_records(name, beta, cell.horizon, cell.seed, &r.records));
                    report.run_files.push(path);
                }
                Err(e) => report.failures.push(CellFailure {
                    policy: name.to_string(),
                    beta,
                    horizon: cell.horizon,
                    seed: cell.seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    report.summary = out.join("summary.csv");
    write_summary(&report.rows, &report.summary)?;
    write_summary_ci(&report.rows, out.join("summary_ci.csv"))?;
    Ok(report)
}

fn run_cell(cell: Cell<'_>, spec: EpisodeSpec<'_>) -> Result<EpisodeResult> {
    match cell.agent {
        Some(agent) => evaluate(agent, spec),
        None => {
            let mut policy = cell.policy.baseline(spec.topology, spec.apps, spec.seed)?;
            run_episode(spec, &mut policy)
        }
    }
}

/// `episode,decisions,return,moving_average` per completed episode.
pub fn write_curve(curve: &TrainingCurve, path: &Path) -> Result<()> {
    let mut text = String::from("episode,decisions,return,moving_average\n");
    let ma = if curve.moving_average.len() == curve.returns.len() {
        curve.moving_average.clone()
    } else {
        moving_average(&curve.returns, 10)
    };
    for (i, ((r, d), m)) in curve.returns.iter().zip(&curve.decisions).zip(&ma).enumerate() {
        text.push_str(&format!("{i},{d},{r:.6},{m:.6}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
