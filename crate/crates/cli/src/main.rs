use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use foglb_core::ddql::{AgentKind, DdqlPolicy};
use foglb_core::harness::{evaluate_one, run_grid, train_agent, validate_config, write_curve, EvalTarget, ExperimentConfig};
use foglb_core::metrics::{export_csv, mean_loop_delay, mean_waiting, LoopKind};
use foglb_core::nn::Checkpoint;
use foglb_core::par::Execution;
use foglb_core::policies::PolicyKind;
use foglb_core::topology::{generate_with, TopologyParams};
use foglb_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "foglb", version, about = "Fog network load-balancing simulator")]
struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Topology utilities.
    Topo {
        #[command(subcommand)]
        command: TopoCommand,
    },
    /// Train one learned policy and write its checkpoint.
    Train(TrainArgs),
    /// Run one evaluation episode.
    Eval(EvalArgs),
    /// Run the full experiment grid of a config.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Check a config and report every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum TopoCommand {
    /// Generate a scale-free topology.
    Gen {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        clusters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// ddql, plrl-ed, plrl-ql or plrl-edql.
    #[arg(long, default_value = "ddql")]
    policy: String,
    /// Generation rate; defaults to the config's first beta.
    #[arg(long)]
    beta: Option<f64>,
    /// Also write the training curve as CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, conflicts_with = "policy", required_unless_present = "policy")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 10_000.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Topology and workload; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the checkpoint's beta, then the config's first beta.
    #[arg(long)]
    beta: Option<f64>,
    /// Write per-workload delays as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match run(cli.command, exec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<Error>(),
                    Some(Error::Config(_) | Error::Format(_) | Error::InvalidArgument(_))
                )
            });
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_RUNTIME })
        }
    }
}

fn run(command: Command, exec: Execution) -> anyhow::Result<ExitCode> {
    match command {
        Command::Topo {
            command: TopoCommand::Gen { nodes, clusters, seed, out },
        } => {
            let topo = generate_with(nodes, clusters, seed, &TopologyParams::default())?;
            topo.save(&out)?;
            println!(
                "wrote {} ({} Fog nodes, {} clusters)",
                out.display(),
                topo.fog_nodes().len(),
                topo.clusters().len()
            );
        }
        Command::Train(args) => train(args, exec)?,
        Command::Eval(args) => eval(args)?,
        Command::Bench { config } => {
            let config = validate_config(&config)?;
            let report = run_grid(&config, exec)?;
            for f in &report.failures {
                eprintln!(
                    "cell {} beta {} horizon {} seed {} failed: {}",
                    f.policy, f.beta, f.horizon, f.seed, f.error
                );
            }
            println!(
                "{} cells ok, {} failed; summary in {}",
                report.cells_ok(),
                report.failures.len(),
                report.summary.display()
            );
            if report.cells_ok() == 0 {
                return Ok(ExitCode::from(EXIT_RUNTIME));
            }
        }
        Command::Validate { config } => {
            let config = validate_config(&config)?;
            println!(
                "ok: {} betas x {} policies x {} horizons x {} seeds",
                config.betas.len(),
                config.policies.len(),
                config.horizons.len(),
                config.seeds.len()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(validate_config(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn train(args: TrainArgs, exec: Execution) -> anyhow::Result<()> {
    let config = validate_config(&args.config)?;
    let kind = AgentKind::from_policy(args.policy.parse()?)
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a learned policy", args.policy)))?;
    let beta = args.beta.unwrap_or(config.betas[0]);
    let trained = train_agent(&config, kind, beta, args.seed, exec)?;
    let mut meta = BTreeMap::new();
    meta.insert("beta".to_string(), beta.to_string());
    trained.policy.checkpoint(&meta).save(&args.out)?;
    if let Some(path) = &args.curve {
        write_curve(&trained.curve, path)?;
    }
    println!(
        "trained {} for {} steps over {} episodes; wrote {}",
        kind.name(),
        trained.policy.agent().train_steps(),
        trained.curve.returns.len(),
        args.out.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let (name, result, beta) = match (&args.ckpt, &args.policy) {
        (Some(path), _) => {
            let ckpt = Checkpoint::load(path)?;
            let agent = DdqlPolicy::from_checkpoint(&ckpt).with_context(|| format!("loading {}", path.display()))?;
            let beta = match (args.beta, ckpt.meta.get("beta")) {
                (Some(b), _) => b,
                (None, Some(b)) => b.parse().context("checkpoint beta")?,
                (None, None) => config.betas[0],
            };
            let r = evaluate_one(&config, EvalTarget::Agent(&agent), beta, args.horizon, args.seed)?;
            (agent.kind().name().to_string(), r, beta)
        }
        (None, Some(policy)) => {
            let kind: PolicyKind = policy.parse()?;
            if kind.is_learned() {
                bail!(Error::InvalidArgument(format!("{policy} needs --ckpt")));
            }
            let beta = args.beta.unwrap_or(config.betas[0]);
            let r = evaluate_one(&config, EvalTarget::Baseline(kind), beta, args.horizon, args.seed)?;
            (kind.name().to_string(), r, beta)
        }
        (None, None) => unreachable!("clap requires one of --ckpt and --policy"),
    };
    println!("policy {name} beta {beta} horizon {} seed {}", args.horizon, args.seed);
    for l in [LoopKind::FogLoop, LoopKind::CloudLoop] {
        match (mean_loop_delay(&result.records, l), mean_waiting(&result.records, l)) {
            (Some(total), Some(wait)) => println!("{:<6} total {total:.3} ms  waiting {wait:.3} ms", l.name()),
            _ => println!("{:<6} no completed workloads", l.name()),
        }
    }
    if let Some(out) = &args.out {
        export_csv(&result.records, out)?;
    }
    Ok(())
}
