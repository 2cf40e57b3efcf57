//! Benchmark harness: runs simulations, training and evaluations from
//! config files, computes the standard VNE metrics, and emits
//! machine-readable results (metrics.csv, summary.json, curves.csv,
//! events.jsonl).

pub mod benchmark;
pub mod commands;
pub mod output;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use vne_core::sim::SimulationConfig;

#[derive(Debug, Parser)]
#[command(name = "vne-lab", version, about = "Virtual network embedding laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    /// TOML config file with simulation keys (flat key = value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Solver to run.
    #[arg(long, default_value = "grc")]
    pub solver: SolverKind,
    /// Checkpoint file (required for --solver conal).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for metrics.csv / summary.json.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override: master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override: average arrival rate (requests per time unit).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Override: number of VN requests.
    #[arg(long)]
    pub vn_count: Option<usize>,
    /// Override: physical node count for Waxman generation.
    #[arg(long)]
    pub pn_nodes: Option<usize>,
    /// Override: edge-list topology file replacing Waxman generation.
    #[arg(long)]
    pub topology: Option<PathBuf>,
    /// Candidate count for the tolerant routing fallback.
    #[arg(long)]
    pub k_paths: Option<usize>,
    /// Hop budget for routing (0 = unlimited).
    #[arg(long)]
    pub max_hops: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverKind {
    Nrm,
    Grc,
    Exhaustive,
    Conal,
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverKind::Nrm => "nrm",
            SolverKind::Grc => "grc",
            SolverKind::Exhaustive => "exhaustive",
            SolverKind::Conal => "conal",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One simulation run on one seed.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// Also write the event log as events.jsonl.
        #[arg(long)]
        events: bool,
    },
    /// Benchmark a solver over a seed set and aggregate like a results table.
    Evaluate {
        #[command(flatten)]
        sim: SimArgs,
        /// `paper` (0,1111,...,9999) or a comma-separated list.
        #[arg(long, default_value = "paper")]
        seeds: String,
        /// Repeatable `metric:lo:hi` bound; nonzero exit if the aggregate
        /// mean falls outside.
        #[arg(long = "assert")]
        assertions: Vec<String>,
    },
    /// Train the constraint-aware policy and write curves + checkpoint.
    Train {
        /// TOML file deserializing into the training configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override: number of policy updates.
        #[arg(long)]
        updates: Option<usize>,
        /// Disable the adaptive reachability budget (fixed zero budget).
        #[arg(long)]
        no_arb: bool,
        /// Fraction of requests with inflated (unsolvable-prone) demands.
        #[arg(long)]
        salt: Option<f64>,
    },
    /// Finite-difference verification of every op family and the full
    /// composite loss; exits nonzero if any error exceeds 1e-4.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive-oracle agreement sweep over random tiny instances.
    OracleVerify {
        #[arg(long, default_value_t = 200)]
        instances: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate across a swept simulation parameter.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        /// Parameter to sweep: eta | lifetime-mean | vn-link-prob | vn-count.
        #[arg(long)]
        param: String,
        /// lo:hi:step inclusive range.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "paper")]
        seeds: String,
    },
}

/// Loads the simulation config file (if any) and applies CLI overrides.
pub fn resolve_sim_config(args: &SimArgs) -> Result<SimulationConfig> {
    let mut config: SimulationConfig = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {path:?}"))?;
            toml::from_str(&text).with_context(|| format!("parsing config {path:?}"))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(eta) = args.eta {
        config.arrival_rate = eta;
    }
    if let Some(n) = args.vn_count {
        config.vn_count = n;
    }
    if let Some(n) = args.pn_nodes {
        config.pn_nodes = n;
    }
    if let Some(path) = &args.topology {
        config.topology_file = Some(path.display().to_string());
    }
    config.validate().map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    Ok(config)
}

/// Seed list: `paper` or comma-separated integers.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if spec == "paper" {
        return Ok((0..10).map(|i| i * 1111).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

/// `lo:hi:step` inclusive sweep values.
pub fn parse_sweep_values(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        bail!("--values expects lo:hi:step, got `{spec}`");
    }
    let lo: f64 = parts[0].parse().context("bad sweep lo")?;
    let hi: f64 = parts[1].parse().context("bad sweep hi")?;
    let step: f64 = parts[2].parse().context("bad sweep step")?;
    if step <= 0.0 || hi < lo {
        bail!("--values requires lo <= hi and step > 0");
    }
    let mut values = Vec::new();
    let mut v = lo;
    while v <= hi + 1e-9 {
        values.push((v * 1e9).round() / 1e9);
        v += step;
    }
    Ok(values)
}

/// Worker cap from VNE_LAB_THREADS (defaults to the rayon default).
pub fn thread_cap() -> Option<usize> {
    std::env::var("VNE_LAB_THREADS").ok().and_then(|s| s.parse().ok())
}

pub fn cli_dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate { sim, events } => commands::simulate(&sim, events),
        Command::Evaluate { sim, seeds, assertions } => {
            commands::evaluate(&sim, &seeds, &assertions)
        }
        Command::Train { config, out, seed, updates, no_arb, salt } => {
            commands::train(config.as_deref(), &out, seed, updates, no_arb, salt)
        }
        Command::Gradcheck { seed, trials, out } => {
            commands::gradcheck(seed, trials, out.as_deref())
        }
        Command::OracleVerify { instances, seed, out } => {
            commands::oracle_verify(instances, seed, out.as_deref())
        }
        Command::Sweep { sim, param, values, seeds } => {
            commands::sweep(&sim, &param, &values, &seeds)
        }
    }
}
