//! Multi-seed benchmark execution with parallel worker slots and
//! Table-style aggregation (mean and standard error).

use crate::SolverKind;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use std::path::Path;
use vne_core::constraints::oracle::OracleLimits;
use vne_core::env::VneEnv;
use vne_core::heuristics::{ExhaustiveSolver, GreedyRankSolver};
use vne_core::metrics::{compute_metrics, MetricsReport};
use vne_core::policy::{ConalSolver, PolicyNet};
use vne_core::sim::{run_simulation, SimulationConfig, SimulationRecord, Solver};

/// Everything needed to build a fresh solver inside a worker.
#[derive(Clone)]
pub struct SolverSpec {
    pub kind: SolverKind,
    pub k_paths: usize,
    pub max_hops: Option<usize>,
    pub checkpoint: Option<std::path::PathBuf>,
}

impl SolverSpec {
    pub fn build(&self) -> Result<Box<dyn Solver>> {
        Ok(match self.kind {
            SolverKind::Nrm => Box::new(GreedyRankSolver {
                kind: vne_core::heuristics::RankingKind::Nrm,
                k: self.k_paths,
                max_hops: self.max_hops,
            }),
            SolverKind::Grc => Box::new(GreedyRankSolver {
                kind: vne_core::heuristics::RankingKind::Grc,
                k: self.k_paths,
                max_hops: self.max_hops,
            }),
            SolverKind::Exhaustive => {
                Box::new(ExhaustiveSolver { limits: OracleLimits::default() })
            }
            SolverKind::Conal => {
                let path = self
                    .checkpoint
                    .as_ref()
                    .context("--solver conal requires --checkpoint")?;
                let policy = load_policy(path)?;
                let env = VneEnv::new(vne_core::env::EnvConfig {
                    k_paths: self.k_paths,
                    max_hops: self.max_hops,
                    ..Default::default()
                });
                Box::new(ConalSolver::new(policy, env))
            }
        })
    }
}

/// Architecture sidecar written next to every checkpoint for reload
/// validation.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub arch: vne_core::policy::ArchConfig,
    pub env: vne_core::env::EnvConfig,
    pub parameter_count: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut p = checkpoint.as_os_str().to_owned();
    p.push(".json");
    std::path::PathBuf::from(p)
}

pub fn save_policy(policy: &PolicyNet, env: &VneEnv, path: &Path) -> Result<()> {
    policy
        .params
        .save_to_file(path)
        .map_err(|e| anyhow::anyhow!("writing checkpoint: {e}"))?;
    let sidecar = CheckpointSidecar {
        format_version: 1,
        arch: policy.arch,
        env: env.config,
        parameter_count: policy.params.len(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<PolicyNet> {
    let params = vne_core::autodiff::ParameterSet::load_from_file(path)
        .map_err(|e| anyhow::anyhow!("reading checkpoint {path:?}: {e}"))?;
    let sidecar_file = sidecar_path(path);
    let sidecar: CheckpointSidecar = serde_json::from_str(
        &std::fs::read_to_string(&sidecar_file)
            .with_context(|| format!("reading sidecar {sidecar_file:?}"))?,
    )?;
    if sidecar.parameter_count != params.len() {
        bail!(
            "sidecar expects {} parameters, checkpoint holds {}",
            sidecar.parameter_count,
            params.len()
        );
    }
    let reference = PolicyNet::init(sidecar.arch, 0);
    for name in reference.params.names() {
        let expected = reference.params.get(name).shape();
        match params.try_get(name) {
            Some(t) if t.shape() == expected => {}
            Some(t) => bail!(
                "parameter `{name}` has shape {:?}, architecture expects {:?}",
                t.shape(),
                expected
            ),
            None => bail!("checkpoint is missing parameter `{name}`"),
        }
    }
    Ok(PolicyNet { arch: sidecar.arch, params })
}

pub struct SeedResult {
    pub seed: u64,
    pub metrics: MetricsReport,
    pub record: SimulationRecord,
}

/// Aggregate row: per-metric mean and standard error of the mean.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub vn_acr_mean: f64,
    pub vn_acr_se: f64,
    pub lt_rev_mean: f64,
    pub lt_rev_se: f64,
    pub lt_r2c_mean: f64,
    pub lt_r2c_se: f64,
    pub avg_st_mean: f64,
    pub avg_st_se: f64,
    pub c_vio_mean: f64,
    pub c_vio_se: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn aggregate(results: &[SeedResult]) -> Aggregate {
    let col = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        results.iter().map(|r| f(&r.metrics)).collect()
    };
    let (vn_acr_mean, vn_acr_se) = mean_se(&col(|m| m.vn_acr));
    let (lt_rev_mean, lt_rev_se) = mean_se(&col(|m| m.lt_rev));
    let (lt_r2c_mean, lt_r2c_se) = mean_se(&col(|m| m.lt_r2c));
    let (avg_st_mean, avg_st_se) = mean_se(&col(|m| m.avg_st));
    let (c_vio_mean, c_vio_se) = mean_se(&col(|m| m.c_vio));
    Aggregate {
        vn_acr_mean,
        vn_acr_se,
        lt_rev_mean,
        lt_rev_se,
        lt_r2c_mean,
        lt_r2c_se,
        avg_st_mean,
        avg_st_se,
        c_vio_mean,
        c_vio_se,
    }
}

/// One simulation per seed, in parallel worker slots (capped by
/// VNE_LAB_THREADS), results ordered by the seed list.
pub fn run_benchmark(
    config: &SimulationConfig,
    spec: &SolverSpec,
    seeds: &[u64],
) -> Result<Vec<SeedResult>> {
    let pool = match crate::thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?,
        None => rayon::ThreadPoolBuilder::new().build()?,
    };
    let results: Vec<Result<SeedResult>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut solver = spec.build()?;
                let run_config = SimulationConfig { seed, ..config.clone() };
                let record = run_simulation(solver.as_mut(), &run_config)
                    .map_err(|e| anyhow::anyhow!("seed {seed}: {e}"))?;
                let metrics = compute_metrics(&record)
                    .map_err(|e| anyhow::anyhow!("seed {seed}: {e}"))?;
                Ok(SeedResult { seed, metrics, record })
            })
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        log::error!("{} seed(s) failed: {}", failures.len(), failures.join("; "));
        if out.is_empty() {
            bail!("every seed failed: {}", failures.join("; "));
        }
    }
    Ok(out)
}
