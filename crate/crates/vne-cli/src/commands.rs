//! Subcommand implementations.

use crate::benchmark::{self, aggregate, run_benchmark, SolverSpec};
use crate::output;
use crate::{parse_seeds, parse_sweep_values, resolve_sim_config, SimArgs};
use anyhow::{bail, Context, Result};
use std::path::Path;
use vne_core::constraints::check_solution;
use vne_core::constraints::oracle::{enumerate_candidates, random_tiny_instance, OracleLimits};
use vne_core::env::VneEnv;
use vne_core::gradcheck::{full_suite, GRAD_TOLERANCE};
use vne_core::heuristics::DEFAULT_MAX_HOPS;
use vne_core::trainer::{train as run_train, TrainConfig};

fn solver_spec(args: &SimArgs) -> SolverSpec {
    let max_hops = match args.max_hops {
        Some(0) => None,
        Some(h) => Some(h),
        None => DEFAULT_MAX_HOPS,
    };
    SolverSpec {
        kind: args.solver,
        k_paths: args.k_paths.unwrap_or(5),
        max_hops,
        checkpoint: args.checkpoint.clone(),
    }
}

pub fn simulate(args: &SimArgs, events: bool) -> Result<i32> {
    let config = resolve_sim_config(args)?;
    let spec = solver_spec(args);
    let results = run_benchmark(&config, &spec, &[config.seed])?;
    let solver_name = args.solver.to_string();
    output::write(
        &args.out.join("metrics.csv"),
        &output::metrics_csv(&solver_name, &results, None),
    )?;
    let summary = serde_json::json!({
        "solver": solver_name,
        "config": config,
        "seed": config.seed,
        "metrics": results[0].metrics,
        "accepted": results[0].record.accepted_count,
        "total": results[0].record.total_count,
    });
    output::write(
        &args.out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    if events {
        output::write(&args.out.join("events.jsonl"), &output::events_jsonl(&results)?)?;
    }
    let m = &results[0].metrics;
    println!(
        "{solver_name} seed {}: VN_ACR {:.3}  LT_R2C {:.3}  LT_REV(x1e7) {:.3}  C_VIO {:.3}  AVG_ST {:.4}s",
        config.seed, m.vn_acr, m.lt_r2c, m.lt_rev_scaled(), m.c_vio, m.avg_st
    );
    Ok(0)
}

fn check_assertions(assertions: &[String], agg: &benchmark::Aggregate) -> Result<bool> {
    let mut ok = true;
    for spec in assertions {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            bail!("--assert expects metric:lo:hi, got `{spec}`");
        }
        let lo: f64 = parts[1].parse().context("bad assert lo")?;
        let hi: f64 = parts[2].parse().context("bad assert hi")?;
        let value = match parts[0] {
            "vn_acr" => agg.vn_acr_mean,
            "lt_r2c" => agg.lt_r2c_mean,
            "lt_rev" => agg.lt_rev_mean,
            "lt_rev_x1e7" => agg.lt_rev_mean / 1e7,
            "c_vio" => agg.c_vio_mean,
            "avg_st" => agg.avg_st_mean,
            other => bail!("unknown assert metric `{other}`"),
        };
        let pass = value >= lo && value <= hi;
        println!(
            "[{}] {} = {:.4} within [{lo}, {hi}]",
            if pass { "PASS" } else { "FAIL" },
            parts[0],
            value
        );
        ok &= pass;
    }
    Ok(ok)
}

pub fn evaluate(args: &SimArgs, seeds: &str, assertions: &[String]) -> Result<i32> {
    let config = resolve_sim_config(args)?;
    let seeds = parse_seeds(seeds)?;
    let spec = solver_spec(args);
    let results = run_benchmark(&config, &spec, &seeds)?;
    let agg = aggregate(&results);
    let solver_name = args.solver.to_string();
    output::write(
        &args.out.join("metrics.csv"),
        &output::metrics_csv(&solver_name, &results, Some(&agg)),
    )?;
    let per_seed: Vec<_> = results
        .iter()
        .map(|r| {
            serde_json::json!({
                "seed": r.seed,
                "metrics": r.metrics,
                "avg_st_seconds": r.metrics.avg_st,
            })
        })
        .collect();
    let summary = serde_json::json!({
        "solver": solver_name,
        "config": config,
        "seeds": seeds,
        "per_seed": per_seed,
        "aggregate": agg,
    });
    output::write(
        &args.out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    println!("{}", output::table_row(&solver_name, &agg));
    if check_assertions(assertions, &agg)? {
        Ok(0)
    } else {
        Ok(2)
    }
}

pub fn train(
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    updates: Option<usize>,
    no_arb: bool,
    salt: Option<f64>,
) -> Result<i32> {
    let mut config: TrainConfig = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading train config {path:?}"))?;
            toml::from_str(&text).with_context(|| format!("parsing train config {path:?}"))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
        config.sim.seed = s;
    }
    if let Some(u) = updates {
        config.updates = u;
    }
    if no_arb {
        config.arb_enabled = false;
    }
    if let Some(f) = salt {
        config.unsolvable_salt_frac = f;
    }

    let started = std::time::Instant::now();
    let result = run_train(&config)?;
    let elapsed = started.elapsed().as_secs_f64();

    std::fs::create_dir_all(out)?;
    output::write(&out.join("curves.csv"), &output::curves_csv(&result.curves))?;
    let env = VneEnv::new(config.env);
    benchmark::save_policy(&result.policy, &env, &out.join("checkpoint.bin"))?;
    let improvement = if result.eval_reward_untrained.abs() > 1e-12 {
        (result.eval_reward_trained - result.eval_reward_untrained)
            / result.eval_reward_untrained.abs()
    } else {
        f64::INFINITY
    };
    let summary = serde_json::json!({
        "config": config,
        "updates": result.curves.len(),
        "eval_reward_untrained": result.eval_reward_untrained,
        "eval_reward_trained": result.eval_reward_trained,
        "eval_reward_improvement": improvement,
        "lambda_max_overall": result.lambda_max_overall,
        "train_seconds": elapsed,
    });
    output::write(
        &out.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    println!(
        "trained {} updates in {:.1}s: greedy eval reward {:.4} -> {:.4} ({:+.1}%), max lambda {:.3}",
        result.curves.len(),
        elapsed,
        result.eval_reward_untrained,
        result.eval_reward_trained,
        improvement * 100.0,
        result.lambda_max_overall
    );
    Ok(0)
}

pub fn gradcheck(seed: u64, trials: usize, out: Option<&Path>) -> Result<i32> {
    let rows = full_suite(seed, trials)?;
    let mut all_ok = true;
    let mut csv = String::from("op_family,max_rel_error\n");
    for (name, err) in &rows {
        let ok = *err <= GRAD_TOLERANCE;
        all_ok &= ok;
        println!("[{}] {name}: max relative error {err:.3e}", if ok { "PASS" } else { "FAIL" });
        csv.push_str(&format!("{name},{err}\n"));
    }
    if let Some(dir) = out {
        output::write(&dir.join("gradcheck.csv"), &csv)?;
    }
    Ok(if all_ok { 0 } else { 2 })
}

pub fn oracle_verify(instances: u64, seed: u64, out: Option<&Path>) -> Result<i32> {
    let limits = OracleLimits::default();
    let started = std::time::Instant::now();
    let mut candidates = 0u64;
    let mut disagreements = 0u64;
    for i in 0..instances {
        let inst = random_tiny_instance(seed.wrapping_add(i));
        candidates += enumerate_candidates(&inst, &limits, |sol, verdict| {
            let report = check_solution(&inst, sol).expect("oracle emits well-formed solutions");
            if report.feasible() != verdict {
                disagreements += 1;
            }
        })
        .map_err(|e| anyhow::anyhow!("instance {i}: {e}"))?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let ok = disagreements == 0;
    println!(
        "[{}] {instances} instances, {candidates} candidate mappings, {disagreements} disagreements ({elapsed:.1}s)",
        if ok { "PASS" } else { "FAIL" }
    );
    if let Some(dir) = out {
        let summary = serde_json::json!({
            "instances": instances,
            "candidates": candidates,
            "disagreements": disagreements,
            "seconds": elapsed,
        });
        output::write(
            &dir.join("oracle_verify.json"),
            &format!("{}\n", serde_json::to_string_pretty(&summary)?),
        )?;
    }
    Ok(if ok { 0 } else { 2 })
}

pub fn sweep(args: &SimArgs, param: &str, values: &str, seeds: &str) -> Result<i32> {
    let base = resolve_sim_config(args)?;
    let seeds = parse_seeds(seeds)?;
    let values = parse_sweep_values(values)?;
    let spec = solver_spec(args);
    let solver_name = args.solver.to_string();
    let mut csv = String::from(
        "param,value,vn_acr_mean,vn_acr_se,lt_r2c_mean,lt_r2c_se,lt_rev_x1e7_mean,lt_rev_x1e7_se,c_vio_mean,c_vio_se\n",
    );
    for &value in &values {
        let mut config = base.clone();
        match param {
            "eta" | "arrival-rate" | "arrival_rate" => config.arrival_rate = value,
            "lifetime-mean" | "lifetime_mean" => config.lifetime_mean = value,
            "vn-link-prob" | "vn_link_prob" => config.vn_link_prob = value,
            "vn-count" | "vn_count" => config.vn_count = value as usize,
            other => bail!("unknown sweep parameter `{other}`"),
        }
        config.validate().map_err(|e| anyhow::anyhow!("swept config invalid: {e}"))?;
        let results = run_benchmark(&config, &spec, &seeds)?;
        let agg = aggregate(&results);
        println!("{param}={value}: {}", output::table_row(&solver_name, &agg));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            param,
            value,
            agg.vn_acr_mean,
            agg.vn_acr_se,
            agg.lt_r2c_mean,
            agg.lt_r2c_se,
            agg.lt_rev_mean / 1e7,
            agg.lt_rev_se / 1e7,
            agg.c_vio_mean,
            agg.c_vio_se
        ));
    }
    output::write(&args.out.join("sweep.csv"), &csv)?;
    Ok(0)
}
