//! Result writers: schema-stable CSV, JSON summaries, JSON-lines events.
//! Floats use Rust's shortest round-trip form, so identical runs produce
//! bit-identical files.

use crate::benchmark::{Aggregate, SeedResult};
use anyhow::Result;
use std::fmt::Write as _;
use std::path::Path;
use vne_core::trainer::CurveRow;

pub const METRICS_CSV_HEADER: &str = "solver,seed,vn_acr,lt_rev,lt_rev_x1e7,lt_r2c,c_vio";

/// Deterministic metrics only; wall-clock timings live in summary.json.
pub fn metrics_csv(solver: &str, results: &[SeedResult], agg: Option<&Aggregate>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{METRICS_CSV_HEADER}");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            solver,
            r.seed,
            r.metrics.vn_acr,
            r.metrics.lt_rev,
            r.metrics.lt_rev_scaled(),
            r.metrics.lt_r2c,
            r.metrics.c_vio
        );
    }
    if let Some(a) = agg {
        let _ = writeln!(
            out,
            "{},mean,{},{},{},{},{}",
            solver,
            a.vn_acr_mean,
            a.lt_rev_mean,
            a.lt_rev_mean / 1e7,
            a.lt_r2c_mean,
            a.c_vio_mean
        );
        let _ = writeln!(
            out,
            "{},se,{},{},{},{},{}",
            solver,
            a.vn_acr_se,
            a.lt_rev_se,
            a.lt_rev_se / 1e7,
            a.lt_r2c_se,
            a.c_vio_se
        );
    }
    out
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "update,reward_mean,cost_mean,c_vio,lambda_mean,lambda_max,loss_total,loss_ppo,loss_value,loss_reach,loss_lambda,loss_contrast"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.update,
            r.reward_mean,
            r.cost_mean,
            r.c_vio,
            r.lambda_mean,
            r.lambda_max,
            r.loss_total,
            r.loss_ppo,
            r.loss_value,
            r.loss_reach,
            r.loss_lambda,
            r.loss_contrast
        );
    }
    out
}

pub fn events_jsonl(results: &[SeedResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        for e in &r.record.events {
            let _ = writeln!(out, "{}", serde_json::to_string(e)?);
        }
    }
    Ok(out)
}

/// A Table-1-style row for the terminal: mean +/- standard error, LT_REV
/// scaled by 1e7 and AVG_ST displayed in tenths of a second.
pub fn table_row(solver: &str, a: &Aggregate) -> String {
    format!(
        "{:<12} VN_ACR {:.3} ± {:.3}   LT_R2C {:.3} ± {:.3}   LT_REV(x1e7) {:.3} ± {:.3}   C_VIO {:.3} ± {:.3}   AVG_ST(x0.1s) {:.3} ± {:.3}",
        solver,
        a.vn_acr_mean,
        a.vn_acr_se,
        a.lt_r2c_mean,
        a.lt_r2c_se,
        a.lt_rev_mean / 1e7,
        a.lt_rev_se / 1e7,
        a.c_vio_mean,
        a.c_vio_se,
        a.avg_st_mean * 10.0,
        a.avg_st_se * 10.0,
    )
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
