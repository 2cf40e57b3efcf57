//! Benchmark metrics: acceptance rate, lifetime-weighted revenue and R2C,
//! average solving time, and cumulative constraint violation, each computed
//! from a simulation record (and independently from the raw event log).

use crate::sim::{Event, EventKind, SimulationRecord};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("empty record: no instances")]
    EmptyRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction of requests accepted.
    pub vn_acr: f64,
    /// Sum over accepted instances of revenue times lifetime (raw units).
    pub lt_rev: f64,
    /// Lifetime-weighted revenue over lifetime-weighted consumption.
    pub lt_r2c: f64,
    /// Mean wall-clock seconds per solve call.
    pub avg_st: f64,
    /// Summed trajectory costs over rejected instances.
    pub c_vio: f64,
}

impl MetricsReport {
    /// LT_REV in the customary reporting scale (x 10^7).
    pub fn lt_rev_scaled(&self) -> f64 {
        self.lt_rev / 1e7
    }
}

pub fn compute_metrics(record: &SimulationRecord) -> Result<MetricsReport, MetricsError> {
    if record.outcomes.is_empty() {
        return Err(MetricsError::EmptyRecord);
    }
    let total = record.outcomes.len() as f64;
    let accepted = record.outcomes.iter().filter(|o| o.accepted).count() as f64;
    let mut lt_rev = 0.0;
    let mut lt_cons = 0.0;
    let mut c_vio = 0.0;
    let mut st_sum = 0.0;
    for o in &record.outcomes {
        st_sum += o.solve_seconds;
        if o.accepted {
            lt_rev += o.revenue * o.lifetime;
            lt_cons += o.consumption.unwrap_or(0.0) * o.lifetime;
        } else {
            c_vio += o.violation_total;
        }
    }
    Ok(MetricsReport {
        vn_acr: accepted / total,
        lt_rev,
        lt_r2c: if lt_cons > 0.0 { lt_rev / lt_cons } else { 0.0 },
        avg_st: st_sum / total,
        c_vio,
    })
}

/// Recomputes the deterministic metrics from the raw event log alone.
/// `avg_st` is not derivable from events and is reported as 0.
pub fn compute_metrics_from_events(events: &[Event]) -> Result<MetricsReport, MetricsError> {
    let mut total = 0u64;
    let mut accepted = 0u64;
    let mut lt_rev = 0.0;
    let mut lt_cons = 0.0;
    let mut c_vio = 0.0;
    for e in events {
        match e.kind {
            EventKind::Arrival => total += 1,
            EventKind::Accepted => {
                accepted += 1;
                let rev = e.revenue.expect("accept event carries revenue");
                let cons = e.consumption.expect("accept event carries consumption");
                let life = e.lifetime.expect("accept event carries lifetime");
                lt_rev += rev * life;
                lt_cons += cons * life;
            }
            EventKind::Rejected => {
                c_vio += e.violation_total.unwrap_or(0.0);
            }
            EventKind::Departure => {}
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyRecord);
    }
    Ok(MetricsReport {
        vn_acr: accepted as f64 / total as f64,
        lt_rev,
        lt_r2c: if lt_cons > 0.0 { lt_rev / lt_cons } else { 0.0 },
        avg_st: 0.0,
        c_vio,
    })
}
