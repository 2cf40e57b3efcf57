//! Ground-truth VNE constraint system: the per-family feasibility checker,
//! revenue/consumption/R2C objective values, signed violation measures, and
//! a brute-force exact solver used as the test oracle.

pub mod oracle;

use crate::net::{Solution, VNEInstance, VirtualNetwork};
use thiserror::Error;

/// Sentinel for an absent violation component, large and negative so that
/// `max()` reduces to the present component.
pub const NO_COMPONENT_SENTINEL: f64 = -1.0e6;

#[derive(Debug, Error, PartialEq)]
pub enum ConstraintError {
    #[error("malformed solution: {0}")]
    MalformedSolution(String),
}

/// Pass/fail per constraint family plus the worst offending elements.
///
/// The families mirror the mathematical program: one-to-one placement in
/// both directions, node capacity, path connectivity, loop freedom, and
/// aggregate link capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport {
    /// Every virtual node is placed on exactly one physical node.
    pub placement_total: bool,
    /// No physical node hosts more than one virtual node.
    pub placement_unique: bool,
    /// Each virtual node's compute demand fits its host's availability.
    pub node_capacity: bool,
    /// Every routed path walks existing physical links.
    pub path_connectivity: bool,
    /// Every routed path is simple.
    pub loop_free: bool,
    /// Summed bandwidth demand per physical link fits its availability.
    pub link_capacity: bool,
    /// (physical node id, deficit) with the largest compute deficit, if any.
    pub worst_node: Option<(usize, f64)>,
    /// (physical link id, deficit) with the largest bandwidth deficit, if any.
    pub worst_link: Option<(usize, f64)>,
}

impl ConstraintReport {
    pub fn feasible(&self) -> bool {
        self.placement_total
            && self.placement_unique
            && self.node_capacity
            && self.path_connectivity
            && self.loop_free
            && self.link_capacity
    }
}

/// Checks a complete solution against the full constraint system.
///
/// Path endpoints that disagree with the node map indicate a broken solver
/// rather than an infeasible solution, so they surface as
/// `MalformedSolution` instead of a failed family.
pub fn check_solution(inst: &VNEInstance, sol: &Solution) -> Result<ConstraintReport, ConstraintError> {
    let vn = &inst.vn;
    let pn = &inst.pn;
    if sol.node_map.len() != vn.node_count() || sol.link_paths.len() != vn.link_count() {
        return Err(ConstraintError::MalformedSolution(format!(
            "map sizes ({}, {}) do not match VN ({}, {})",
            sol.node_map.len(),
            sol.link_paths.len(),
            vn.node_count(),
            vn.link_count()
        )));
    }

    let mut report = ConstraintReport {
        placement_total: true,
        placement_unique: true,
        node_capacity: true,
        path_connectivity: true,
        loop_free: true,
        link_capacity: true,
        worst_node: None,
        worst_link: None,
    };

    let mut host_count = vec![0usize; pn.node_count()];
    for (vnode, mapped) in sol.node_map.iter().enumerate() {
        match mapped {
            None => report.placement_total = false,
            Some(pnode) => {
                if *pnode >= pn.node_count() {
                    return Err(ConstraintError::MalformedSolution(format!(
                        "virtual node {vnode} mapped to nonexistent physical node {pnode}"
                    )));
                }
                host_count[*pnode] += 1;
                let deficit = vn.node_demand(vnode) - pn.node(*pnode).available;
                if deficit > 0.0 {
                    report.node_capacity = false;
                    if report.worst_node.map_or(true, |(_, d)| deficit > d) {
                        report.worst_node = Some((*pnode, deficit));
                    }
                }
            }
        }
    }
    if host_count.iter().any(|&c| c > 1) {
        report.placement_unique = false;
    }

    let mut link_load = vec![0.0f64; pn.link_count()];
    for (vlink, path) in sol.link_paths.iter().enumerate() {
        let link = vn.link(vlink);
        let path = match path {
            None => {
                report.placement_total = false;
                continue;
            }
            Some(p) => p,
        };
        if path.is_empty() {
            return Err(ConstraintError::MalformedSolution(format!(
                "virtual link {vlink} routed over an empty path"
            )));
        }
        if path.iter().any(|&n| n >= pn.node_count()) {
            return Err(ConstraintError::MalformedSolution(format!(
                "virtual link {vlink} path references a nonexistent physical node"
            )));
        }
        let (src_host, dst_host) = (sol.node_map[link.u], sol.node_map[link.v]);
        match (src_host, dst_host) {
            (Some(s), Some(d)) => {
                let first = *path.first().unwrap();
                let last = *path.last().unwrap();
                if !(first == s && last == d) && !(first == d && last == s) {
                    return Err(ConstraintError::MalformedSolution(format!(
                        "virtual link {vlink} path endpoints ({first},{last}) do not match hosts ({s},{d})"
                    )));
                }
            }
            _ => {
                // Routed link whose endpoint is unplaced: totality already failed.
                report.placement_total = false;
            }
        }
        let mut seen = std::collections::HashSet::new();
        if !path.iter().all(|&n| seen.insert(n)) {
            report.loop_free = false;
        }
        for hop in path.windows(2) {
            match pn.link_between(hop[0], hop[1]) {
                Some(plink) => link_load[plink] += link.demand,
                None => report.path_connectivity = false,
            }
        }
    }
    for (plink, &load) in link_load.iter().enumerate() {
        let deficit = load - pn.link(plink).available;
        if load > 0.0 && deficit > 0.0 {
            report.link_capacity = false;
            if report.worst_link.map_or(true, |(_, d)| deficit > d) {
                report.worst_link = Some((plink, deficit));
            }
        }
    }
    Ok(report)
}

/// REV: total compute demand plus total bandwidth demand of the VN.
pub fn revenue(vn: &VirtualNetwork) -> f64 {
    let node_sum: f64 = (0..vn.node_count()).map(|i| vn.node_demand(i)).sum();
    let link_sum: f64 = vn.links().iter().map(|l| l.demand).sum();
    node_sum + link_sum
}

/// CONS: total compute demand plus hop-count-weighted bandwidth demand.
/// Computed unconditionally; callers decide the feasibility branch.
pub fn consumption(sol: &Solution, vn: &VirtualNetwork) -> f64 {
    let node_sum: f64 = (0..vn.node_count()).map(|i| vn.node_demand(i)).sum();
    let link_sum: f64 = sol
        .link_paths
        .iter()
        .enumerate()
        .map(|(vlink, path)| match path {
            Some(p) => (p.len().saturating_sub(1)) as f64 * vn.link(vlink).demand,
            None => 0.0,
        })
        .sum();
    node_sum + link_sum
}

/// R2C = kappa * REV / CONS; 0 for infeasible or degenerate solutions.
pub fn r2c(sol: &Solution, vn: &VirtualNetwork) -> f64 {
    if !sol.feasible {
        return 0.0;
    }
    let cons = consumption(sol, vn);
    if cons <= 0.0 {
        return 0.0;
    }
    revenue(vn) / cons
}

/// Signed compute violation of placing a demand on a node: demand minus
/// availability. Negative values are slack.
pub fn violation_node(demand: f64, available: f64) -> f64 {
    demand - available
}

/// How a routed path's bandwidth violation is aggregated over its links.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteViolationMode {
    /// Worst single link: max over path links of (demand - availability).
    Feasible,
    /// Total deficit: sum over path links of (demand - availability).
    LeastViolation,
}

/// Signed bandwidth violation of routing `demand` over links with the given
/// availabilities.
pub fn violation_link_route(demand: f64, path_link_avails: &[f64], mode: RouteViolationMode) -> f64 {
    if path_link_avails.is_empty() {
        return NO_COMPONENT_SENTINEL;
    }
    match mode {
        RouteViolationMode::Feasible => path_link_avails
            .iter()
            .map(|&a| demand - a)
            .fold(f64::NEG_INFINITY, f64::max),
        RouteViolationMode::LeastViolation => path_link_avails.iter().map(|&a| demand - a).sum(),
    }
}

/// Combines per-step node and link components into the state violation
/// h = max(h_N, h_L) and cost c = max(h, 0). Absent components fall back to
/// the sentinel so the max reduces to whatever is present.
pub fn violation_state(h_node: Option<f64>, h_link: Option<f64>) -> (f64, f64) {
    let hn = h_node.unwrap_or(NO_COMPONENT_SENTINEL);
    let hl = h_link.unwrap_or(NO_COMPONENT_SENTINEL);
    let h = hn.max(hl);
    (h, h.max(0.0))
}
