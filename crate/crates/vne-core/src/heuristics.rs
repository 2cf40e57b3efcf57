//! Classical training-free baselines: node-ranking greedy mapping with the
//! shared k-shortest-path link routing used by every solver in this crate.

pub mod ksp;

use crate::constraints::{
    check_solution, r2c, violation_link_route, RouteViolationMode,
};
use crate::net::{PhysicalNetwork, Solution, VNEInstance, VirtualNetwork};
use ksp::{k_shortest_paths, KspError};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("no physical path between {src} and {dst}")]
    NoPath { src: usize, dst: usize },
    #[error("all {k} candidate paths between {src} and {dst} violate bandwidth constraints")]
    NoFeasiblePath { src: usize, dst: usize, k: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum RankError {
    #[error("power iteration did not converge within {0} iterations")]
    NonConvergence(usize),
}

/// Node ids with scores, ordered by nonincreasing score (ties by id).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRanking {
    /// (node id, score) sorted by descending score, ascending id on ties.
    pub ranked: Vec<(usize, f64)>,
}

impl NodeRanking {
    fn from_scores(scores: Vec<f64>) -> Self {
        let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        NodeRanking { ranked }
    }

    pub fn order(&self) -> Vec<usize> {
        self.ranked.iter().map(|&(id, _)| id).collect()
    }
}

/// Hop budget implied by a maximum path length of 5 nodes.
pub const DEFAULT_MAX_HOPS: Option<usize> = Some(4);

/// Routes one virtual link given the current link availabilities (indexed
/// by physical link id).
///
/// The feasible case takes the shortest bandwidth-feasible path within
/// `max_hops` (the first feasible candidate of the hop-ordered scan, with
/// unbounded candidate count). When every such path violates, non-tolerant
/// mode returns `NoFeasiblePath`; tolerant mode falls back to the least
/// summed-violation path among the k shortest candidates.
pub fn route_link(
    pn: &PhysicalNetwork,
    link_avail: &[f64],
    demand: f64,
    src: usize,
    dst: usize,
    k: usize,
    max_hops: Option<usize>,
    tolerant: bool,
) -> Result<(Vec<usize>, f64), RouteError> {
    if let Some(path) = ksp::feasible_shortest_path(pn, link_avail, demand, src, dst, max_hops) {
        let avails: Vec<f64> = path
            .windows(2)
            .map(|hop| link_avail[pn.link_between(hop[0], hop[1]).unwrap()])
            .collect();
        let worst = violation_link_route(demand, &avails, RouteViolationMode::Feasible);
        debug_assert!(worst <= 0.0);
        return Ok((path, worst));
    }
    if !tolerant {
        return match k_shortest_paths(pn, src, dst, 1, None) {
            Ok(_) => Err(RouteError::NoFeasiblePath { src, dst, k }),
            Err(KspError::NoPath { src, dst }) => Err(RouteError::NoPath { src, dst }),
        };
    }
    // Least-violation fallback over the k shortest candidates, preferring
    // those within the hop budget.
    let paths = match k_shortest_paths(pn, src, dst, k, max_hops) {
        Ok(p) => p,
        Err(KspError::NoPath { .. }) => match k_shortest_paths(pn, src, dst, k, None) {
            Ok(p) => p,
            Err(KspError::NoPath { src, dst }) => return Err(RouteError::NoPath { src, dst }),
        },
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, path) in paths.iter().enumerate() {
        let avails: Vec<f64> = path
            .windows(2)
            .map(|hop| link_avail[pn.link_between(hop[0], hop[1]).unwrap()])
            .collect();
        let sum = violation_link_route(demand, &avails, RouteViolationMode::LeastViolation);
        if best.map_or(true, |(_, b)| sum < b) {
            best = Some((i, sum));
        }
    }
    let (i, sum) = best.expect("k_shortest_paths returned at least one path");
    Ok((paths[i].clone(), sum))
}

/// NRM score: available compute times summed adjacent available bandwidth.
pub fn rank_nodes_nrm(availability: &[f64], adjacent_bandwidths: &[Vec<f64>]) -> NodeRanking {
    let scores = availability
        .iter()
        .zip(adjacent_bandwidths)
        .map(|(&c, bws)| c * bws.iter().sum::<f64>())
        .collect();
    NodeRanking::from_scores(scores)
}

pub fn rank_physical_nrm(pn: &PhysicalNetwork) -> NodeRanking {
    let avail = pn.node_availabilities();
    let adj: Vec<Vec<f64>> = (0..pn.node_count())
        .map(|n| pn.neighbors(n).iter().map(|&(_, l)| pn.link(l).available).collect())
        .collect();
    rank_nodes_nrm(&avail, &adj)
}

pub fn rank_virtual_nrm(vn: &VirtualNetwork) -> NodeRanking {
    let demand: Vec<f64> = (0..vn.node_count()).map(|i| vn.node_demand(i)).collect();
    let adj: Vec<Vec<f64>> = (0..vn.node_count())
        .map(|n| vn.incident(n).iter().map(|&(_, l)| vn.link(l).demand).collect())
        .collect();
    rank_nodes_nrm(&demand, &adj)
}

/// Random-walk resource ranking: the fixed point of
/// r = (1 - d) * c + d * M * r with a bandwidth-normalized transition
/// matrix, solved by power iteration.
pub fn rank_nodes_grc(
    compute: &[f64],
    links: &[(usize, usize, f64)],
    damping: f64,
    tol: f64,
) -> Result<NodeRanking, RankError> {
    const MAX_ITERS: usize = 10_000;
    let n = compute.len();
    let total: f64 = compute.iter().sum();
    let c: Vec<f64> = if total > 0.0 {
        compute.iter().map(|&x| x / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    // Column-normalized bandwidth transition: m[i][j] = bw(i,j) / sum_k bw(k,j).
    let mut col_sum = vec![0.0f64; n];
    for &(u, v, bw) in links {
        col_sum[u] += bw;
        col_sum[v] += bw;
    }
    let mut r = c.clone();
    for iter in 0..MAX_ITERS {
        let mut next = vec![0.0f64; n];
        for &(u, v, bw) in links {
            if col_sum[v] > 0.0 {
                next[u] += bw / col_sum[v] * r[v];
            }
            if col_sum[u] > 0.0 {
                next[v] += bw / col_sum[u] * r[u];
            }
        }
        let mut delta: f64 = 0.0;
        for i in 0..n {
            next[i] = (1.0 - damping) * c[i] + damping * next[i];
            delta = delta.max((next[i] - r[i]).abs());
        }
        r = next;
        if delta < tol {
            return Ok(NodeRanking::from_scores(r));
        }
        let _ = iter;
    }
    Err(RankError::NonConvergence(MAX_ITERS))
}

pub fn rank_physical_grc(pn: &PhysicalNetwork, damping: f64, tol: f64) -> Result<NodeRanking, RankError> {
    let compute = pn.node_availabilities();
    let links: Vec<(usize, usize, f64)> =
        pn.links().iter().map(|l| (l.u, l.v, l.available)).collect();
    rank_nodes_grc(&compute, &links, damping, tol)
}

pub fn rank_virtual_grc(vn: &VirtualNetwork, damping: f64, tol: f64) -> Result<NodeRanking, RankError> {
    let compute: Vec<f64> = (0..vn.node_count()).map(|i| vn.node_demand(i)).collect();
    let links: Vec<(usize, usize, f64)> =
        vn.links().iter().map(|l| (l.u, l.v, l.demand)).collect();
    rank_nodes_grc(&compute, &links, damping, tol)
}

/// Which node-ranking metric a greedy solver uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingKind {
    Nrm,
    Grc,
}

pub const GRC_DAMPING: f64 = 0.85;
pub const GRC_TOL: f64 = 1e-4;

/// Greedy rank-matching: virtual nodes in descending rank, each placed on
/// the best-ranked unused compute-sufficient physical node, with that
/// node's prepared incident links routed non-tolerantly. A node with no
/// compute-sufficient candidate or a link with no feasible route is the
/// dead end: the request is rejected (no backtracking).
pub fn greedy_solve(
    inst: &VNEInstance,
    ranking: RankingKind,
    k: usize,
    max_hops: Option<usize>,
) -> Solution {
    let vn = &inst.vn;
    let pn = &inst.pn;
    let mut sol = Solution::empty(0, vn);
    let (v_order, p_order) = match ranking {
        RankingKind::Nrm => (rank_virtual_nrm(vn).order(), rank_physical_nrm(pn).order()),
        RankingKind::Grc => {
            let v = match rank_virtual_grc(vn, GRC_DAMPING, GRC_TOL) {
                Ok(r) => r.order(),
                Err(_) => return sol,
            };
            let p = match rank_physical_grc(pn, GRC_DAMPING, GRC_TOL) {
                Ok(r) => r.order(),
                Err(_) => return sol,
            };
            (v, p)
        }
    };

    let mut node_avail = pn.node_availabilities();
    let mut link_avail = pn.link_availabilities();
    let mut used = vec![false; pn.node_count()];

    for &vnode in &v_order {
        let demand = vn.node_demand(vnode);
        // The single best-ranked unused compute-sufficient candidate; a
        // routing failure there is the dead end, not a cue to scan further.
        let pnode = match p_order
            .iter()
            .copied()
            .find(|&p| !used[p] && node_avail[p] >= demand)
        {
            Some(p) => p,
            None => {
                sol.feasible = false;
                return sol;
            }
        };
        for &(other, vlink) in vn.incident(vnode) {
            let other_host = match sol.node_map[other] {
                Some(h) => h,
                None => continue,
            };
            let link_demand = vn.link(vlink).demand;
            match route_link(pn, &link_avail, link_demand, pnode, other_host, k, max_hops, false)
            {
                Ok((path, _)) => {
                    for hop in path.windows(2) {
                        let plink = pn.link_between(hop[0], hop[1]).unwrap();
                        link_avail[plink] -= link_demand;
                    }
                    sol.link_paths[vlink] = Some(path);
                }
                Err(_) => {
                    sol.feasible = false;
                    return sol;
                }
            }
        }
        node_avail[pnode] -= demand;
        used[pnode] = true;
        sol.node_map[vnode] = Some(pnode);
    }
    sol.feasible = true;
    debug_assert!(check_solution(inst, &sol).map(|r| r.feasible()).unwrap_or(false));
    sol
}

/// Convenience wrapper producing the solution's R2C for accepted instances.
pub fn greedy_solve_scored(
    inst: &VNEInstance,
    ranking: RankingKind,
    k: usize,
    max_hops: Option<usize>,
) -> (Solution, f64) {
    let sol = greedy_solve(inst, ranking, k, max_hops);
    let score = r2c(&sol, &inst.vn);
    (sol, score)
}

/// Node-ranking greedy baseline as a simulation solver.
pub struct GreedyRankSolver {
    pub kind: RankingKind,
    pub k: usize,
    pub max_hops: Option<usize>,
}

impl GreedyRankSolver {
    pub fn nrm(k: usize) -> Self {
        GreedyRankSolver { kind: RankingKind::Nrm, k, max_hops: DEFAULT_MAX_HOPS }
    }

    pub fn grc(k: usize) -> Self {
        GreedyRankSolver { kind: RankingKind::Grc, k, max_hops: DEFAULT_MAX_HOPS }
    }
}

impl crate::sim::Solver for GreedyRankSolver {
    fn name(&self) -> &str {
        match self.kind {
            RankingKind::Nrm => "nrm",
            RankingKind::Grc => "grc",
        }
    }

    fn solve(&mut self, inst: &VNEInstance) -> crate::sim::SolveOutcome {
        crate::sim::SolveOutcome {
            solution: greedy_solve(inst, self.kind, self.k, self.max_hops),
            violation_total: 0.0,
        }
    }
}

/// Exhaustive-search solver for tiny instances; rejects anything above the
/// oracle limits.
pub struct ExhaustiveSolver {
    pub limits: crate::constraints::oracle::OracleLimits,
}

impl crate::sim::Solver for ExhaustiveSolver {
    fn name(&self) -> &str {
        "exhaustive"
    }

    fn solve(&mut self, inst: &VNEInstance) -> crate::sim::SolveOutcome {
        let solution = crate::constraints::oracle::exhaustive_solve(inst, &self.limits)
            .ok()
            .flatten()
            .unwrap_or_else(|| Solution::empty(0, &inst.vn));
        crate::sim::SolveOutcome { solution, violation_total: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::check_solution;
    use crate::net::PhysicalNetwork;

    fn line_pn(n: usize) -> PhysicalNetwork {
        let links = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        PhysicalNetwork::new(vec![1.0; n], links).unwrap()
    }

    #[test]
    fn route_link_prefers_direct_edge() {
        let pn = PhysicalNetwork::new(
            vec![1.0; 3],
            vec![(0, 1, 50.0), (1, 2, 50.0), (0, 2, 50.0)],
        )
        .unwrap();
        let avail = pn.link_availabilities();
        let (path, violation) = route_link(&pn, &avail, 10.0, 0, 2, 5, None, false).unwrap();
        assert_eq!(path, vec![0, 2]);
        assert_eq!(violation, -40.0);
    }

    #[test]
    fn tolerant_route_picks_least_sum_violation() {
        // Three disjoint 2-hop routes between 0 and 4 with violation sums
        // 7, 3 and 9 for a demand of 10.
        let pn = PhysicalNetwork::new(
            vec![1.0; 5],
            vec![
                (0, 1, 5.0),
                (1, 4, 8.0),  // sum (10-5)+(10-8) = 7
                (0, 2, 9.0),
                (2, 4, 8.0),  // sum (10-9)+(10-8) = 3
                (0, 3, 2.0),
                (3, 4, 9.0),  // sum (10-2)+(10-9) = 9
            ],
        )
        .unwrap();
        let avail = pn.link_availabilities();
        let (path, violation) = route_link(&pn, &avail, 10.0, 0, 4, 5, None, true).unwrap();
        assert_eq!(path, vec![0, 2, 4]);
        assert_eq!(violation, 3.0);
        assert_eq!(
            route_link(&pn, &avail, 10.0, 0, 4, 5, None, false).unwrap_err(),
            RouteError::NoFeasiblePath { src: 0, dst: 4, k: 5 }
        );
    }

    #[test]
    fn zero_demand_routes_shortest_with_nonpositive_violation() {
        let pn = line_pn(4);
        let avail = pn.link_availabilities();
        let (path, violation) = route_link(&pn, &avail, 0.0, 0, 3, 5, None, false).unwrap();
        assert_eq!(path, vec![0, 1, 2, 3]);
        assert!(violation <= 0.0);
    }

    #[test]
    fn nrm_scores_match_definition() {
        // Isolated node scores 0; compute 10 with adjacent {20, 30} scores 500.
        let ranking = rank_nodes_nrm(&[10.0, 4.0], &[vec![20.0, 30.0], vec![]]);
        assert_eq!(ranking.ranked, vec![(0, 500.0), (1, 0.0)]);
    }

    #[test]
    fn nrm_ranking_is_scale_invariant() {
        let base = rank_nodes_nrm(&[10.0, 7.0, 3.0], &[vec![5.0], vec![9.0, 1.0], vec![2.0]]);
        let scaled = rank_nodes_nrm(
            &[20.0, 14.0, 6.0],
            &[vec![10.0], vec![18.0, 2.0], vec![4.0]],
        );
        assert_eq!(base.order(), scaled.order());
    }

    #[test]
    fn grc_low_damping_collapses_to_compute_ranking() {
        let compute = [3.0, 9.0, 1.0];
        let links = [(0, 1, 4.0), (1, 2, 6.0)];
        let ranking = rank_nodes_grc(&compute, &links, 1e-9, 1e-12).unwrap();
        assert_eq!(ranking.order(), vec![1, 0, 2]);
    }

    #[test]
    fn grc_symmetric_network_scores_equally() {
        let ranking = rank_nodes_grc(&[5.0, 5.0], &[(0, 1, 10.0)], 0.85, 1e-10).unwrap();
        assert!((ranking.ranked[0].1 - ranking.ranked[1].1).abs() < 1e-9);
    }

    #[test]
    fn grc_line_graph_ranks_interior_above_endpoints() {
        let links = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)];
        let ranking = rank_nodes_grc(&[1.0; 4], &links, 0.85, 1e-6).unwrap();
        // Independent oracle: dense fixed-point iteration.
        let mut r = [0.25f64; 4];
        for _ in 0..100_000 {
            let m = [
                [0.0, 0.5, 0.0, 0.0],
                [1.0, 0.0, 0.5, 0.0],
                [0.0, 0.5, 0.0, 1.0],
                [0.0, 0.0, 0.5, 0.0],
            ];
            let mut next = [0.0f64; 4];
            for i in 0..4 {
                let mv: f64 = (0..4).map(|j| m[i][j] * r[j]).sum();
                next[i] = 0.15 * 0.25 + 0.85 * mv;
            }
            r = next;
        }
        let scores: Vec<f64> = {
            let mut by_id = vec![0.0; 4];
            for &(id, s) in &ranking.ranked {
                by_id[id] = s;
            }
            by_id
        };
        for i in 0..4 {
            assert!((scores[i] - r[i]).abs() < 1e-4, "node {i}: {} vs {}", scores[i], r[i]);
        }
        assert!(scores[1] > scores[0] && scores[2] > scores[3]);
    }

    #[test]
    fn greedy_accepts_on_overprovisioned_pn() {
        let pn = PhysicalNetwork::new(
            vec![100.0; 4],
            vec![(0, 1, 100.0), (1, 2, 100.0), (2, 3, 100.0), (0, 3, 100.0)],
        )
        .unwrap();
        let vn = crate::net::VirtualNetwork::new(
            vec![10.0, 5.0],
            vec![(0, 1, 8.0)],
            0.0,
            10.0,
        )
        .unwrap();
        let inst = VNEInstance::new(vn, pn);
        for kind in [RankingKind::Nrm, RankingKind::Grc] {
            let (sol, score) = greedy_solve_scored(&inst, kind, 5, DEFAULT_MAX_HOPS);
            assert!(sol.feasible);
            assert!(score > 0.0);
            assert!(check_solution(&inst, &sol).unwrap().feasible());
        }
    }

    #[test]
    fn greedy_rejects_oversized_demand() {
        let pn = PhysicalNetwork::new(vec![10.0, 10.0], vec![(0, 1, 10.0)]).unwrap();
        let vn = crate::net::VirtualNetwork::new(vec![50.0], vec![], 0.0, 10.0).unwrap();
        let inst = VNEInstance::new(vn, pn);
        let sol = greedy_solve(&inst, RankingKind::Nrm, 5, DEFAULT_MAX_HOPS);
        assert!(!sol.feasible);
    }
}
