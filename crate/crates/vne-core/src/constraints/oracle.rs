//! Brute-force exact solver for tiny instances, used as the ground-truth
//! oracle in tests. It enumerates node maps and simple-path routings with
//! its own feasibility arithmetic, independent of `check_solution`.

use crate::constraints::{consumption, revenue};
use crate::net::{PhysicalNetwork, Solution, VNEInstance};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance exceeds oracle limits: |N_v|={nv} (max {max_vn}), |N_p|={np} (max {max_pn})")]
    LimitExceeded { nv: usize, np: usize, max_vn: usize, max_pn: usize },
    #[error("candidate space too large: more than {0} routing combinations")]
    TooManyCandidates(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_vn: usize,
    pub max_pn: usize,
    /// Upper bound on enumerated (map, routing) combinations.
    pub max_candidates: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_vn: 3, max_pn: 8, max_candidates: 20_000_000 }
    }
}

/// All simple paths from `src` to `dst`, sorted by (hop count, node sequence).
pub fn all_simple_paths(pn: &PhysicalNetwork, src: usize, dst: usize) -> Vec<Vec<usize>> {
    let mut paths = Vec::new();
    let mut stack = vec![src];
    let mut visited = vec![false; pn.node_count()];
    visited[src] = true;
    fn dfs(
        pn: &PhysicalNetwork,
        dst: usize,
        stack: &mut Vec<usize>,
        visited: &mut Vec<bool>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let here = *stack.last().unwrap();
        if here == dst {
            out.push(stack.clone());
            return;
        }
        for &(next, _) in pn.neighbors(here) {
            if !visited[next] {
                visited[next] = true;
                stack.push(next);
                dfs(pn, dst, stack, visited, out);
                stack.pop();
                visited[next] = false;
            }
        }
    }
    dfs(pn, dst, &mut stack, &mut visited, &mut paths);
    paths.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    paths
}

fn check_limits(inst: &VNEInstance, limits: &OracleLimits) -> Result<(), OracleError> {
    let nv = inst.vn.node_count();
    let np = inst.pn.node_count();
    if nv > limits.max_vn || np > limits.max_pn {
        return Err(OracleError::LimitExceeded {
            nv,
            np,
            max_vn: limits.max_vn,
            max_pn: limits.max_pn,
        });
    }
    Ok(())
}

/// Oracle-side feasibility: recounts every constraint family directly from
/// the candidate assignment, mirroring the decision-variable formulation.
fn oracle_feasible(inst: &VNEInstance, hosts: &[usize], paths: &[&[usize]]) -> bool {
    let vn = &inst.vn;
    let pn = &inst.pn;
    // One-to-one in both directions.
    let mut used = vec![0usize; pn.node_count()];
    for &h in hosts {
        used[h] += 1;
        if used[h] > 1 {
            return false;
        }
    }
    // Per-assignment compute availability.
    for (vnode, &h) in hosts.iter().enumerate() {
        if vn.node_demand(vnode) > pn.node(h).available {
            return false;
        }
    }
    // Aggregate bandwidth per physical link.
    let mut load = vec![0.0f64; pn.link_count()];
    for (vlink, path) in paths.iter().enumerate() {
        let demand = vn.link(vlink).demand;
        for hop in path.windows(2) {
            match pn.link_between(hop[0], hop[1]) {
                Some(plink) => load[plink] += demand,
                None => return false,
            }
        }
    }
    load.iter().zip(pn.links()).all(|(&l, link)| l <= link.available)
}

/// Enumerates every total node map (injective or not) combined with every
/// simple-path routing, invoking `visit(candidate, oracle_verdict)` on each.
///
/// Colocated endpoints admit only the trivial single-node path, matching the
/// flow-conservation semantics of routing from a host to itself.
pub fn enumerate_candidates(
    inst: &VNEInstance,
    limits: &OracleLimits,
    mut visit: impl FnMut(&Solution, bool),
) -> Result<u64, OracleError> {
    check_limits(inst, limits)?;
    let nv = inst.vn.node_count();
    let np = inst.pn.node_count();
    let pair_paths = precompute_paths(&inst.pn);

    let mut total: u64 = 0;
    let map_count = (np as u64).pow(nv as u32);
    for code in 0..map_count {
        // Decode the map as base-|N_p| digits, most significant digit first,
        // so maps come out in lexicographic order.
        let mut hosts = vec![0usize; nv];
        let mut rest = code;
        for v in (0..nv).rev() {
            hosts[v] = (rest % np as u64) as usize;
            rest /= np as u64;
        }

        let trivial_paths: Vec<Vec<Vec<usize>>> = inst
            .vn
            .links()
            .iter()
            .map(|l| if hosts[l.u] == hosts[l.v] { vec![vec![hosts[l.u]]] } else { Vec::new() })
            .collect();
        let link_choices: Vec<&[Vec<usize>]> = inst
            .vn
            .links()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let (s, d) = (hosts[l.u], hosts[l.v]);
                if s == d {
                    trivial_paths[i].as_slice()
                } else {
                    pair_paths[s][d].as_slice()
                }
            })
            .collect();

        let combo_count: u64 = link_choices.iter().map(|c| c.len() as u64).product();
        if combo_count == 0 {
            // Some link's hosts are disconnected: no candidate routing exists
            // for this map, so there is nothing to compare.
            continue;
        }
        total += combo_count;
        if total > limits.max_candidates {
            return Err(OracleError::TooManyCandidates(limits.max_candidates));
        }

        let mut sol = Solution::empty(0, &inst.vn);
        sol.node_map = hosts.iter().map(|&h| Some(h)).collect();
        let mut idx = vec![0usize; link_choices.len()];
        loop {
            let chosen: Vec<&[usize]> =
                idx.iter().zip(&link_choices).map(|(&i, c)| c[i].as_slice()).collect();
            let verdict = oracle_feasible(inst, &hosts, &chosen);
            for (slot, path) in sol.link_paths.iter_mut().zip(&chosen) {
                *slot = Some(path.to_vec());
            }
            sol.feasible = verdict;
            visit(&sol, verdict);

            // Advance the routing odometer; done when it wraps around.
            let mut pos = 0;
            while pos < idx.len() {
                idx[pos] += 1;
                if idx[pos] < link_choices[pos].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
    }
    Ok(total)
}

fn precompute_paths(pn: &PhysicalNetwork) -> Vec<Vec<Vec<Vec<usize>>>> {
    let np = pn.node_count();
    let mut table = vec![vec![Vec::new(); np]; np];
    for s in 0..np {
        for d in 0..np {
            if s != d {
                table[s][d] = all_simple_paths(pn, s, d);
            }
        }
    }
    table
}

/// Enumerates injective node maps with all simple-path routings, tracking
/// remaining availabilities, and returns a feasible solution maximizing R2C
/// (ties broken by the lexicographically first node map, then path choice).
pub fn exhaustive_solve(
    inst: &VNEInstance,
    limits: &OracleLimits,
) -> Result<Option<Solution>, OracleError> {
    check_limits(inst, limits)?;
    let nv = inst.vn.node_count();
    let np = inst.pn.node_count();
    if nv > np {
        return Ok(None);
    }
    let pair_paths = precompute_paths(&inst.pn);
    let rev = revenue(&inst.vn);

    let mut best: Option<(f64, Solution)> = None;
    let mut hosts: Vec<usize> = Vec::with_capacity(nv);
    let mut used = vec![false; np];

    fn route_links(
        inst: &VNEInstance,
        hosts: &[usize],
        pair_paths: &[Vec<Vec<Vec<usize>>>],
        vlink: usize,
        link_avail: &mut Vec<f64>,
        chosen: &mut Vec<Vec<usize>>,
        best: &mut Option<(f64, Solution)>,
        rev: f64,
    ) {
        if vlink == inst.vn.link_count() {
            let mut sol = Solution::empty(0, &inst.vn);
            sol.node_map = hosts.iter().map(|&h| Some(h)).collect();
            sol.link_paths = chosen.iter().cloned().map(Some).collect();
            sol.feasible = true;
            let cons = consumption(&sol, &inst.vn);
            let score = if cons > 0.0 { rev / cons } else { 0.0 };
            if best.as_ref().map_or(true, |(b, _)| score > *b) {
                *best = Some((score, sol));
            }
            return;
        }
        let l = inst.vn.link(vlink);
        let (s, d) = (hosts[l.u], hosts[l.v]);
        for path in &pair_paths[s][d] {
            let mut ok = true;
            for hop in path.windows(2) {
                let plink = inst.pn.link_between(hop[0], hop[1]).unwrap();
                if link_avail[plink] < l.demand {
                    ok = false;
                    break;
                }
            }
            if !ok {
                continue;
            }
            for hop in path.windows(2) {
                let plink = inst.pn.link_between(hop[0], hop[1]).unwrap();
                link_avail[plink] -= l.demand;
            }
            chosen.push(path.clone());
            route_links(inst, hosts, pair_paths, vlink + 1, link_avail, chosen, best, rev);
            chosen.pop();
            for hop in path.windows(2) {
                let plink = inst.pn.link_between(hop[0], hop[1]).unwrap();
                link_avail[plink] += l.demand;
            }
        }
    }

    fn place(
        inst: &VNEInstance,
        pair_paths: &[Vec<Vec<Vec<usize>>>],
        hosts: &mut Vec<usize>,
        used: &mut Vec<bool>,
        best: &mut Option<(f64, Solution)>,
        rev: f64,
    ) {
        let vnode = hosts.len();
        if vnode == inst.vn.node_count() {
            let mut link_avail = inst.pn.link_availabilities();
            let mut chosen = Vec::new();
            route_links(inst, hosts, pair_paths, 0, &mut link_avail, &mut chosen, best, rev);
            return;
        }
        for p in 0..inst.pn.node_count() {
            if used[p] || inst.vn.node_demand(vnode) > inst.pn.node(p).available {
                continue;
            }
            used[p] = true;
            hosts.push(p);
            place(inst, pair_paths, hosts, used, best, rev);
            hosts.pop();
            used[p] = false;
        }
    }

    place(inst, &pair_paths, &mut hosts, &mut used, &mut best, rev);
    Ok(best.map(|(_, sol)| sol))
}

/// Seeded random tiny instance within the default oracle limits, mixing
/// feasible and infeasible cases; used by agreement sweeps.
pub fn random_tiny_instance(seed: u64) -> VNEInstance {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let np = rng.gen_range(2..=6);
    let caps: Vec<f64> = (0..np).map(|_| rng.gen_range(5.0..40.0)).collect();
    let mut links = Vec::new();
    for u in 0..np {
        for v in u + 1..np {
            if rng.gen::<f64>() < 0.55 {
                links.push((u, v, rng.gen_range(5.0..40.0)));
            }
        }
    }
    for u in 1..np {
        if !links.iter().any(|&(a, b, _)| b == u || a == u) {
            links.push((u - 1, u, rng.gen_range(5.0..40.0)));
        }
    }
    let pn = PhysicalNetwork::new(caps, links).expect("generated substrate is valid");
    let nv = rng.gen_range(1..=3);
    let demands: Vec<f64> = (0..nv).map(|_| rng.gen_range(1.0..30.0)).collect();
    let mut vlinks = Vec::new();
    for u in 0..nv {
        for v in u + 1..nv {
            if rng.gen::<f64>() < 0.7 {
                vlinks.push((u, v, rng.gen_range(1.0..30.0)));
            }
        }
    }
    let vn = crate::net::VirtualNetwork::new(demands, vlinks, 0.0, 10.0)
        .expect("generated VN is valid");
    VNEInstance::new(vn, pn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{check_solution, r2c};
    use crate::net::{PhysicalNetwork, VirtualNetwork};

    fn triangle_pn() -> PhysicalNetwork {
        PhysicalNetwork::new(
            vec![50.0, 50.0, 50.0],
            vec![(0, 1, 30.0), (1, 2, 30.0), (0, 2, 30.0)],
        )
        .unwrap()
    }

    #[test]
    fn single_node_vn_gets_perfect_r2c() {
        let vn = VirtualNetwork::new(vec![5.0], vec![], 0.0, 1.0).unwrap();
        let pn = PhysicalNetwork::new(vec![10.0, 3.0], vec![(0, 1, 5.0)]).unwrap();
        let inst = VNEInstance::new(vn, pn);
        let sol = exhaustive_solve(&inst, &OracleLimits::default()).unwrap().unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.node_map[0], Some(0));
        assert_eq!(r2c(&sol, &inst.vn), 1.0);
    }

    #[test]
    fn impossible_demand_yields_none() {
        let vn = VirtualNetwork::new(vec![500.0], vec![], 0.0, 1.0).unwrap();
        let inst = VNEInstance::new(vn, triangle_pn());
        assert!(exhaustive_solve(&inst, &OracleLimits::default()).unwrap().is_none());
    }

    #[test]
    fn optimal_uses_direct_edge_on_triangle() {
        let vn = VirtualNetwork::new(vec![5.0, 5.0], vec![(0, 1, 10.0)], 0.0, 1.0).unwrap();
        let inst = VNEInstance::new(vn, triangle_pn());
        let sol = exhaustive_solve(&inst, &OracleLimits::default()).unwrap().unwrap();
        assert_eq!(sol.link_paths[0].as_ref().unwrap().len(), 2);
        assert_eq!(r2c(&sol, &inst.vn), 1.0);
        // Lexicographic tie-break: first injective map (0, 1).
        assert_eq!(sol.node_map, vec![Some(0), Some(1)]);
    }

    #[test]
    fn limits_are_enforced() {
        let vn = VirtualNetwork::new(vec![1.0; 4], vec![], 0.0, 1.0).unwrap();
        let inst = VNEInstance::new(vn, triangle_pn());
        assert!(matches!(
            exhaustive_solve(&inst, &OracleLimits::default()),
            Err(OracleError::LimitExceeded { .. })
        ));
    }

    #[test]
    fn enumerated_verdicts_match_checker_on_small_instance() {
        let vn =
            VirtualNetwork::new(vec![10.0, 20.0], vec![(0, 1, 25.0)], 0.0, 1.0).unwrap();
        let inst = VNEInstance::new(vn, triangle_pn());
        let mut any_feasible = false;
        let mut candidates = 0u64;
        enumerate_candidates(&inst, &OracleLimits::default(), |sol, verdict| {
            candidates += 1;
            let report = check_solution(&inst, sol).unwrap();
            assert_eq!(report.feasible(), verdict, "disagreement on {sol:?}");
            any_feasible |= verdict;
        })
        .unwrap();
        assert!(candidates > 0);
        assert!(any_feasible);
    }

    #[test]
    fn solver_output_appears_in_enumerated_feasible_set() {
        let vn =
            VirtualNetwork::new(vec![10.0, 20.0], vec![(0, 1, 25.0)], 0.0, 1.0).unwrap();
        let inst = VNEInstance::new(vn, triangle_pn());
        let best = exhaustive_solve(&inst, &OracleLimits::default()).unwrap().unwrap();
        let mut found = false;
        let mut best_r2c: f64 = 0.0;
        enumerate_candidates(&inst, &OracleLimits::default(), |sol, verdict| {
            if verdict {
                best_r2c = best_r2c.max(r2c(sol, &inst.vn));
                if sol.node_map == best.node_map && sol.link_paths == best.link_paths {
                    found = true;
                }
            }
        })
        .unwrap();
        assert!(found);
        assert!((r2c(&best, &inst.vn) - best_r2c).abs() < 1e-12);
    }
}
