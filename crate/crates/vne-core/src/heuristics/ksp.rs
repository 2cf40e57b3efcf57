//! Yen's k-shortest loop-free paths over the hop-count metric, with
//! deterministic (hop count, lexicographic node sequence) ordering.

use crate::net::PhysicalNetwork;
use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KspError {
    #[error("no physical path between {src} and {dst}")]
    NoPath { src: usize, dst: usize },
}

/// Shortest path by hop count, lexicographically smallest among ties.
/// `banned_nodes[n]` removes a node; `banned_edges` removes links
/// (stored with endpoints in sorted order).
fn shortest_path_lex(
    pn: &PhysicalNetwork,
    src: usize,
    dst: usize,
    banned_nodes: &[bool],
    banned_edges: &HashSet<(usize, usize)>,
) -> Option<Vec<usize>> {
    if banned_nodes[src] || banned_nodes[dst] {
        return None;
    }
    // Best-first over (hop count, path); the first pop of a node is its
    // (len, lex)-minimal path because all edges weigh 1.
    let mut heap: BinaryHeap<Reverse<(usize, Vec<usize>)>> = BinaryHeap::new();
    let mut settled = vec![false; pn.node_count()];
    heap.push(Reverse((0, vec![src])));
    while let Some(Reverse((len, path))) = heap.pop() {
        let here = *path.last().unwrap();
        if here == dst {
            return Some(path);
        }
        if settled[here] {
            continue;
        }
        settled[here] = true;
        for &(next, _) in pn.neighbors(here) {
            if settled[next] || banned_nodes[next] {
                continue;
            }
            let key = (here.min(next), here.max(next));
            if banned_edges.contains(&key) {
                continue;
            }
            let mut p = path.clone();
            p.push(next);
            heap.push(Reverse((len + 1, p)));
        }
    }
    None
}

/// Shortest path whose links all carry at least `demand` available
/// bandwidth, within `max_hops`, lexicographically smallest among ties.
/// This is the limiting case of the k-shortest scan with unbounded k: the
/// first bandwidth-feasible candidate in (hop count, lex) order.
pub fn feasible_shortest_path(
    pn: &PhysicalNetwork,
    link_avail: &[f64],
    demand: f64,
    src: usize,
    dst: usize,
    max_hops: Option<usize>,
) -> Option<Vec<usize>> {
    let cap = max_hops.unwrap_or(usize::MAX);
    let mut heap: BinaryHeap<Reverse<(usize, Vec<usize>)>> = BinaryHeap::new();
    let mut settled = vec![false; pn.node_count()];
    heap.push(Reverse((0, vec![src])));
    while let Some(Reverse((len, path))) = heap.pop() {
        let here = *path.last().unwrap();
        if here == dst {
            return Some(path);
        }
        if settled[here] || len >= cap {
            continue;
        }
        settled[here] = true;
        for &(next, link) in pn.neighbors(here) {
            if !settled[next] && link_avail[link] >= demand {
                let mut p = path.clone();
                p.push(next);
                heap.push(Reverse((len + 1, p)));
            }
        }
    }
    None
}

/// Up to `k` loop-free paths from `src` to `dst`, sorted by hop count with
/// lexicographic tie-breaking. `max_hops` optionally drops longer paths.
pub fn k_shortest_paths(
    pn: &PhysicalNetwork,
    src: usize,
    dst: usize,
    k: usize,
    max_hops: Option<usize>,
) -> Result<Vec<Vec<usize>>, KspError> {
    assert!(src != dst, "k_shortest_paths requires distinct endpoints");
    assert!(k >= 1);
    let no_nodes = vec![false; pn.node_count()];
    let no_edges = HashSet::new();
    let first = shortest_path_lex(pn, src, dst, &no_nodes, &no_edges)
        .ok_or(KspError::NoPath { src, dst })?;

    let mut accepted: Vec<Vec<usize>> = vec![first];
    // Candidates ordered by (hop count, node sequence); BTreeSet dedupes.
    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();

    while accepted.len() < k {
        let prev = accepted.last().unwrap().clone();
        for i in 0..prev.len() - 1 {
            let spur = prev[i];
            let root = &prev[..=i];
            let mut banned_edges = HashSet::new();
            for p in &accepted {
                if p.len() > i + 1 && p[..=i] == *root {
                    let (a, b) = (p[i], p[i + 1]);
                    banned_edges.insert((a.min(b), a.max(b)));
                }
            }
            let mut banned_nodes = vec![false; pn.node_count()];
            for &n in &root[..i] {
                banned_nodes[n] = true;
            }
            if let Some(spur_path) = shortest_path_lex(pn, spur, dst, &banned_nodes, &banned_edges)
            {
                let mut full = root[..i].to_vec();
                full.extend(spur_path);
                candidates.insert((full.len(), full));
            }
        }
        match candidates.iter().next().cloned() {
            Some(best) => {
                candidates.remove(&best);
                accepted.push(best.1);
            }
            None => break,
        }
    }
    if let Some(cap) = max_hops {
        accepted.retain(|p| p.len() - 1 <= cap);
        if accepted.is_empty() {
            return Err(KspError::NoPath { src, dst });
        }
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::oracle::all_simple_paths;

    fn pn(nodes: usize, links: &[(usize, usize)]) -> PhysicalNetwork {
        PhysicalNetwork::new(
            vec![1.0; nodes],
            links.iter().map(|&(u, v)| (u, v, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn triangle_orders_direct_then_detour() {
        let net = pn(3, &[(0, 1), (1, 2), (0, 2)]);
        let paths = k_shortest_paths(&net, 0, 2, 2, None).unwrap();
        assert_eq!(paths, vec![vec![0, 2], vec![0, 1, 2]]);
    }

    #[test]
    fn path_graph_has_unique_route() {
        let net = pn(4, &[(0, 1), (1, 2), (2, 3)]);
        let paths = k_shortest_paths(&net, 0, 3, 1, None).unwrap();
        assert_eq!(paths, vec![vec![0, 1, 2, 3]]);
        // Asking for more than exists returns just the one.
        let paths = k_shortest_paths(&net, 0, 3, 5, None).unwrap();
        assert_eq!(paths.len(), 1);
    }

    #[test]
    fn disconnected_pair_is_no_path() {
        let net = pn(4, &[(0, 1), (2, 3)]);
        assert_eq!(
            k_shortest_paths(&net, 0, 3, 3, None).unwrap_err(),
            KspError::NoPath { src: 0, dst: 3 }
        );
    }

    #[test]
    fn matches_brute_force_enumeration_truncated_at_k() {
        // Dense-ish 6-node graph.
        let net = pn(
            6,
            &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 5), (0, 5)],
        );
        let mut expected = all_simple_paths(&net, 0, 5);
        expected.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        for k in 1..=expected.len() + 2 {
            let got = k_shortest_paths(&net, 0, 5, k, None).unwrap();
            let want: Vec<_> = expected.iter().take(k).cloned().collect();
            assert_eq!(got, want, "k={k}");
        }
    }

    #[test]
    fn results_are_prefix_stable() {
        let net = pn(
            6,
            &[(0, 1), (0, 2), (1, 2), (1, 3), (2, 4), (3, 4), (3, 5), (4, 5), (0, 5)],
        );
        let k5 = k_shortest_paths(&net, 0, 5, 5, None).unwrap();
        let k6 = k_shortest_paths(&net, 0, 5, 6, None).unwrap();
        assert_eq!(&k6[..5], &k5[..]);
    }

    #[test]
    fn hop_cap_filters_long_paths() {
        let net = pn(3, &[(0, 1), (1, 2), (0, 2)]);
        let paths = k_shortest_paths(&net, 0, 2, 5, Some(1)).unwrap();
        assert_eq!(paths, vec![vec![0, 2]]);
    }
}
