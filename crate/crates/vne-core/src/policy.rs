//! Constraint-aware graph representation: the four-link-type heterogeneous
//! graph, the link-feature graph-attention encoder with actor/critic/lambda
//! heads, feasibility-consistency augmentations, and the redundancy-
//! reduction contrastive loss.

pub mod contrast;
pub mod encoder;

pub use contrast::barlow_twins_loss;
pub use encoder::{ArchConfig, Encoding, ForwardOut, FusionVariant, PolicyNet};

use crate::env::{EnvState, VneEnv};
use crate::net::{PhysicalNetwork, VNEInstance, VirtualNetwork};
use crate::autodiff::Tensor;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub const NODE_FEATURES: usize = 5;

/// One relation's directed message edges, grouped by destination so segment
/// ops see sorted ids. `feat` is the scalar link attribute per edge.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Relation {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub feat: Vec<f64>,
}

impl Relation {
    fn push(&mut self, src: usize, dst: usize, feat: f64) {
        self.src.push(src);
        self.dst.push(dst);
        self.feat.push(feat);
    }

    fn sort_by_dst(&mut self) {
        let mut order: Vec<usize> = (0..self.dst.len()).collect();
        order.sort_by_key(|&i| (self.dst[i], self.src[i]));
        self.src = order.iter().map(|&i| self.src[i]).collect();
        let feat = order.iter().map(|&i| self.feat[i]).collect();
        self.dst.sort_unstable();
        self.feat = feat;
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// The joint VN+PN graph at one decision step: node feature matrices plus
/// intra-virtual, intra-physical, already-mapped and imaginary decision
/// link sets. Cross-relation indices address the stacked [virtual; physical]
/// node matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub nv: usize,
    pub np: usize,
    pub x_virtual: Tensor,
    pub x_physical: Tensor,
    pub virtual_links: Relation,
    pub physical_links: Relation,
    pub mapped_links: Relation,
    pub decision_links: Relation,
}

struct FeatureScale {
    max_node_cap: f64,
    max_link_cap: f64,
}

impl FeatureScale {
    fn of(pn: &PhysicalNetwork) -> Self {
        let max_node_cap = pn
            .node_capacities()
            .into_iter()
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let max_link_cap = pn
            .links()
            .iter()
            .map(|l| l.capacity)
            .fold(0.0f64, f64::max)
            .max(1e-9);
        FeatureScale { max_node_cap, max_link_cap }
    }
}

/// Five per-node features: scaled compute, scaled degree, and scaled
/// max / min / mean adjacent bandwidth.
fn node_feature_row(
    compute: f64,
    adjacent_bw: &[f64],
    max_degree: f64,
    scale: &FeatureScale,
) -> [f64; NODE_FEATURES] {
    let (mut bw_max, mut bw_min, mut bw_sum) = (0.0f64, f64::INFINITY, 0.0f64);
    for &bw in adjacent_bw {
        bw_max = bw_max.max(bw);
        bw_min = bw_min.min(bw);
        bw_sum += bw;
    }
    let degree = adjacent_bw.len() as f64;
    let (bw_min, bw_avg) = if adjacent_bw.is_empty() {
        (0.0, 0.0)
    } else {
        (bw_min, bw_sum / degree)
    };
    [
        compute / scale.max_node_cap,
        degree / max_degree.max(1.0),
        bw_max / scale.max_link_cap,
        bw_min / scale.max_link_cap,
        bw_avg / scale.max_link_cap,
    ]
}

/// Extra links injected by an augmentation: (endpoint, endpoint, bandwidth).
pub type ExtraLinks = Vec<(usize, usize, f64)>;

/// Builds the heterogeneous graph for the current decision step.
pub fn build_hetero_graph(env: &VneEnv, state: &EnvState) -> HeteroGraph {
    build_hetero_graph_with_extras(env, state, &[], &[])
}

/// As `build_hetero_graph`, with additional physical links (an availability
/// each) and zero-or-more additional virtual links folded into both the
/// topology relations and the affected nodes' aggregate features.
pub fn build_hetero_graph_with_extras(
    env: &VneEnv,
    state: &EnvState,
    extra_physical: &[(usize, usize, f64)],
    extra_virtual: &[(usize, usize, f64)],
) -> HeteroGraph {
    let inst: &VNEInstance = &state.inst;
    let (vn, pn) = (&inst.vn, &inst.pn);
    let (nv, np) = (vn.node_count(), pn.node_count());
    let scale = FeatureScale::of(pn);

    // Adjacent bandwidth lists with augmentation extras folded in.
    let mut v_adj_bw: Vec<Vec<f64>> = (0..nv)
        .map(|n| vn.incident(n).iter().map(|&(_, l)| vn.link(l).demand).collect())
        .collect();
    for &(u, v, d) in extra_virtual {
        v_adj_bw[u].push(d);
        v_adj_bw[v].push(d);
    }
    let mut p_adj_bw: Vec<Vec<f64>> = (0..np)
        .map(|n| {
            pn.neighbors(n)
                .iter()
                .map(|&(_, l)| state.link_avail[l])
                .collect()
        })
        .collect();
    for &(u, v, bw) in extra_physical {
        p_adj_bw[u].push(bw);
        p_adj_bw[v].push(bw);
    }

    let v_max_deg = v_adj_bw.iter().map(|a| a.len()).max().unwrap_or(0) as f64;
    let p_max_deg = p_adj_bw.iter().map(|a| a.len()).max().unwrap_or(0) as f64;

    let mut xv = Vec::with_capacity(nv * NODE_FEATURES);
    for n in 0..nv {
        xv.extend(node_feature_row(vn.node_demand(n), &v_adj_bw[n], v_max_deg, &scale));
    }
    let mut xp = Vec::with_capacity(np * NODE_FEATURES);
    for n in 0..np {
        xp.extend(node_feature_row(state.node_avail[n], &p_adj_bw[n], p_max_deg, &scale));
    }

    // Intra relations carry both message directions plus zero-feature
    // self-loops so isolated nodes still attend to themselves.
    let mut virtual_links = Relation::default();
    for l in vn.links() {
        let f = l.demand / scale.max_link_cap;
        virtual_links.push(l.u, l.v, f);
        virtual_links.push(l.v, l.u, f);
    }
    for &(u, v, d) in extra_virtual {
        let f = d / scale.max_link_cap;
        virtual_links.push(u, v, f);
        virtual_links.push(v, u, f);
    }
    for n in 0..nv {
        virtual_links.push(n, n, 0.0);
    }
    virtual_links.sort_by_dst();

    let mut physical_links = Relation::default();
    for (id, l) in pn.links().iter().enumerate() {
        let f = state.link_avail[id] / scale.max_link_cap;
        physical_links.push(l.u, l.v, f);
        physical_links.push(l.v, l.u, f);
    }
    for &(u, v, bw) in extra_physical {
        let f = bw / scale.max_link_cap;
        physical_links.push(u, v, f);
        physical_links.push(v, u, f);
    }
    for n in 0..np {
        physical_links.push(n, n, 0.0);
    }
    physical_links.sort_by_dst();

    // Cross relations address the stacked [virtual; physical] matrix.
    let mut mapped_links = Relation::default();
    for (vnode, host) in state.solution.node_map.iter().enumerate() {
        if let Some(p) = host {
            mapped_links.push(vnode, nv + p, 1.0);
            mapped_links.push(nv + p, vnode, 1.0);
        }
    }
    mapped_links.sort_by_dst();

    let mut decision_links = Relation::default();
    if let Some(current) = state.current_vnode() {
        for (p, &ok) in env.action_mask(state).iter().enumerate() {
            if ok {
                decision_links.push(current, nv + p, 1.0);
                decision_links.push(nv + p, current, 1.0);
            }
        }
    }
    decision_links.sort_by_dst();

    HeteroGraph {
        nv,
        np,
        x_virtual: Tensor::matrix(nv, NODE_FEATURES, xv),
        x_physical: Tensor::matrix(np, NODE_FEATURES, xp),
        virtual_links,
        physical_links,
        mapped_links,
        decision_links,
    }
}

/// Samples `count` distinct non-adjacent pairs, respecting existing links.
fn sample_non_adjacent_pairs(
    n: usize,
    is_linked: impl Fn(usize, usize) -> bool,
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<(usize, usize)> {
    let mut open: Vec<(usize, usize)> = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if !is_linked(u, v) {
                open.push((u, v));
            }
        }
    }
    if open.len() < count {
        log::debug!(
            "augmentation wanted {count} links but only {} non-adjacent pairs remain",
            open.len()
        );
    }
    // Partial Fisher-Yates: first `count` entries become the sample.
    let take = count.min(open.len());
    for i in 0..take {
        let j = rng.gen_range(i..open.len());
        open.swap(i, j);
    }
    open.truncate(take);
    open
}

/// Physical link addition: adds floor(eps * |N_p|) links between
/// non-adjacent physical node pairs, each with bandwidth one unit below the
/// smallest virtual-link demand (clamped at zero), so no solution's
/// feasibility verdict can change.
pub fn augment_physical(
    env: &VneEnv,
    state: &EnvState,
    eps: f64,
    rng: &mut ChaCha12Rng,
) -> HeteroGraph {
    let extras = sample_physical_extras(&state.inst, eps, rng);
    build_hetero_graph_with_extras(env, state, &extras, &[])
}

pub fn sample_physical_extras(inst: &VNEInstance, eps: f64, rng: &mut ChaCha12Rng) -> ExtraLinks {
    let np = inst.pn.node_count();
    let count = (eps * np as f64).floor() as usize;
    let bw = inst
        .vn
        .links()
        .iter()
        .map(|l| l.demand)
        .fold(f64::INFINITY, f64::min);
    let bw = if bw.is_finite() { (bw - 1.0).max(0.0) } else { 0.0 };
    sample_non_adjacent_pairs(np, |u, v| inst.pn.link_between(u, v).is_some(), count, rng)
        .into_iter()
        .map(|(u, v)| (u, v, bw))
        .collect()
}

/// Virtual link addition: adds floor(eps * |N_v|) zero-demand virtual links
/// between non-adjacent virtual node pairs (no-op on complete VNs).
pub fn augment_virtual(
    env: &VneEnv,
    state: &EnvState,
    eps: f64,
    rng: &mut ChaCha12Rng,
) -> HeteroGraph {
    let extras = sample_virtual_extras(&state.inst, eps, rng);
    build_hetero_graph_with_extras(env, state, &[], &extras)
}

pub fn sample_virtual_extras(inst: &VNEInstance, eps: f64, rng: &mut ChaCha12Rng) -> ExtraLinks {
    let nv = inst.vn.node_count();
    let count = (eps * nv as f64).floor() as usize;
    let linked = |u: usize, v: usize| {
        inst.vn.incident(u).iter().any(|&(other, _)| other == v)
    };
    sample_non_adjacent_pairs(nv, linked, count, rng)
        .into_iter()
        .map(|(u, v)| (u, v, 0.0))
        .collect()
}

/// Instance-level physical augmentation: the same link additions applied to
/// a real substrate copy, for feasibility-consistency checks.
pub fn augment_instance_physical(
    inst: &VNEInstance,
    eps: f64,
    rng: &mut ChaCha12Rng,
) -> VNEInstance {
    let extras = sample_physical_extras(inst, eps, rng);
    let mut pn = inst.pn.clone();
    for (u, v, bw) in extras {
        pn.add_link(u, v, bw).expect("sampled pair is non-adjacent");
    }
    VNEInstance::new(inst.vn.clone(), pn)
}

/// A trained policy as a simulation solver: strict-mode greedy decoding, so
/// the first positive-cost step rejects the instance. Rejected instances
/// report their trajectory's summed cost.
pub struct ConalSolver {
    pub policy: PolicyNet,
    pub env: crate::env::VneEnv,
}

impl ConalSolver {
    pub fn new(policy: PolicyNet, env: crate::env::VneEnv) -> Self {
        ConalSolver { policy, env }
    }
}

impl crate::sim::Solver for ConalSolver {
    fn name(&self) -> &str {
        "conal"
    }

    fn solve(&mut self, inst: &VNEInstance) -> crate::sim::SolveOutcome {
        let mut state = self.env.reset(std::sync::Arc::new(inst.clone()));
        let mut cost_total = 0.0;
        while !state.done {
            let mask = self.env.action_mask(&state);
            let graph = build_hetero_graph(&self.env, &state);
            let mut tape = crate::autodiff::Tape::new();
            let out = match self.policy.forward(&mut tape, &graph, &mask) {
                Ok(o) => o,
                Err(_) => break,
            };
            let probs = tape.value(out.probs).data().to_vec();
            let action = match encoder::select_action(&probs, &mask, None) {
                Some((a, _)) => a,
                None => break,
            };
            match self.env.step(&mut state, action, false) {
                Ok(res) => cost_total += res.cost,
                Err(_) => break,
            }
        }
        crate::sim::SolveOutcome { solution: state.solution, violation_total: cost_total }
    }
}

/// Instance-level virtual augmentation; returns the augmented instance and
/// the ids of the added zero-demand links.
pub fn augment_instance_virtual(
    inst: &VNEInstance,
    eps: f64,
    rng: &mut ChaCha12Rng,
) -> (VNEInstance, Vec<usize>) {
    let extras = sample_virtual_extras(inst, eps, rng);
    let demands: Vec<f64> = (0..inst.vn.node_count()).map(|i| inst.vn.node_demand(i)).collect();
    let mut links: Vec<(usize, usize, f64)> =
        inst.vn.links().iter().map(|l| (l.u, l.v, l.demand)).collect();
    let mut new_ids = Vec::new();
    for (u, v, d) in extras {
        new_ids.push(links.len());
        links.push((u, v, d));
    }
    let vn = VirtualNetwork::new(demands, links, inst.vn.arrival_time, inst.vn.lifetime)
        .expect("augmented VN is valid");
    (VNEInstance::new(vn, inst.pn.clone()), new_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, OrderPolicy};
    use crate::net::{PhysicalNetwork, VirtualNetwork};
    use rand_chacha::rand_core::SeedableRng;
    use std::sync::Arc;

    fn setup() -> (VneEnv, EnvState) {
        let pn = PhysicalNetwork::new(
            vec![50.0, 60.0, 70.0, 40.0],
            vec![(0, 1, 10.0), (1, 2, 30.0), (2, 3, 20.0), (0, 3, 25.0)],
        )
        .unwrap();
        let vn = VirtualNetwork::new(
            vec![10.0, 20.0, 5.0],
            vec![(0, 1, 10.0), (1, 2, 30.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let state = env.reset(Arc::new(VNEInstance::new(vn, pn)));
        (env, state)
    }

    #[test]
    fn fresh_state_has_no_mapped_links_and_full_decision_fanout() {
        let (env, state) = setup();
        let g = build_hetero_graph(&env, &state);
        assert!(g.mapped_links.is_empty());
        // All four physical nodes are potential hosts for demand 10.
        assert_eq!(g.decision_links.len(), 2 * 4);
    }

    #[test]
    fn one_placement_creates_one_mapped_pair() {
        let (env, mut state) = setup();
        env.step(&mut state, 2, true).unwrap();
        let g = build_hetero_graph(&env, &state);
        assert_eq!(g.mapped_links.len(), 2);
        // Messages in both directions between vnode 0 and stacked index nv+2.
        assert!(g
            .mapped_links
            .src
            .iter()
            .zip(&g.mapped_links.dst)
            .any(|(&s, &d)| s == 0 && d == 3 + 2));
    }

    #[test]
    fn adjacent_bandwidth_aggregates_before_scaling() {
        let pn = PhysicalNetwork::new(
            vec![100.0, 100.0, 100.0],
            vec![(0, 1, 10.0), (0, 2, 30.0)],
        )
        .unwrap();
        let vn = VirtualNetwork::new(vec![1.0], vec![], 0.0, 1.0).unwrap();
        let env = VneEnv::default();
        let state = env.reset(Arc::new(VNEInstance::new(vn, pn)));
        let g = build_hetero_graph(&env, &state);
        // Node 0: adjacent availabilities {10, 30}; max link capacity is 30.
        let row: Vec<f64> = (0..NODE_FEATURES).map(|j| g.x_physical.at(0, j)).collect();
        assert!((row[2] - 1.0).abs() < 1e-12, "max 30/30");
        assert!((row[3] - 10.0 / 30.0).abs() < 1e-12, "min 10/30");
        assert!((row[4] - 20.0 / 30.0).abs() < 1e-12, "avg 20/30");
    }

    #[test]
    fn zero_eps_leaves_graph_unchanged() {
        let (env, state) = setup();
        let base = build_hetero_graph(&env, &state);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = augment_physical(&env, &state, 0.0, &mut rng);
        let b = augment_virtual(&env, &state, 0.0, &mut rng);
        assert_eq!(base, a);
        assert_eq!(base, b);
    }

    #[test]
    fn physical_extras_carry_min_demand_minus_one() {
        let (_, state) = setup();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let extras = sample_physical_extras(&state.inst, 0.5, &mut rng);
        assert_eq!(extras.len(), 2);
        for &(_, _, bw) in &extras {
            assert_eq!(bw, 9.0, "min demand 10 minus 1");
        }
    }

    #[test]
    fn complete_vn_gains_no_virtual_extras() {
        let pn = PhysicalNetwork::new(vec![10.0, 10.0], vec![(0, 1, 10.0)]).unwrap();
        let vn = VirtualNetwork::new(
            vec![1.0, 1.0, 1.0],
            vec![(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let inst = VNEInstance::new(vn, pn);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        assert!(sample_virtual_extras(&inst, 1.0, &mut rng).is_empty());
    }
}
