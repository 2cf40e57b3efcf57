//! Violation-tolerant CMDP for one embedding episode: per-step node
//! placement, prepared-incident-link routing, signed violation and cost
//! signals, masking, and trajectory records.

use crate::constraints::{
    check_solution, r2c, violation_node, violation_state, NO_COMPONENT_SENTINEL,
};
use crate::heuristics::route_link;
use crate::net::{Solution, StepViolation, VNEInstance};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid action {0}: physical node already hosts a virtual node of this VN")]
    NodeAlreadyUsed(usize),
    #[error("invalid action {0}: out of range")]
    ActionOutOfRange(usize),
    #[error("no unused physical node remains")]
    NoActionAvailable,
}

/// How virtual nodes are sequenced within an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderPolicy {
    /// Descending compute demand, ties by id.
    DemandDesc,
    /// Natural id order.
    ById,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub k_paths: usize,
    /// Hop budget for routing ("maximum path length" in nodes minus one).
    pub max_hops: Option<usize>,
    pub order: OrderPolicy,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            k_paths: 5,
            max_hops: crate::heuristics::DEFAULT_MAX_HOPS,
            order: OrderPolicy::DemandDesc,
        }
    }
}

/// Snapshot of one embedding episode after `t` placements. Availabilities
/// track the substrate snapshot minus the partial embedding, clamped at zero
/// in tolerant mode while the unclamped deficit lands in the violation trail.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub inst: Arc<VNEInstance>,
    pub order: Vec<usize>,
    pub t: usize,
    pub solution: Solution,
    pub node_avail: Vec<f64>,
    pub link_avail: Vec<f64>,
    pub used: Vec<bool>,
    pub done: bool,
}

impl EnvState {
    /// The virtual node to be placed at the current step.
    pub fn current_vnode(&self) -> Option<usize> {
        if self.done || self.t >= self.order.len() {
            None
        } else {
            Some(self.order[self.t])
        }
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub h: f64,
    pub cost: f64,
    pub done: bool,
}

/// One recorded decision: the pre-action state snapshot and its outcomes.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: EnvState,
    pub action: usize,
    pub reward: f64,
    pub h: f64,
    pub cost: f64,
    /// Adaptive reachability budget attached at collection time.
    pub budget: f64,
    pub log_prob: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub terminal_r2c: f64,
    pub terminal_feasible: bool,
}

impl Trajectory {
    pub fn total_cost(&self) -> f64 {
        self.transitions.iter().map(|t| t.cost).sum()
    }

    pub fn max_cost(&self) -> f64 {
        self.transitions.iter().map(|t| t.cost).fold(0.0, f64::max)
    }
}

/// The environment itself is stateless; episodes live in `EnvState`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VneEnv {
    pub config: EnvConfig,
}

impl VneEnv {
    pub fn new(config: EnvConfig) -> Self {
        VneEnv { config }
    }

    pub fn reset(&self, inst: Arc<VNEInstance>) -> EnvState {
        let nv = inst.vn.node_count();
        let mut order: Vec<usize> = (0..nv).collect();
        if self.config.order == OrderPolicy::DemandDesc {
            order.sort_by(|&a, &b| {
                inst.vn
                    .node_demand(b)
                    .partial_cmp(&inst.vn.node_demand(a))
                    .unwrap()
                    .then(a.cmp(&b))
            });
        }
        EnvState {
            solution: Solution::empty(0, &inst.vn),
            node_avail: inst.pn.node_availabilities(),
            link_avail: inst.pn.link_availabilities(),
            used: vec![false; inst.pn.node_count()],
            order,
            t: 0,
            done: false,
            inst,
        }
    }

    /// Virtual links incident to the current node whose opposite endpoint is
    /// already placed, in ascending link-id order.
    pub fn prepared_incident_links(&self, state: &EnvState) -> Vec<usize> {
        let vnode = match state.current_vnode() {
            Some(v) => v,
            None => return Vec::new(),
        };
        let mut links: Vec<usize> = state
            .inst
            .vn
            .incident(vnode)
            .iter()
            .filter(|(other, _)| state.solution.node_map[*other].is_some())
            .map(|&(_, vlink)| vlink)
            .collect();
        links.sort_unstable();
        links
    }

    /// True for potential hosts: unused by this VN and compute-sufficient.
    /// When no unused node has enough compute, falls back to all unused
    /// nodes; one-to-one placement is never relaxed.
    pub fn action_mask(&self, state: &EnvState) -> Vec<bool> {
        let vnode = match state.current_vnode() {
            Some(v) => v,
            None => return vec![false; state.used.len()],
        };
        let demand = state.inst.vn.node_demand(vnode);
        let sufficient: Vec<bool> = state
            .used
            .iter()
            .zip(&state.node_avail)
            .map(|(&used, &avail)| !used && avail >= demand)
            .collect();
        if sufficient.iter().any(|&b| b) {
            sufficient
        } else {
            state.used.iter().map(|&u| !u).collect()
        }
    }

    /// Places the current virtual node on `action` and routes its prepared
    /// incident links. Tolerant mode completes every episode and forces the
    /// feasibility flag for the terminal reward; strict mode ends the
    /// episode on the first positive cost.
    pub fn step(
        &self,
        state: &mut EnvState,
        action: usize,
        tolerant: bool,
    ) -> Result<StepResult, EnvError> {
        if state.done {
            return Err(EnvError::EpisodeFinished);
        }
        if action >= state.used.len() {
            return Err(EnvError::ActionOutOfRange(action));
        }
        if state.used[action] {
            return Err(EnvError::NodeAlreadyUsed(action));
        }
        let vnode = state.order[state.t];
        let demand = state.inst.vn.node_demand(vnode);

        let h_node = violation_node(demand, state.node_avail[action]);
        state.solution.node_map[vnode] = Some(action);
        state.used[action] = true;
        state.node_avail[action] = (state.node_avail[action] - demand).max(0.0);

        let mut h_link_worst: Option<f64> = None;
        for vlink in self.prepared_incident_links_of(state, vnode) {
            let link = state.inst.vn.link(vlink);
            let other = if link.u == vnode { link.v } else { link.u };
            let other_host = state.solution.node_map[other].expect("prepared link endpoint placed");
            let (path, violation) = match route_link(
                &state.inst.pn,
                &state.link_avail,
                link.demand,
                action,
                other_host,
                self.config.k_paths,
                self.config.max_hops,
                true,
            ) {
                Ok(found) => found,
                Err(_) => {
                    // Disconnected hosts cannot occur on connected substrates;
                    // treat defensively as a maximal violation with no route.
                    h_link_worst =
                        Some(h_link_worst.map_or(link.demand, |w: f64| w.max(link.demand)));
                    continue;
                }
            };
            for hop in path.windows(2) {
                let plink = state.inst.pn.link_between(hop[0], hop[1]).unwrap();
                state.link_avail[plink] = (state.link_avail[plink] - link.demand).max(0.0);
            }
            state.solution.link_paths[vlink] = Some(path);
            h_link_worst = Some(h_link_worst.map_or(violation, |w: f64| w.max(violation)));
        }

        let (h, cost) = violation_state(Some(h_node), h_link_worst);
        state.solution.violations.push(StepViolation {
            h_node,
            h_link: h_link_worst.unwrap_or(NO_COMPONENT_SENTINEL),
            h,
            cost,
        });
        state.t += 1;

        if !tolerant && cost > 0.0 {
            state.done = true;
            state.solution.feasible = false;
            return Ok(StepResult { reward: 0.0, h, cost, done: true });
        }

        let finished = state.t == state.order.len();
        let reward = if finished {
            state.done = true;
            if tolerant {
                // Training signal: measure R2C as if feasible.
                state.solution.feasible = true;
                r2c(&state.solution, &state.inst.vn)
            } else {
                let report = check_solution(&state.inst, &state.solution)
                    .expect("constructed solution is well-formed");
                state.solution.feasible = report.feasible();
                r2c(&state.solution, &state.inst.vn)
            }
        } else {
            0.0
        };
        Ok(StepResult { reward, h, cost, done: finished })
    }

    fn prepared_incident_links_of(&self, state: &EnvState, vnode: usize) -> Vec<usize> {
        let mut links: Vec<usize> = state
            .inst
            .vn
            .incident(vnode)
            .iter()
            .filter(|(other, _)| *other != vnode && state.solution.node_map[*other].is_some())
            .map(|&(_, vlink)| vlink)
            .collect();
        links.sort_unstable();
        links
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{PhysicalNetwork, VirtualNetwork};

    fn inst(vn: VirtualNetwork, pn: PhysicalNetwork) -> Arc<VNEInstance> {
        Arc::new(VNEInstance::new(vn, pn))
    }

    fn wide_pn() -> PhysicalNetwork {
        PhysicalNetwork::new(
            vec![50.0; 4],
            vec![(0, 1, 40.0), (1, 2, 40.0), (2, 3, 40.0), (0, 3, 40.0), (0, 2, 40.0)],
        )
        .unwrap()
    }

    #[test]
    fn reset_orders_by_descending_demand() {
        let vn = VirtualNetwork::new(vec![5.0, 9.0, 2.0], vec![(0, 1, 1.0), (1, 2, 1.0)], 0.0, 1.0)
            .unwrap();
        let env = VneEnv::default();
        let state = env.reset(inst(vn, wide_pn()));
        assert_eq!(state.order, vec![1, 0, 2]);
        assert_eq!(state.remaining(), 3);
        let env_id = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let vn2 =
            VirtualNetwork::new(vec![5.0, 9.0, 2.0], vec![(0, 1, 1.0), (1, 2, 1.0)], 0.0, 1.0)
                .unwrap();
        let state2 = env_id.reset(inst(vn2, wide_pn()));
        assert_eq!(state2.order, vec![0, 1, 2]);
    }

    #[test]
    fn first_placement_has_no_prepared_links() {
        let vn = VirtualNetwork::new(
            vec![1.0, 1.0, 1.0],
            vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let mut state = env.reset(inst(vn, wide_pn()));
        assert!(env.prepared_incident_links(&state).is_empty());
        env.step(&mut state, 0, true).unwrap();
        // Second node of the triangle: one prepared link back to node 0.
        assert_eq!(env.prepared_incident_links(&state), vec![0]);
        env.step(&mut state, 1, true).unwrap();
        // Third node: both incident links are now prepared.
        assert_eq!(env.prepared_incident_links(&state), vec![1, 2]);
    }

    #[test]
    fn star_leaf_after_hub_prepares_exactly_that_spoke() {
        // Star: hub 0 with leaves 1..3.
        let vn = VirtualNetwork::new(
            vec![1.0; 4],
            vec![(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let mut state = env.reset(inst(vn, wide_pn()));
        env.step(&mut state, 0, true).unwrap(); // hub
        assert_eq!(env.prepared_incident_links(&state), vec![0]);
        env.step(&mut state, 1, true).unwrap(); // leaf 1
        assert_eq!(env.prepared_incident_links(&state), vec![1]);
    }

    #[test]
    fn mask_excludes_used_and_insufficient_nodes() {
        let vn = VirtualNetwork::new(vec![30.0, 30.0], vec![(0, 1, 1.0)], 0.0, 1.0).unwrap();
        let pn = PhysicalNetwork::new(vec![50.0, 20.0, 50.0], vec![(0, 1, 9.0), (1, 2, 9.0)])
            .unwrap();
        let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let mut state = env.reset(inst(vn, pn));
        assert_eq!(env.action_mask(&state), vec![true, false, true]);
        env.step(&mut state, 0, true).unwrap();
        assert_eq!(env.action_mask(&state), vec![false, false, true]);
    }

    #[test]
    fn mask_falls_back_to_all_unused_when_compute_insufficient() {
        let vn = VirtualNetwork::new(vec![20.0, 20.0], vec![(0, 1, 1.0)], 0.0, 1.0).unwrap();
        let pn = PhysicalNetwork::new(vec![15.0, 10.0, 12.0], vec![(0, 1, 9.0), (1, 2, 9.0)])
            .unwrap();
        let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
        let mut state = env.reset(inst(vn, pn));
        assert_eq!(env.action_mask(&state), vec![true, true, true]);
        env.step(&mut state, 1, true).unwrap();
        // Fallback still excludes the used node.
        assert_eq!(env.action_mask(&state), vec![true, false, true]);
    }

    #[test]
    fn slack_placement_yields_negative_h_and_zero_cost() {
        let vn = VirtualNetwork::new(vec![45.0, 1.0], vec![(0, 1, 1.0)], 0.0, 1.0).unwrap();
        let env = VneEnv::default();
        let mut state = env.reset(inst(vn, wide_pn()));
        let res = env.step(&mut state, 0, true).unwrap();
        assert_eq!(res.h, -5.0);
        assert_eq!(res.cost, 0.0);
        assert_eq!(res.reward, 0.0);
        assert!(!res.done);
    }

    #[test]
    fn final_step_with_direct_paths_rewards_one() {
        let vn = VirtualNetwork::new(vec![10.0, 10.0], vec![(0, 1, 5.0)], 0.0, 1.0).unwrap();
        let env = VneEnv::default();
        let mut state = env.reset(inst(vn, wide_pn()));
        env.step(&mut state, 0, true).unwrap();
        let res = env.step(&mut state, 1, true).unwrap();
        assert!(res.done);
        assert_eq!(res.reward, 1.0);
        assert!(state.solution.feasible);
    }

    #[test]
    fn strict_mode_terminates_on_routing_deficit() {
        let vn = VirtualNetwork::new(vec![1.0, 1.0], vec![(0, 1, 43.0)], 0.0, 1.0).unwrap();
        // Single 40-unit corridor: routing demand 43 violates by 3.
        let pn = PhysicalNetwork::new(vec![50.0, 50.0], vec![(0, 1, 40.0)]).unwrap();
        let env = VneEnv::default();
        let mut state = env.reset(inst(vn, pn));
        env.step(&mut state, 0, false).unwrap();
        let res = env.step(&mut state, 1, false).unwrap();
        assert!(res.done);
        assert_eq!(res.cost, 3.0);
        assert_eq!(res.reward, 0.0);
        assert!(!state.solution.feasible);
        assert_eq!(env.step(&mut state, 0, false).unwrap_err(), EnvError::EpisodeFinished);
    }

    #[test]
    fn tolerant_mode_runs_all_steps_and_sums_rewards_to_terminal_r2c() {
        let vn = VirtualNetwork::new(
            vec![30.0, 30.0, 30.0],
            vec![(0, 1, 35.0), (1, 2, 35.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let env = VneEnv::default();
        let mut state = env.reset(inst(vn, wide_pn()));
        let mut reward_sum = 0.0;
        let mut steps = 0;
        while !state.done {
            let mask = env.action_mask(&state);
            let action = mask.iter().position(|&b| b).unwrap();
            let res = env.step(&mut state, action, true).unwrap();
            reward_sum += res.reward;
            steps += 1;
        }
        assert_eq!(steps, 3);
        assert_eq!(reward_sum, r2c(&state.solution, &state.inst.vn));
    }

    #[test]
    fn replaying_actions_reproduces_signals_exactly() {
        let vn = VirtualNetwork::new(
            vec![30.0, 20.0, 10.0],
            vec![(0, 1, 25.0), (1, 2, 45.0)],
            0.0,
            1.0,
        )
        .unwrap();
        let env = VneEnv::default();
        let instance = inst(vn, wide_pn());
        let mut state = env.reset(instance.clone());
        let actions = [2usize, 0, 1];
        let mut outcomes = Vec::new();
        for &a in &actions {
            outcomes.push(env.step(&mut state, a, true).unwrap());
        }
        let mut replay = env.reset(instance);
        for (&a, expected) in actions.iter().zip(&outcomes) {
            let got = env.step(&mut replay, a, true).unwrap();
            assert_eq!(&got, expected);
        }
    }
}
