//! Seeded generation of physical topologies and VN request streams, plus the
//! discrete-event loop that feeds instances to a solver and settles
//! departures. A whole run is a pure function of (config, seed).

use crate::constraints::{check_solution, consumption, r2c, revenue};
use crate::net::{NetError, PhysicalNetwork, Solution, VNEInstance, VirtualNetwork};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// All simulation distribution parameters, mirroring the default network
/// system setup: a 100-node Waxman substrate with ~500 links, 1000 requests,
/// Poisson arrivals and exponential lifetimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub pn_nodes: usize,
    pub waxman_alpha: f64,
    pub waxman_beta: f64,
    pub node_cap_range: (f64, f64),
    pub link_cap_range: (f64, f64),
    pub vn_count: usize,
    pub vn_size_range: (usize, usize),
    pub vn_node_demand_range: (f64, f64),
    pub vn_link_demand_range: (f64, f64),
    pub vn_link_prob: f64,
    pub lifetime_mean: f64,
    /// Average arrived VN count per time unit (Poisson rate).
    pub arrival_rate: f64,
    pub seed: u64,
    /// Optional edge-list file; replaces Waxman generation when set.
    pub topology_file: Option<String>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            pn_nodes: 100,
            waxman_alpha: 0.5,
            waxman_beta: 0.2,
            node_cap_range: (50.0, 100.0),
            link_cap_range: (50.0, 100.0),
            vn_count: 1000,
            vn_size_range: (2, 10),
            vn_node_demand_range: (0.0, 20.0),
            vn_link_demand_range: (0.0, 50.0),
            vn_link_prob: 0.5,
            lifetime_mean: 500.0,
            arrival_rate: 0.14,
            seed: 0,
            topology_file: None,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.pn_nodes < 2 {
            return Err(SimError::InvalidConfig("pn_nodes must be >= 2".into()));
        }
        if !(self.waxman_alpha > 0.0 && self.waxman_alpha <= 1.0)
            || !(self.waxman_beta > 0.0 && self.waxman_beta <= 1.0)
        {
            return Err(SimError::InvalidConfig("waxman parameters must be in (0,1]".into()));
        }
        if self.arrival_rate <= 0.0 {
            return Err(SimError::InvalidConfig("arrival_rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.vn_link_prob) {
            return Err(SimError::InvalidConfig("vn_link_prob must be in [0,1]".into()));
        }
        if self.lifetime_mean <= 0.0 {
            return Err(SimError::InvalidConfig("lifetime_mean must be positive".into()));
        }
        let ranges_ok = self.node_cap_range.0 <= self.node_cap_range.1
            && self.link_cap_range.0 <= self.link_cap_range.1
            && self.vn_size_range.0 <= self.vn_size_range.1
            && self.vn_size_range.0 >= 1
            && self.vn_node_demand_range.0 <= self.vn_node_demand_range.1
            && self.vn_link_demand_range.0 <= self.vn_link_demand_range.1;
        if !ranges_ok {
            return Err(SimError::InvalidConfig("empty range".into()));
        }
        Ok(())
    }
}

fn uniform_in(rng: &mut ChaCha12Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

/// Generates a connected Waxman graph: nodes placed uniformly in the unit
/// square, each pair linked with probability beta * exp(-d / (alpha * L)).
/// Disconnected draws are repaired by linking the closest inter-component
/// node pair until connected.
pub fn gen_waxman(
    n: usize,
    alpha: f64,
    beta: f64,
    node_cap_range: (f64, f64),
    link_cap_range: (f64, f64),
    rng: &mut ChaCha12Rng,
) -> PhysicalNetwork {
    assert!(n >= 2);
    assert!(alpha > 0.0 && alpha <= 1.0 && beta > 0.0 && beta <= 1.0);
    let positions: Vec<(f64, f64)> =
        (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let dist = |a: usize, b: usize| -> f64 {
        let dx = positions[a].0 - positions[b].0;
        let dy = positions[a].1 - positions[b].1;
        (dx * dx + dy * dy).sqrt()
    };
    let mut max_dist: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            max_dist = max_dist.max(dist(i, j));
        }
    }
    if max_dist == 0.0 {
        max_dist = 1.0;
    }
    let caps: Vec<f64> = (0..n).map(|_| uniform_in(rng, node_cap_range)).collect();
    let mut net = PhysicalNetwork::new(caps, Vec::new()).expect("valid node set");
    for i in 0..n {
        for j in i + 1..n {
            let p = beta * (-dist(i, j) / (alpha * max_dist)).exp();
            if rng.gen::<f64>() < p {
                let bw = uniform_in(rng, link_cap_range);
                net.add_link(i, j, bw).expect("fresh pair");
            }
        }
    }
    // Connectivity repair: bridge the globally closest inter-component pair.
    loop {
        let comp = components(&net);
        if comp.iter().max().map_or(true, |&m| m == 0) {
            break;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for u in 0..n {
            for v in u + 1..n {
                if comp[u] != comp[v] {
                    let d = dist(u, v);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, u, v));
                    }
                }
            }
        }
        let (_, u, v) = best.expect("disconnected graph has an inter-component pair");
        let bw = uniform_in(rng, link_cap_range);
        net.add_link(u, v, bw).expect("inter-component pair is non-adjacent");
    }
    net
}

fn components(net: &PhysicalNetwork) -> Vec<usize> {
    let n = net.node_count();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(u) = stack.pop() {
            for &(v, _) in net.neighbors(u) {
                if comp[v] == usize::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Bisects the Waxman beta parameter until the mean link count over
/// `probe_seeds` draws lands within `tol` of `target_links`.
pub fn calibrate_waxman_beta(
    n: usize,
    alpha: f64,
    node_cap_range: (f64, f64),
    link_cap_range: (f64, f64),
    target_links: f64,
    tol: f64,
    probe_seeds: u64,
) -> f64 {
    let mean_links = |beta: f64| -> f64 {
        let total: usize = (0..probe_seeds)
            .map(|s| {
                let mut rng = ChaCha12Rng::seed_from_u64(0xCA11B8 ^ s);
                gen_waxman(n, alpha, beta, node_cap_range, link_cap_range, &mut rng).link_count()
            })
            .sum();
        total as f64 / probe_seeds as f64
    };
    let (mut lo, mut hi) = (1e-3, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let m = mean_links(mid);
        if (m - target_links).abs() <= tol {
            return mid;
        }
        if m < target_links {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws one VN request: uniform size, uniform demands, pairwise links with
/// the configured probability, connectivity repair, exponential lifetime.
pub fn gen_vn_request(
    config: &SimulationConfig,
    arrival_time: f64,
    rng: &mut ChaCha12Rng,
) -> VirtualNetwork {
    let size = if config.vn_size_range.0 == config.vn_size_range.1 {
        config.vn_size_range.0
    } else {
        rng.gen_range(config.vn_size_range.0..=config.vn_size_range.1)
    };
    let demands: Vec<f64> =
        (0..size).map(|_| uniform_in(rng, config.vn_node_demand_range)).collect();
    let mut links: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..size {
        for j in i + 1..size {
            if rng.gen::<f64>() < config.vn_link_prob {
                links.push((i, j, uniform_in(rng, config.vn_link_demand_range)));
            }
        }
    }
    // Connectivity repair: merge components by linking random representatives.
    let mut comp: Vec<usize> = (0..size).collect();
    fn find(comp: &mut Vec<usize>, x: usize) -> usize {
        if comp[x] != x {
            let root = find(comp, comp[x]);
            comp[x] = root;
        }
        comp[x]
    }
    for &(u, v, _) in &links {
        let (ru, rv) = (find(&mut comp, u), find(&mut comp, v));
        if ru != rv {
            comp[ru] = rv;
        }
    }
    loop {
        let mut roots: Vec<usize> = (0..size).map(|x| find(&mut comp, x)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() <= 1 {
            break;
        }
        let members_a: Vec<usize> =
            (0..size).filter(|&x| find(&mut comp, x) == roots[0]).collect();
        let members_b: Vec<usize> =
            (0..size).filter(|&x| find(&mut comp, x) == roots[1]).collect();
        let u = members_a[rng.gen_range(0..members_a.len())];
        let v = members_b[rng.gen_range(0..members_b.len())];
        links.push((
            u.min(v),
            u.max(v),
            uniform_in(rng, config.vn_link_demand_range),
        ));
        let (ru, rv) = (find(&mut comp, u), find(&mut comp, v));
        comp[ru] = rv;
    }
    let lifetime_dist = Exp::new(1.0 / config.lifetime_mean).expect("positive mean");
    let lifetime = lifetime_dist.sample(rng).max(f64::MIN_POSITIVE);
    VirtualNetwork::new(demands, links, arrival_time, lifetime).expect("generated VN is valid")
}

/// Pre-generates the full arrival stream for a run.
pub fn gen_request_stream(config: &SimulationConfig, rng: &mut ChaCha12Rng) -> Vec<VirtualNetwork> {
    let gap_dist = Exp::new(config.arrival_rate).expect("positive rate");
    let mut t = 0.0;
    (0..config.vn_count)
        .map(|_| {
            t += gap_dist.sample(rng);
            gen_vn_request(config, t, rng)
        })
        .collect()
}

/// Reads a physical topology from an edge-list file.
pub fn import_topology(path: &str) -> Result<PhysicalNetwork, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SimError::Io { path: path.to_string(), source })?;
    Ok(PhysicalNetwork::from_edge_list(&text)?)
}

/// What a solver produced for one instance. `violation_total` is the summed
/// step cost for trajectory-based solvers; ranking heuristics report 0.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub solution: Solution,
    pub violation_total: f64,
}

/// Solve-one-instance interface shared by heuristic and learned solvers.
pub trait Solver {
    fn name(&self) -> &str;
    fn solve(&mut self, inst: &VNEInstance) -> SolveOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Arrival,
    Accepted,
    Rejected,
    Departure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub vn_id: u64,
    /// Revenue, consumption, lifetime for acceptances; violation total for
    /// rejections.
    pub revenue: Option<f64>,
    pub consumption: Option<f64>,
    pub lifetime: Option<f64>,
    pub violation_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub vn_id: u64,
    pub arrival_time: f64,
    pub lifetime: f64,
    pub accepted: bool,
    pub revenue: f64,
    pub consumption: Option<f64>,
    pub r2c: f64,
    pub solve_seconds: f64,
    pub violation_total: f64,
    pub solver_panicked: bool,
}

/// Everything a run produced: per-instance outcomes, the event log, and the
/// final substrate state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub solver: String,
    pub seed: u64,
    pub outcomes: Vec<InstanceOutcome>,
    pub events: Vec<Event>,
    pub accepted_count: usize,
    pub total_count: usize,
    pub final_node_avail: Vec<f64>,
    pub final_link_avail: Vec<f64>,
}

/// Builds the substrate for a config: an imported edge list when configured,
/// otherwise a seeded Waxman draw.
pub fn build_topology(config: &SimulationConfig, rng: &mut ChaCha12Rng) -> Result<PhysicalNetwork, SimError> {
    match &config.topology_file {
        Some(path) => import_topology(path),
        None => Ok(gen_waxman(
            config.pn_nodes,
            config.waxman_alpha,
            config.waxman_beta,
            config.node_cap_range,
            config.link_cap_range,
            rng,
        )),
    }
}

pub fn run_simulation(solver: &mut dyn Solver, config: &SimulationConfig) -> Result<SimulationRecord, SimError> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let pn = build_topology(config, &mut rng)?;
    let requests = gen_request_stream(config, &mut rng);
    Ok(run_simulation_on(solver, config, pn, requests))
}

struct DepartureKey(f64, u64);

impl PartialEq for DepartureKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for DepartureKey {}
impl PartialOrd for DepartureKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for DepartureKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// The discrete-event loop on a prebuilt substrate. Departures at time t
/// settle before arrivals at time t, so simultaneous releases free resources
/// for the incoming request.
pub fn run_simulation_on(
    solver: &mut dyn Solver,
    config: &SimulationConfig,
    mut pn: PhysicalNetwork,
    requests: Vec<VirtualNetwork>,
) -> SimulationRecord {
    let mut events = Vec::new();
    let mut outcomes = Vec::new();
    let mut departures: BinaryHeap<Reverse<DepartureKey>> = BinaryHeap::new();
    let mut active: Vec<Option<(Solution, VirtualNetwork)>> = vec![None; requests.len()];
    let mut accepted_count = 0;

    for (idx, vn) in requests.into_iter().enumerate() {
        let vn_id = idx as u64;
        let now = vn.arrival_time;
        // Settle departures due strictly before, or exactly at, this arrival.
        while let Some(Reverse(DepartureKey(t, _))) = departures.peek() {
            if *t > now {
                break;
            }
            let Reverse(DepartureKey(t, id)) = departures.pop().unwrap();
            if let Some((sol, dep_vn)) = active[id as usize].take() {
                pn.release_solution(&sol, &dep_vn)
                    .expect("releasing a previously applied solution");
                events.push(Event {
                    time: t,
                    kind: EventKind::Departure,
                    vn_id: id,
                    revenue: None,
                    consumption: None,
                    lifetime: None,
                    violation_total: None,
                });
            }
        }

        events.push(Event {
            time: now,
            kind: EventKind::Arrival,
            vn_id,
            revenue: None,
            consumption: None,
            lifetime: None,
            violation_total: None,
        });

        let inst = VNEInstance::new(vn, pn.clone());
        let started = Instant::now();
        let solved = catch_unwind(AssertUnwindSafe(|| solver.solve(&inst)));
        let solve_seconds = started.elapsed().as_secs_f64();
        let VNEInstance { vn, .. } = inst;

        let (outcome, panicked) = match solved {
            Ok(o) => (o, false),
            Err(_) => (
                SolveOutcome { solution: Solution::empty(vn_id, &vn), violation_total: 0.0 },
                true,
            ),
        };
        let mut sol = outcome.solution;
        sol.id = vn_id;

        let verdict = sol.feasible
            && sol.is_complete(&vn)
            && check_solution(&VNEInstance::new(vn.clone(), pn.clone()), &sol)
                .map(|r| r.feasible())
                .unwrap_or(false);

        if verdict {
            pn.apply_solution(&sol, &vn).expect("checked solution applies cleanly");
            let rev = revenue(&vn);
            let cons = consumption(&sol, &vn);
            let score = r2c(&sol, &vn);
            events.push(Event {
                time: now,
                kind: EventKind::Accepted,
                vn_id,
                revenue: Some(rev),
                consumption: Some(cons),
                lifetime: Some(vn.lifetime),
                violation_total: None,
            });
            departures.push(Reverse(DepartureKey(now + vn.lifetime, vn_id)));
            outcomes.push(InstanceOutcome {
                vn_id,
                arrival_time: now,
                lifetime: vn.lifetime,
                accepted: true,
                revenue: rev,
                consumption: Some(cons),
                r2c: score,
                solve_seconds,
                violation_total: 0.0,
                solver_panicked: false,
            });
            accepted_count += 1;
            active[vn_id as usize] = Some((sol, vn));
        } else {
            events.push(Event {
                time: now,
                kind: EventKind::Rejected,
                vn_id,
                revenue: None,
                consumption: None,
                lifetime: None,
                violation_total: Some(outcome.violation_total),
            });
            outcomes.push(InstanceOutcome {
                vn_id,
                arrival_time: now,
                lifetime: vn.lifetime,
                accepted: false,
                revenue: revenue(&vn),
                consumption: None,
                r2c: 0.0,
                solve_seconds,
                violation_total: outcome.violation_total,
                solver_panicked: panicked,
            });
        }
    }

    // Drain remaining departures to close the event log.
    while let Some(Reverse(DepartureKey(t, id))) = departures.pop() {
        if let Some((sol, dep_vn)) = active[id as usize].take() {
            pn.release_solution(&sol, &dep_vn)
                .expect("releasing a previously applied solution");
            events.push(Event {
                time: t,
                kind: EventKind::Departure,
                vn_id: id,
                revenue: None,
                consumption: None,
                lifetime: None,
                violation_total: None,
            });
        }
    }

    let total_count = outcomes.len();
    SimulationRecord {
        solver: solver.name().to_string(),
        seed: config.seed,
        outcomes,
        events,
        accepted_count,
        total_count,
        final_node_avail: pn.node_availabilities(),
        final_link_avail: pn.link_availabilities(),
    }
}
