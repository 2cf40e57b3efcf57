//! Core graph and resource data model: attributed undirected graphs with
//! compute units on nodes and bandwidth units on links, plus the
//! allocation/release ledger that keeps availabilities exact across
//! apply/release cycles.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate link between {0} and {1}")]
    DuplicateLink(usize, usize),
    #[error("node id {0} out of range (n={1})")]
    NodeOutOfRange(usize, usize),
    #[error("negative resource value {value} on {what}")]
    NegativeResource { what: String, value: f64 },
    #[error("availability {avail} exceeds capacity {cap} on {what}")]
    AvailExceedsCapacity { what: String, avail: f64, cap: f64 },
    #[error("insufficient resources on {what}: available {avail}, demand {demand}")]
    InsufficientResources { what: String, avail: f64, demand: f64 },
    #[error("over-release on {what}: allocation {tag:?} not present")]
    OverRelease { what: String, tag: (u64, usize) },
    #[error("lifetime must be positive, got {0}")]
    NonPositiveLifetime(f64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// One outstanding reservation against a physical element. The tag is
/// (solution id, virtual element id) so a release can find its own entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Allocation {
    tag: (u64, usize),
    amount: f64,
}

/// Availability is always derived by folding the ledger in insertion order,
/// so an apply followed by a release restores the exact prior bits.
fn fold_available(cap: f64, ledger: &[Allocation]) -> f64 {
    let mut avail = cap;
    for a in ledger {
        avail -= a.amount;
    }
    avail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNode {
    pub capacity: f64,
    pub available: f64,
    ledger: Vec<Allocation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalLink {
    pub u: usize,
    pub v: usize,
    pub capacity: f64,
    pub available: f64,
    ledger: Vec<Allocation>,
}

/// Substrate network: undirected, no self-loops, no duplicate links.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalNetwork {
    nodes: Vec<PhysicalNode>,
    links: Vec<PhysicalLink>,
    /// adjacency[n] = (neighbor, link id), sorted by neighbor id
    adjacency: Vec<Vec<(usize, usize)>>,
    link_index: HashMap<(usize, usize), usize>,
    /// Optional external names, parallel to `nodes`.
    pub labels: Option<Vec<String>>,
}

impl PhysicalNetwork {
    /// Builds a network from node capacities and `(u, v, bandwidth)` links,
    /// with all availabilities equal to capacity.
    pub fn new(node_caps: Vec<f64>, links: Vec<(usize, usize, f64)>) -> Result<Self, NetError> {
        let n = node_caps.len();
        for (i, &c) in node_caps.iter().enumerate() {
            if c < 0.0 {
                return Err(NetError::NegativeResource { what: format!("node {i}"), value: c });
            }
        }
        let mut net = PhysicalNetwork {
            nodes: node_caps
                .into_iter()
                .map(|c| PhysicalNode { capacity: c, available: c, ledger: Vec::new() })
                .collect(),
            links: Vec::new(),
            adjacency: vec![Vec::new(); n],
            link_index: HashMap::new(),
            labels: None,
        };
        for (u, v, bw) in links {
            net.add_link(u, v, bw)?;
        }
        Ok(net)
    }

    pub fn add_link(&mut self, u: usize, v: usize, bandwidth: f64) -> Result<usize, NetError> {
        let n = self.nodes.len();
        if u >= n {
            return Err(NetError::NodeOutOfRange(u, n));
        }
        if v >= n {
            return Err(NetError::NodeOutOfRange(v, n));
        }
        if u == v {
            return Err(NetError::SelfLoop(u));
        }
        if bandwidth < 0.0 {
            return Err(NetError::NegativeResource {
                what: format!("link ({u},{v})"),
                value: bandwidth,
            });
        }
        let key = (u.min(v), u.max(v));
        if self.link_index.contains_key(&key) {
            return Err(NetError::DuplicateLink(key.0, key.1));
        }
        let id = self.links.len();
        self.links.push(PhysicalLink {
            u: key.0,
            v: key.1,
            capacity: bandwidth,
            available: bandwidth,
            ledger: Vec::new(),
        });
        self.link_index.insert(key, id);
        self.adjacency[u].push((v, id));
        self.adjacency[v].push((u, id));
        self.adjacency[u].sort_unstable();
        self.adjacency[v].sort_unstable();
        Ok(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node(&self, id: usize) -> &PhysicalNode {
        &self.nodes[id]
    }

    pub fn link(&self, id: usize) -> &PhysicalLink {
        &self.links[id]
    }

    pub fn links(&self) -> &[PhysicalLink] {
        &self.links
    }

    pub fn node_capacities(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.capacity).collect()
    }

    pub fn node_availabilities(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.available).collect()
    }

    pub fn link_availabilities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.available).collect()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn link_between(&self, u: usize, v: usize) -> Option<usize> {
        self.link_index.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.nodes.len()
    }

    fn allocation_plan(&self, sol: &Solution, vn: &VirtualNetwork) -> Result<AllocationPlan, NetError> {
        let mut plan = AllocationPlan { nodes: Vec::new(), links: Vec::new() };
        for (vnode, mapped) in sol.node_map.iter().enumerate() {
            if let Some(pnode) = mapped {
                if *pnode >= self.nodes.len() {
                    return Err(NetError::NodeOutOfRange(*pnode, self.nodes.len()));
                }
                plan.nodes.push((*pnode, vnode, vn.node_demand(vnode)));
            }
        }
        for (vlink, path) in sol.link_paths.iter().enumerate() {
            if let Some(path) = path {
                let demand = vn.link(vlink).demand;
                for hop in path.windows(2) {
                    let plink = self.link_between(hop[0], hop[1]).ok_or_else(|| {
                        NetError::Invariant(format!(
                            "path hop ({},{}) is not a physical link",
                            hop[0], hop[1]
                        ))
                    })?;
                    plan.links.push((plink, vlink, demand));
                }
            }
        }
        Ok(plan)
    }

    /// Reserves a solution's node and path demands. Every decrement is
    /// ledger-backed; availabilities never silently drift.
    pub fn apply_solution(&mut self, sol: &Solution, vn: &VirtualNetwork) -> Result<(), NetError> {
        let planned = self.allocation_plan(sol, vn)?;
        // Validate before mutating so a failure leaves the ledger untouched.
        let mut node_extra: HashMap<usize, f64> = HashMap::new();
        let mut link_extra: HashMap<usize, f64> = HashMap::new();
        for &(pnode, _, demand) in &planned.nodes {
            *node_extra.entry(pnode).or_insert(0.0) += demand;
        }
        for &(plink, _, demand) in &planned.links {
            *link_extra.entry(plink).or_insert(0.0) += demand;
        }
        for (&pnode, &total) in &node_extra {
            let avail = self.nodes[pnode].available;
            if total > avail {
                return Err(NetError::InsufficientResources {
                    what: format!("node {pnode}"),
                    avail,
                    demand: total,
                });
            }
        }
        for (&plink, &total) in &link_extra {
            let avail = self.links[plink].available;
            if total > avail {
                let l = &self.links[plink];
                return Err(NetError::InsufficientResources {
                    what: format!("link ({},{})", l.u, l.v),
                    avail,
                    demand: total,
                });
            }
        }
        for (pnode, velem, demand) in planned.nodes {
            let node = &mut self.nodes[pnode];
            node.ledger.push(Allocation { tag: (sol.id, velem), amount: demand });
            node.available = fold_available(node.capacity, &node.ledger);
        }
        for (plink, velem, demand) in planned.links {
            let link = &mut self.links[plink];
            link.ledger.push(Allocation { tag: (sol.id, velem), amount: demand });
            link.available = fold_available(link.capacity, &link.ledger);
        }
        Ok(())
    }

    /// Exact inverse of `apply_solution`: removes this solution's ledger
    /// entries and refolds, restoring the previous availabilities bit for bit.
    pub fn release_solution(&mut self, sol: &Solution, vn: &VirtualNetwork) -> Result<(), NetError> {
        let planned = self.allocation_plan(sol, vn)?;
        for &(pnode, velem, _) in &planned.nodes {
            if !self.nodes[pnode].ledger.iter().any(|a| a.tag == (sol.id, velem)) {
                return Err(NetError::OverRelease {
                    what: format!("node {pnode}"),
                    tag: (sol.id, velem),
                });
            }
        }
        for &(plink, velem, _) in &planned.links {
            let l = &self.links[plink];
            if !l.ledger.iter().any(|a| a.tag == (sol.id, velem)) {
                return Err(NetError::OverRelease {
                    what: format!("link ({},{})", l.u, l.v),
                    tag: (sol.id, velem),
                });
            }
        }
        for (pnode, velem, _) in planned.nodes {
            let node = &mut self.nodes[pnode];
            let pos = node.ledger.iter().position(|a| a.tag == (sol.id, velem)).unwrap();
            node.ledger.remove(pos);
            node.available = fold_available(node.capacity, &node.ledger);
        }
        for (plink, velem, _) in planned.links {
            let link = &mut self.links[plink];
            let pos = link.ledger.iter().position(|a| a.tag == (sol.id, velem)).unwrap();
            link.ledger.remove(pos);
            link.available = fold_available(link.capacity, &link.ledger);
        }
        Ok(())
    }

    /// Recounts every element's ledger against its cached availability.
    pub fn check_ledger_consistency(&self) -> Result<(), NetError> {
        for (i, n) in self.nodes.iter().enumerate() {
            let folded = fold_available(n.capacity, &n.ledger);
            if folded != n.available {
                return Err(NetError::Invariant(format!(
                    "node {i}: cached available {} != folded {}",
                    n.available, folded
                )));
            }
            if n.available > n.capacity {
                return Err(NetError::AvailExceedsCapacity {
                    what: format!("node {i}"),
                    avail: n.available,
                    cap: n.capacity,
                });
            }
        }
        for l in &self.links {
            let folded = fold_available(l.capacity, &l.ledger);
            if folded != l.available {
                return Err(NetError::Invariant(format!(
                    "link ({},{}): cached available {} != folded {}",
                    l.u, l.v, l.available, folded
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the edge-list topology text format. The writer uses the
    /// shortest round-tripping float form, so parse(write(net)) == net.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes={}", self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{},{}", i, n.capacity);
        }
        for l in &self.links {
            let _ = writeln!(out, "{},{},{}", l.u, l.v, l.capacity);
        }
        out
    }

    /// Parses the edge-list topology format: a `nodes=<n>` header, n lines of
    /// `id,compute`, then one `src,dst,bandwidth` line per link.
    pub fn from_edge_list(text: &str) -> Result<Self, NetError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| NetError::Parse { line: 1, msg: "empty file".into() })?;
        let n: usize = header
            .strip_prefix("nodes=")
            .ok_or_else(|| NetError::Parse {
                line: line_no,
                msg: format!("expected `nodes=<n>` header, got `{header}`"),
            })?
            .parse()
            .map_err(|e| NetError::Parse { line: line_no, msg: format!("bad node count: {e}") })?;
        if n == 0 {
            return Err(NetError::Parse { line: line_no, msg: "empty nodes section".into() });
        }
        let mut caps = vec![None; n];
        for _ in 0..n {
            let (line_no, line) = lines.next().ok_or_else(|| NetError::Parse {
                line: usize::MAX,
                msg: "truncated nodes section".into(),
            })?;
            let mut parts = line.split(',');
            let id: usize = parts
                .next()
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| NetError::Parse { line: line_no, msg: format!("bad node id: {e}") })?;
            let cap: f64 = parts
                .next()
                .ok_or_else(|| NetError::Parse { line: line_no, msg: "missing compute".into() })?
                .trim()
                .parse()
                .map_err(|e| NetError::Parse { line: line_no, msg: format!("bad compute: {e}") })?;
            if id >= n {
                return Err(NetError::Parse {
                    line: line_no,
                    msg: format!("node id {id} out of range"),
                });
            }
            if caps[id].is_some() {
                return Err(NetError::Parse { line: line_no, msg: format!("duplicate node {id}") });
            }
            caps[id] = Some(cap);
        }
        let caps: Vec<f64> = caps
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| NetError::Parse {
                line: usize::MAX,
                msg: format!("node {i} missing from nodes section"),
            }))
            .collect::<Result<_, _>>()?;
        let mut net = PhysicalNetwork::new(caps, Vec::new())?;
        for (line_no, line) in lines {
            let mut parts = line.split(',');
            let parse_usize = |s: Option<&str>, what: &str| -> Result<usize, NetError> {
                s.ok_or_else(|| NetError::Parse { line: line_no, msg: format!("missing {what}") })?
                    .trim()
                    .parse()
                    .map_err(|e| NetError::Parse { line: line_no, msg: format!("bad {what}: {e}") })
            };
            let u = parse_usize(parts.next(), "src")?;
            let v = parse_usize(parts.next(), "dst")?;
            let bw: f64 = parts
                .next()
                .ok_or_else(|| NetError::Parse { line: line_no, msg: "missing bandwidth".into() })?
                .trim()
                .parse()
                .map_err(|e| NetError::Parse { line: line_no, msg: format!("bad bandwidth: {e}") })?;
            net.add_link(u, v, bw)?;
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualNode {
    pub demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualLink {
    pub u: usize,
    pub v: usize,
    pub demand: f64,
}

/// A VN request: demands plus arrival time and lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualNetwork {
    nodes: Vec<VirtualNode>,
    links: Vec<VirtualLink>,
    /// adjacency[n] = (neighbor, link id), sorted by link id
    adjacency: Vec<Vec<(usize, usize)>>,
    pub arrival_time: f64,
    pub lifetime: f64,
}

impl VirtualNetwork {
    pub fn new(
        node_demands: Vec<f64>,
        links: Vec<(usize, usize, f64)>,
        arrival_time: f64,
        lifetime: f64,
    ) -> Result<Self, NetError> {
        if lifetime <= 0.0 {
            return Err(NetError::NonPositiveLifetime(lifetime));
        }
        let n = node_demands.len();
        for (i, &d) in node_demands.iter().enumerate() {
            if d < 0.0 {
                return Err(NetError::NegativeResource { what: format!("virtual node {i}"), value: d });
            }
        }
        let mut vn = VirtualNetwork {
            nodes: node_demands.into_iter().map(|demand| VirtualNode { demand }).collect(),
            links: Vec::new(),
            adjacency: vec![Vec::new(); n],
            arrival_time,
            lifetime,
        };
        let mut seen = HashMap::new();
        for (u, v, d) in links {
            if u >= n {
                return Err(NetError::NodeOutOfRange(u, n));
            }
            if v >= n {
                return Err(NetError::NodeOutOfRange(v, n));
            }
            if u == v {
                return Err(NetError::SelfLoop(u));
            }
            if d < 0.0 {
                return Err(NetError::NegativeResource {
                    what: format!("virtual link ({u},{v})"),
                    value: d,
                });
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key, ()).is_some() {
                return Err(NetError::DuplicateLink(key.0, key.1));
            }
            let id = vn.links.len();
            vn.links.push(VirtualLink { u: key.0, v: key.1, demand: d });
            vn.adjacency[u].push((v, id));
            vn.adjacency[v].push((u, id));
        }
        Ok(vn)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node_demand(&self, id: usize) -> f64 {
        self.nodes[id].demand
    }

    pub fn links(&self) -> &[VirtualLink] {
        &self.links
    }

    pub fn link(&self, id: usize) -> &VirtualLink {
        &self.links[id]
    }

    /// (neighbor, link id) pairs incident to `node`, in link-id order.
    pub fn incident(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }
}

/// One VN request paired with the substrate snapshot at its arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VNEInstance {
    pub vn: VirtualNetwork,
    pub pn: PhysicalNetwork,
}

impl VNEInstance {
    pub fn new(vn: VirtualNetwork, pn: PhysicalNetwork) -> Self {
        VNEInstance { vn, pn }
    }
}

/// Per-step violation record: signed node and link components, their max,
/// and the clipped cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepViolation {
    pub h_node: f64,
    pub h_link: f64,
    pub h: f64,
    pub cost: f64,
}

struct AllocationPlan {
    /// (physical node, virtual node, demand)
    nodes: Vec<(usize, usize, f64)>,
    /// (physical link, virtual link, demand); one entry per traversal
    links: Vec<(usize, usize, f64)>,
}

/// A (possibly partial) embedding: node map, link paths, feasibility flag,
/// and the violation trail recorded while it was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Distinguishes this solution's ledger entries from other embeddings.
    pub id: u64,
    pub node_map: Vec<Option<usize>>,
    /// Path per virtual link as an ordered physical node sequence.
    pub link_paths: Vec<Option<Vec<usize>>>,
    /// Feasibility flag kappa.
    pub feasible: bool,
    pub violations: Vec<StepViolation>,
}

impl Solution {
    pub fn empty(id: u64, vn: &VirtualNetwork) -> Self {
        Solution {
            id,
            node_map: vec![None; vn.node_count()],
            link_paths: vec![None; vn.link_count()],
            feasible: false,
            violations: Vec::new(),
        }
    }

    pub fn placed_count(&self) -> usize {
        self.node_map.iter().filter(|m| m.is_some()).count()
    }

    pub fn is_complete(&self, vn: &VirtualNetwork) -> bool {
        self.node_map.iter().all(|m| m.is_some())
            && self.link_paths.iter().all(|p| p.is_some())
            && self.node_map.len() == vn.node_count()
            && self.link_paths.len() == vn.link_count()
    }

    pub fn violation_cost_total(&self) -> f64 {
        self.violations.iter().map(|v| v.cost).sum()
    }

}

impl PhysicalNetwork {
    /// Resolves a node-sequence path into link ids; None if any hop is not a
    /// physical link.
    pub fn path_links(&self, path: &[usize]) -> Option<Vec<usize>> {
        path.windows(2).map(|w| self.link_between(w[0], w[1])).collect()
    }
}
