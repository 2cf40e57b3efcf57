//! A virtual network embedding (VNE) laboratory: a seeded network-system
//! simulator, an exact constraint/violation core with an exhaustive oracle,
//! node-ranking heuristic solvers, and a constraint-aware reinforcement
//! learning pipeline (violation-tolerant CMDP, reachability-guided
//! Lagrangian PPO with adaptive budgets, heterogeneous graph-attention
//! policy, path-bandwidth contrastive regularizer).

pub mod autodiff;
pub mod constraints;
pub mod env;
pub mod gradcheck;
pub mod heuristics;
pub mod metrics;
pub mod net;
pub mod policy;
pub mod sim;
pub mod trainer;

pub use constraints::{check_solution, consumption, r2c, revenue, ConstraintReport};
pub use env::{EnvState, Trajectory, Transition, VneEnv};
pub use net::{PhysicalNetwork, Solution, VNEInstance, VirtualNetwork};
pub use sim::{SimulationConfig, SimulationRecord};
