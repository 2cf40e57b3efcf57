//! Shared fixtures for the criterion benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;
use vne_core::env::{EnvState, VneEnv};
use vne_core::net::{PhysicalNetwork, VNEInstance};
use vne_core::sim::{gen_vn_request, gen_waxman, SimulationConfig};

pub fn wx100(seed: u64) -> PhysicalNetwork {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    gen_waxman(100, 0.5, 0.2, (50.0, 100.0), (50.0, 100.0), &mut rng)
}

pub fn instance_on(pn: &PhysicalNetwork, seed: u64) -> Arc<VNEInstance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let config = SimulationConfig::default();
    let vn = gen_vn_request(&config, 0.0, &mut rng);
    Arc::new(VNEInstance::new(vn, pn.clone()))
}

/// A mid-episode state with mapped links present.
pub fn mid_episode_state(env: &VneEnv, inst: Arc<VNEInstance>) -> EnvState {
    let mut state = env.reset(inst);
    let steps = state.order.len() / 2;
    for _ in 0..steps.max(1) {
        let mask = env.action_mask(&state);
        let action = mask.iter().position(|&b| b).expect("some node admissible");
        env.step(&mut state, action, true).expect("episode active");
        if state.done {
            break;
        }
    }
    state
}
