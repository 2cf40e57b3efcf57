//! Structural properties of the heterogeneous encoder and its heads:
//! permutation equivariance, mask exactness, pooling invariance, and the
//! feasibility-consistency of both augmentations.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::sync::Arc;
use vne_core::autodiff::Tape;
use vne_core::constraints::check_solution;
use vne_core::env::{EnvConfig, OrderPolicy, VneEnv};
use vne_core::heuristics::ksp::k_shortest_paths;
use vne_core::net::{PhysicalNetwork, Solution, VNEInstance};
use vne_core::policy::encoder::select_action;
use vne_core::policy::{
    augment_instance_physical, augment_instance_virtual, build_hetero_graph, ArchConfig,
    FusionVariant, PolicyNet,
};
use vne_core::sim::{gen_vn_request, gen_waxman, SimulationConfig};

fn small_arch() -> ArchConfig {
    ArchConfig {
        hidden: 16,
        layers: 2,
        attn_slope: 0.2,
        act_slope: 0.2,
        fusion: FusionVariant::DecisionSymmetric,
    }
}

fn demo_instance(seed: u64) -> Arc<VNEInstance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let pn = gen_waxman(8, 0.9, 0.9, (50.0, 100.0), (50.0, 100.0), &mut rng);
    let config = SimulationConfig {
        vn_size_range: (3, 4),
        vn_link_prob: 0.6,
        ..SimulationConfig::default()
    };
    let vn = gen_vn_request(&config, 0.0, &mut rng);
    Arc::new(VNEInstance::new(vn, pn))
}

/// Rebuilds the same instance with physical node ids permuted.
fn permute_instance(inst: &VNEInstance, perm: &[usize]) -> VNEInstance {
    let pn = &inst.pn;
    let mut caps = vec![0.0; pn.node_count()];
    for (old, &new) in perm.iter().enumerate() {
        caps[new] = pn.node(old).capacity;
    }
    let links: Vec<(usize, usize, f64)> =
        pn.links().iter().map(|l| (perm[l.u], perm[l.v], l.capacity)).collect();
    let pn2 = PhysicalNetwork::new(caps, links).unwrap();
    VNEInstance::new(inst.vn.clone(), pn2)
}

#[test]
fn encoder_is_equivariant_under_physical_permutation() {
    let env = VneEnv::new(EnvConfig { order: OrderPolicy::ById, ..EnvConfig::default() });
    let inst = demo_instance(1);
    let np = inst.pn.node_count();
    let policy = PolicyNet::init(small_arch(), 7);

    let mut state = env.reset(inst.clone());
    env.step(&mut state, 3, true).unwrap();

    // Apply a fixed permutation to physical ids.
    let perm: Vec<usize> = (0..np).map(|i| (i + 3) % np).collect();
    let inst2 = Arc::new(permute_instance(&inst, &perm));
    let mut state2 = env.reset(inst2);
    env.step(&mut state2, perm[3], true).unwrap();

    let g1 = build_hetero_graph(&env, &state);
    let g2 = build_hetero_graph(&env, &state2);

    let mut tape = Tape::new();
    let enc1 = policy.encode(&mut tape, &g1).unwrap();
    let z1 = tape.value(enc1.z_physical).clone();
    let mask1 = env.action_mask(&state);
    let probs1 = policy.actor_probs(&mut tape, enc1.z_physical, &mask1).unwrap();
    let p1 = tape.value(probs1).clone();
    let v1 = policy.critic_value(&mut tape, enc1.z_physical).unwrap();
    let v1 = tape.scalar_value(v1);

    let mut tape2 = Tape::new();
    let enc2 = policy.encode(&mut tape2, &g2).unwrap();
    let z2 = tape2.value(enc2.z_physical).clone();
    let mask2 = env.action_mask(&state2);
    let probs2 = policy.actor_probs(&mut tape2, enc2.z_physical, &mask2).unwrap();
    let p2 = tape2.value(probs2).clone();
    let v2 = policy.critic_value(&mut tape2, enc2.z_physical).unwrap();
    let v2 = tape2.scalar_value(v2);

    for old in 0..np {
        for d in 0..z1.cols() {
            let a = z1.at(old, d);
            let b = z2.at(perm[old], d);
            assert!((a - b).abs() < 1e-9, "row {old} dim {d}: {a} vs {b}");
        }
        assert!((p1.data()[old] - p2.data()[perm[old]]).abs() < 1e-12);
    }
    // Scalar heads are permutation invariant (sum pooling).
    assert!((v1 - v2).abs() < 1e-9);
    // Greedy argmax maps under the permutation.
    let (a1, _) = select_action(p1.data(), &mask1, None).unwrap();
    let (a2, _) = select_action(p2.data(), &mask2, None).unwrap();
    assert_eq!(perm[a1], a2);
}

#[test]
fn attention_over_single_neighbor_weighs_one() {
    // A 2-node substrate: after placing one node the mapped relation has a
    // single incoming edge per endpoint, so its attention weight must be 1.
    // That is segment-softmax over a singleton; verified directly.
    let mut tape = Tape::new();
    let x = tape.input(vne_core::autodiff::Tensor::vector(vec![0.37]));
    let sm = tape.segment_softmax(x, &[0]).unwrap();
    assert_eq!(tape.value(sm).data(), &[1.0]);
}

#[test]
fn masked_probabilities_are_exactly_zero_and_sum_to_one() {
    let env = VneEnv::default();
    let inst = demo_instance(2);
    let state = env.reset(inst);
    let policy = PolicyNet::init(small_arch(), 3);
    let g = build_hetero_graph(&env, &state);
    let mut mask = env.action_mask(&state);
    mask[0] = false;
    mask[4] = false;
    let mut tape = Tape::new();
    let enc = policy.encode(&mut tape, &g).unwrap();
    let probs = policy.actor_probs(&mut tape, enc.z_physical, &mask).unwrap();
    let p = tape.value(probs).data();
    assert_eq!(p[0], 0.0);
    assert_eq!(p[4], 0.0);
    let sum: f64 = p.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);

    // Single unmasked node gets probability exactly 1.
    let mut single = vec![false; mask.len()];
    single[2] = true;
    let probs1 = policy.actor_probs(&mut tape, enc.z_physical, &single).unwrap();
    let p1 = tape.value(probs1).data();
    assert_eq!(p1[2], 1.0);
    assert!(p1.iter().enumerate().all(|(i, &v)| i == 2 || v == 0.0));
}

#[test]
fn empty_mask_is_rejected() {
    let env = VneEnv::default();
    let inst = demo_instance(3);
    let state = env.reset(inst);
    let policy = PolicyNet::init(small_arch(), 3);
    let g = build_hetero_graph(&env, &state);
    let mut tape = Tape::new();
    let enc = policy.encode(&mut tape, &g).unwrap();
    let mask = vec![false; state.used.len()];
    assert!(policy.actor_probs(&mut tape, enc.z_physical, &mask).is_err());
}

#[test]
fn lambda_head_is_nonnegative_across_random_inputs() {
    let env = VneEnv::default();
    let policy = PolicyNet::init(small_arch(), 11);
    let mut worst = f64::INFINITY;
    for seed in 0..1000 {
        let inst = demo_instance(seed);
        let state = env.reset(inst);
        let g = build_hetero_graph(&env, &state);
        let mut tape = Tape::new();
        let enc = policy.encode(&mut tape, &g).unwrap();
        let lam = policy.lambda_value(&mut tape, enc.z_physical).unwrap();
        worst = worst.min(tape.scalar_value(lam));
    }
    assert!(worst >= 0.0, "lambda went negative: {worst}");
}

/// Random complete candidate solutions (not necessarily feasible): random
/// injective node map plus k-shortest-path routes.
fn random_candidate(inst: &VNEInstance, rng: &mut ChaCha12Rng) -> Option<Solution> {
    let nv = inst.vn.node_count();
    let np = inst.pn.node_count();
    if nv > np {
        return None;
    }
    let mut hosts: Vec<usize> = (0..np).collect();
    for i in 0..nv {
        let j = rng.gen_range(i..np);
        hosts.swap(i, j);
    }
    let mut sol = Solution::empty(0, &inst.vn);
    sol.node_map = hosts[..nv].iter().map(|&h| Some(h)).collect();
    for (vlink, l) in inst.vn.links().iter().enumerate() {
        let (s, d) = (hosts[l.u], hosts[l.v]);
        let paths = k_shortest_paths(&inst.pn, s, d, 3, None).ok()?;
        sol.link_paths[vlink] = Some(paths[rng.gen_range(0..paths.len())].clone());
    }
    sol.feasible = true;
    Some(sol)
}

#[test]
fn augmentations_preserve_feasibility_verdicts() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut checked = 0;
    for seed in 0..40 {
        let inst = demo_instance(seed + 100);
        let sol = match random_candidate(&inst, &mut rng) {
            Some(s) => s,
            None => continue,
        };
        let before = check_solution(&inst, &sol).unwrap().feasible();

        // Physical link addition: same solution, augmented substrate.
        let aug_p = augment_instance_physical(&inst, 1.0, &mut rng);
        assert!(aug_p.pn.link_count() > inst.pn.link_count());
        let after_p = check_solution(&aug_p, &sol).unwrap().feasible();
        assert_eq!(before, after_p, "physical augmentation changed the verdict");

        // Virtual link addition: route the zero-demand links by shortest path.
        let (aug_v, new_ids) = augment_instance_virtual(&inst, 1.0, &mut rng);
        let mut extended = sol.clone();
        extended.link_paths.resize(aug_v.vn.link_count(), None);
        for id in new_ids {
            let l = aug_v.vn.link(id);
            let (s, d) = (sol.node_map[l.u].unwrap(), sol.node_map[l.v].unwrap());
            let path = if s == d {
                vec![s]
            } else {
                k_shortest_paths(&aug_v.pn, s, d, 1, None).unwrap().remove(0)
            };
            extended.link_paths[id] = Some(path);
        }
        let after_v = check_solution(&aug_v, &extended).unwrap().feasible();
        assert_eq!(before, after_v, "virtual augmentation changed the verdict");
        checked += 1;
    }
    assert!(checked >= 30, "only {checked} pairs checked");
}
