//! Hot-path benchmarks: routing, node ranking, the greedy solver, the
//! encoder forward pass, and a full backward step.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use vne_bench::{instance_on, mid_episode_state, wx100};
use vne_core::autodiff::Tape;
use vne_core::env::VneEnv;
use vne_core::heuristics::ksp::{feasible_shortest_path, k_shortest_paths};
use vne_core::heuristics::{greedy_solve, rank_physical_grc, rank_physical_nrm, RankingKind};
use vne_core::policy::{build_hetero_graph, ArchConfig, FusionVariant, PolicyNet};

fn bench_routing(c: &mut Criterion) {
    let pn = wx100(7);
    let avail = pn.link_availabilities();
    c.bench_function("ksp_yen_k5_wx100", |b| {
        b.iter(|| k_shortest_paths(&pn, 3, 87, 5, None).unwrap())
    });
    c.bench_function("feasible_shortest_hop4_wx100", |b| {
        b.iter(|| feasible_shortest_path(&pn, &avail, 40.0, 3, 87, Some(4)))
    });
}

fn bench_ranking(c: &mut Criterion) {
    let pn = wx100(7);
    c.bench_function("rank_nrm_wx100", |b| b.iter(|| rank_physical_nrm(&pn)));
    c.bench_function("rank_grc_wx100", |b| b.iter(|| rank_physical_grc(&pn, 0.85, 1e-4)));
}

fn bench_greedy(c: &mut Criterion) {
    let pn = wx100(7);
    let inst = instance_on(&pn, 11);
    c.bench_function("greedy_grc_solve_one", |b| {
        b.iter(|| greedy_solve(&inst, RankingKind::Grc, 5, Some(4)))
    });
}

fn bench_policy(c: &mut Criterion) {
    let arch = ArchConfig {
        hidden: 32,
        layers: 2,
        attn_slope: 0.2,
        act_slope: 0.2,
        fusion: FusionVariant::DecisionSymmetric,
    };
    let policy = PolicyNet::init(arch, 5);
    let env = VneEnv::default();
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let pn = vne_core::sim::gen_waxman(20, 0.5, 0.2, (50.0, 100.0), (50.0, 100.0), &mut rng);
    let inst = instance_on(&pn, 13);
    let state = mid_episode_state(&env, inst);
    let graph = build_hetero_graph(&env, &state);
    let mask = env.action_mask(&state);

    c.bench_function("hetero_graph_build_20n", |b| {
        b.iter(|| build_hetero_graph(&env, &state))
    });
    c.bench_function("policy_forward_20n_h32", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| policy.forward(&mut tape, &graph, &mask).unwrap(),
            BatchSize::SmallInput,
        )
    });
    c.bench_function("policy_forward_backward_20n_h32", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let out = policy.forward(&mut tape, &graph, &mask).unwrap();
                let probs2 = tape.reshape(out.probs, vec![mask.len(), 1]).unwrap();
                let picked = tape.gather_rows(probs2, &[0]).unwrap();
                let flat = tape.reshape(picked, vec![]).unwrap();
                let lp = tape.log(flat);
                let v = out.value;
                let sum = tape.add(lp, v).unwrap();
                tape.backward(sum)
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, bench_routing, bench_ranking, bench_greedy, bench_policy);
criterion_main!(benches);
