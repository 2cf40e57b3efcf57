//! Bit-exactness of the two serialization surfaces: the edge-list topology
//! text format and the binary parameter checkpoint.

use proptest::prelude::*;
use vne_core::autodiff::{ParameterSet, Tensor};
use vne_core::net::PhysicalNetwork;

fn arb_network() -> impl Strategy<Value = PhysicalNetwork> {
    (2usize..12).prop_flat_map(|n| {
        let caps = proptest::collection::vec(0.0f64..1e6, n);
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let edges = proptest::sample::subsequence(pairs.clone(), 0..=pairs.len());
        let bws = proptest::collection::vec(0.0f64..1e6, pairs.len());
        (Just(n), caps, edges, bws).prop_map(|(n, caps, edges, bws)| {
            let links: Vec<(usize, usize, f64)> = edges
                .into_iter()
                .zip(bws)
                .map(|((u, v), bw)| (u, v, bw))
                .collect();
            let _ = n;
            PhysicalNetwork::new(caps, links).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn edge_list_round_trip_is_bit_exact(net in arb_network()) {
        let text = net.to_edge_list();
        let parsed = PhysicalNetwork::from_edge_list(&text).unwrap();
        prop_assert_eq!(parsed.to_edge_list(), text);
        prop_assert_eq!(parsed.node_capacities(), net.node_capacities());
        prop_assert_eq!(parsed.link_availabilities(), net.link_availabilities());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        shapes in proptest::collection::vec((1usize..5, 1usize..5), 1..6),
        raw in proptest::collection::vec(-1e12f64..1e12, 64),
    ) {
        let mut params = ParameterSet::new();
        let mut cursor = 0;
        for (i, (r, c)) in shapes.iter().enumerate() {
            let numel = r * c;
            let data: Vec<f64> =
                (0..numel).map(|k| raw[(cursor + k) % raw.len()]).collect();
            cursor += numel;
            params.insert(&format!("layer{i}.weight"), Tensor::matrix(*r, *c, data));
        }
        let mut buf = Vec::new();
        params.save(&mut buf).unwrap();
        let loaded = ParameterSet::load(buf.as_slice()).unwrap();
        prop_assert!(loaded.values_bit_equal(&params));
    }
}

#[test]
fn checkpoint_rejects_unknown_version() {
    let mut buf = Vec::new();
    ParameterSet::new().save(&mut buf).unwrap();
    buf[0] = 9;
    assert!(ParameterSet::load(buf.as_slice()).is_err());
}

#[test]
fn apply_release_round_trip_over_random_sequences() {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use vne_core::net::{Solution, VirtualNetwork};

    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for _ in 0..50 {
        let mut pn = PhysicalNetwork::new(
            vec![100.0; 4],
            vec![(0, 1, 80.0), (1, 2, 80.0), (2, 3, 80.0), (0, 3, 80.0)],
        )
        .unwrap();
        let before = pn.clone();
        let mut applied = Vec::new();
        for id in 0..rng.gen_range(1..5u64) {
            let d1 = rng.gen_range(0.0..10.0);
            let d2 = rng.gen_range(0.0..10.0);
            let bw = rng.gen_range(0.0..15.0);
            let vn = VirtualNetwork::new(vec![d1, d2], vec![(0, 1, bw)], 0.0, 1.0).unwrap();
            let mut sol = Solution::empty(id, &vn);
            let a = rng.gen_range(0..4usize);
            let b = (a + 1) % 4;
            sol.node_map = vec![Some(a), Some(b)];
            sol.link_paths = vec![Some(vec![a, b])];
            sol.feasible = true;
            pn.apply_solution(&sol, &vn).unwrap();
            applied.push((sol, vn));
        }
        // Availabilities stay within bounds while embeddings are live.
        for i in 0..pn.node_count() {
            assert!(pn.node(i).available <= pn.node(i).capacity);
            assert!(pn.node(i).available >= 0.0);
        }
        // Release in random order; the end state must be bit-identical.
        while !applied.is_empty() {
            let k = rng.gen_range(0..applied.len());
            let (sol, vn) = applied.swap_remove(k);
            pn.release_solution(&sol, &vn).unwrap();
        }
        assert_eq!(pn.node_availabilities(), before.node_availabilities());
        assert_eq!(pn.link_availabilities(), before.link_availabilities());
        pn.check_ledger_consistency().unwrap();
    }
}
