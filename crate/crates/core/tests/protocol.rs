use obge::crypto::{decode_pair, ske_decrypt};
use obge::graph::{load_graph, spath_oracle, Vertex};
use obge::oram::{check_placement, PadMode, PathStore, ServerTree};
use obge::protocol::{
    component_rng, reveal, setup, ClientKeys, Controller, ControllerState, Deployment, EnhancedClient, Mode,
    SetupParams, TrivialClient, TrivialState, DATA_LAYOUT,
};
use obge::recursive::pair_address;
use obge::trace::{AccessTrace, MsgKind};
use obge::{Error, Graph};
use proptest::prelude::*;

fn four(directed: bool) -> Graph {
    load_graph("0\t1\n1\t2\n2\t3\n0\t2\n".as_bytes(), directed).unwrap()
}

fn params(mode: Mode, seed: u64) -> SetupParams {
    SetupParams { mode, seed: Some(seed), ..SetupParams::default() }
}

fn trivial(g: &Graph, seed: u64) -> (TrivialClient<ServerTree>, ClientKeys, AccessTrace) {
    let out = setup(g, &params(Mode::Trivial, seed)).unwrap();
    let Deployment::Trivial(state) = out.deployment else { panic!("wrong deployment") };
    let trace = AccessTrace::new();
    let store = out.tree.with_trace(0, trace.clone());
    let client = TrivialClient::new(&out.keys, state, store, component_rng(Some(seed), 1)).unwrap();
    (client, out.keys, trace)
}

fn enhanced(g: &Graph, p: SetupParams) -> (Controller<ServerTree>, EnhancedClient, ClientKeys, AccessTrace) {
    let seed = p.seed;
    let out = setup(g, &p).unwrap();
    let Deployment::Enhanced { controller, levels } = out.deployment else { panic!("wrong deployment") };
    let trace = AccessTrace::new();
    let data = out.tree.with_trace(0, trace.clone());
    let levels = levels
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.with_trace(i as u16 + 1, trace.clone()))
        .collect();
    let ctl = Controller::new(controller, data, levels, seed).unwrap();
    let client = EnhancedClient::new(&out.keys, component_rng(seed, 2)).unwrap();
    (ctl, client, out.keys, trace)
}

#[test]
fn directed_instance_has_six_entries_undirected_twelve() {
    let (client, _, _) = trivial(&four(true), 1);
    assert_eq!(client.oram().positions().len(), 6);
    let (client, _, _) = trivial(&four(false), 1);
    assert_eq!(client.oram().positions().len(), 12);
}

#[test]
fn query_and_reveal_on_four_vertex_instance() {
    let (mut client, keys, trace) = trivial(&four(true), 2);
    let resp = client.query(0, 3).unwrap();
    assert_eq!(resp.len(), 2);
    let pairs: Vec<(Vertex, Vertex)> =
        resp.0.iter().map(|ct| decode_pair(&ske_decrypt(&keys.keys.k1, ct).unwrap()).unwrap()).collect();
    assert_eq!(pairs, vec![(2, 3), (3, 3)]);
    assert_eq!(reveal(&resp, 0, 3, &keys.keys.k1).unwrap(), Some(vec![0, 2, 3]));
    // two hits and the terminal miss
    let reads = trace.snapshot().iter().filter(|r| r.kind == MsgKind::ReadPath).count();
    assert_eq!(reads, 3);
}

#[test]
fn diagonal_and_disconnected_queries_take_one_round() {
    let (mut client, keys, trace) = trivial(&four(true), 3);
    let resp = client.query(1, 1).unwrap();
    assert!(resp.is_empty());
    assert_eq!(reveal(&resp, 1, 1, &keys.keys.k1).unwrap(), Some(vec![]));
    assert_eq!(trace.len(), 2);

    let resp = client.query(3, 0).unwrap();
    assert!(resp.is_empty());
    assert_eq!(reveal(&resp, 3, 0, &keys.keys.k1).unwrap(), None);
    assert_eq!(trace.len(), 4);
    let recs = trace.snapshot();
    assert!(recs.iter().all(|r| r.bytes == recs[0].bytes));
}

#[test]
fn out_of_range_vertex() {
    let (mut client, _, trace) = trivial(&four(true), 4);
    assert!(matches!(client.query(0, 99), Err(Error::VertexOutOfRange { vertex: 99, .. })));
    assert!(trace.is_empty());
}

#[test]
fn tampered_ciphertext_is_rejected() {
    let (mut client, keys, _) = trivial(&four(true), 5);
    let mut resp = client.query(0, 3).unwrap();
    resp.0[0][15] ^= 1;
    assert!(matches!(reveal(&resp, 0, 3, &keys.keys.k1), Err(Error::Authentication)));
}

#[test]
fn empty_graph_answers_empty_paths() {
    let g = Graph::new(0, true);
    let out = setup(&g, &params(Mode::Trivial, 6)).unwrap();
    assert_eq!(out.tree.header().bucket_count(), 1);
    let g = Graph::new(3, true);
    let (mut client, keys, _) = trivial(&g, 6);
    for u in 0..3 {
        for v in 0..3 {
            let resp = client.query(u, v).unwrap();
            assert!(resp.is_empty());
            let expect = if u == v { Some(vec![]) } else { None };
            assert_eq!(reveal(&resp, u, v, &keys.keys.k1).unwrap(), expect);
        }
    }
}

#[test]
fn full_padding_sizes_for_all_pairs() {
    let p = SetupParams { pad: PadMode::Full, ..params(Mode::Trivial, 7) };
    let out = setup(&four(true), &p).unwrap();
    let h = out.tree.header();
    assert!(h.z as usize * h.bucket_count() >= 12);
    assert_eq!(h.depth, 2);
}

#[test]
fn enhanced_matches_trivial_on_instance() {
    let g = four(true);
    let (mut ctl, mut client, keys, trace) = enhanced(&g, params(Mode::Enhanced, 8));
    let req = client.request(0, 3).unwrap();
    let resp = ctl.handle(&req).unwrap();
    assert_eq!(client.reveal(&resp, 0, 3).unwrap(), Some(vec![0, 2, 3]));
    let data_reads = trace.snapshot().iter().filter(|r| r.tree == 0 && r.kind == MsgKind::ReadPath).count();
    assert_eq!(data_reads, 3);
    assert_eq!(reveal(&ctl.query(3, 3).unwrap(), 3, 3, &keys.keys.k1).unwrap(), Some(vec![]));
}

#[test]
fn enhanced_requests_are_fixed_width_and_fresh() {
    let (_, mut client, _, _) = enhanced(&four(true), params(Mode::Enhanced, 9));
    let a = client.request(0, 3).unwrap();
    let b = client.request(0, 3).unwrap();
    let c = client.request(3, 1).unwrap();
    assert_ne!(a, b);
    assert_eq!(a.len(), b.len());
    assert_eq!(a.len(), c.len());
}

#[test]
fn malformed_request_touches_nothing() {
    let (mut ctl, mut client, _, trace) = enhanced(&four(true), params(Mode::Enhanced, 10));
    let mut req = client.request(0, 3).unwrap();
    req[3] ^= 0xff;
    assert!(matches!(ctl.handle(&req), Err(Error::Authentication)));
    assert!(matches!(ctl.handle(&req[..10]), Err(Error::Authentication)));
    assert!(trace.is_empty());
}

#[test]
fn recursive_chain_for_64_vertices() {
    // 64^2 = 4096 addresses; a 1 KiB budget forces one packed level of 64 blocks
    let mut g = Graph::new(64, true);
    for u in 0..63 {
        g.add_edge(u, u + 1, None).unwrap();
    }
    let p = SetupParams { budget: Some(1024), ..params(Mode::Enhanced, 11) };
    let (mut ctl, mut client, _, _) = enhanced(&g, p);
    assert_eq!(ctl.position_map().depth(), 1);
    assert_eq!(ctl.position_map().top().len(), 64);
    for (u, v) in [(0, 63), (10, 20), (5, 5), (20, 10)] {
        let resp = ctl.handle(&client.request(u, v).unwrap()).unwrap();
        assert_eq!(client.reveal(&resp, u, v).unwrap(), spath_oracle(&g, u, v).unwrap());
    }
    assert!(ctl.resident_bytes() <= 1024 + ctl.block_bytes());
}

#[test]
fn state_files_round_trip() {
    let g = four(true);
    let (mut client, keys, _) = trivial(&g, 12);
    client.query(0, 3).unwrap();
    let (store, state) = client.into_parts();
    assert_eq!(TrivialState::from_bytes(&state.to_bytes()).unwrap(), state);
    assert_eq!(ClientKeys::from_bytes(&keys.to_bytes()).unwrap(), keys);
    let mut client = TrivialClient::new(&keys, state, store, component_rng(Some(1), 1)).unwrap();
    assert_eq!(reveal(&client.query(0, 3).unwrap(), 0, 3, &keys.keys.k1).unwrap(), Some(vec![0, 2, 3]));

    let (mut ctl, mut ec, _, _) = enhanced(&g, SetupParams { budget: Some(16), chi: 4, ..params(Mode::Enhanced, 13) });
    ctl.handle(&ec.request(1, 3).unwrap()).unwrap();
    let (state, data, levels) = ctl.into_parts();
    assert_eq!(ControllerState::from_bytes(&state.to_bytes()).unwrap(), state);
    let mut ctl = Controller::new(state, data, levels, None).unwrap();
    let resp = ctl.handle(&ec.request(1, 3).unwrap()).unwrap();
    assert_eq!(ec.reveal(&resp, 1, 3).unwrap(), Some(vec![1, 2, 3]));
}

#[test]
fn placement_invariant_after_queries() {
    let g = four(false);
    let (mut client, keys, _) = trivial(&g, 14);
    let k2 = obge::crypto::Ske::new(&keys.keys.k2);
    for round in 0..50u32 {
        client.query(round % 4, (round / 4) % 4).unwrap();
        let pm = client.oram().positions().clone();
        let tree = client.oram().tree();
        let n = check_placement(tree.store(), DATA_LAYOUT, &k2, tree.stash(), |id| pm.get(id).copied()).unwrap();
        assert_eq!(n, 12);
    }
}

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..14, any::<bool>(), any::<bool>(), proptest::collection::vec((0u32..14, 0u32..14, 0u32..4), 0..40))
        .prop_map(|(n, directed, weighted, edges)| {
            let mut g = Graph::new(n, directed);
            for (u, v, w) in edges {
                let (u, v) = (u % n as u32, v % n as u32);
                if u != v {
                    g.add_edge(u, v, weighted.then_some(w as f64)).unwrap();
                }
            }
            g
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modes_agree_with_oracle(g in arb_graph(), seed in any::<u64>()) {
        let (mut client, keys, _) = trivial(&g, seed);
        let budget = Some((g.vertex_count() * g.vertex_count() * 8 / 16).max(8));
        let (mut ctl, mut ec, _, _) = enhanced(&g, SetupParams { budget, chi: 4, ..params(Mode::Enhanced, seed) });
        let n = g.vertex_count() as u32;
        for u in 0..n {
            for v in 0..n {
                let expect = spath_oracle(&g, u, v).unwrap();
                let a = reveal(&client.query(u, v).unwrap(), u, v, &keys.keys.k1).unwrap();
                let req = ec.request(u, v).unwrap();
                let b = ec.reveal(&ctl.handle(&req).unwrap(), u, v).unwrap();
                prop_assert_eq!(&a, &expect);
                prop_assert_eq!(&b, &expect);
            }
        }
    }
}

#[test]
fn pair_addresses_are_injective() {
    let n = 37;
    let mut seen = std::collections::HashSet::new();
    for u in 0..n as u32 {
        for v in 0..n as u32 {
            assert!(seen.insert(pair_address(u, v, n)));
        }
    }
}
