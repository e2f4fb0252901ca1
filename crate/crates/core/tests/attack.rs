use obge::attack::{
    audit_trace, build_sp_trees, gkt_setup, length_classes, path_length, query_recovery, query_signature,
    read_token_log, uniform_guess, write_token_log, Pair,
};
use obge::graph::{load_graph, spath_oracle};
use obge::protocol::{component_rng, reveal, setup, Deployment, Mode, SetupParams, TrivialClient};
use obge::trace::AccessTrace;
use obge::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn four() -> Graph {
    load_graph("0\t1\n1\t2\n2\t3\n0\t2\n".as_bytes(), true).unwrap()
}

fn star() -> Graph {
    load_graph("1\t0\n2\t0\n3\t0\n4\t0\n".as_bytes(), true).unwrap()
}

#[test]
fn gkt_token_chains_leak_repetition_and_overlap() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut gkt = gkt_setup(&four(), &mut rng).unwrap();
    let (resp, a) = gkt.query(0, 3).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(reveal(&resp, 0, 3, gkt.k1()).unwrap(), Some(vec![0, 2, 3]));
    let (_, again) = gkt.query(0, 3).unwrap();
    assert_eq!(a, again);
    let (_, b) = gkt.query(2, 3).unwrap();
    assert!(a.ends_with(&b));
    assert_eq!(b.len(), 2);

    let mut buf = Vec::new();
    write_token_log(gkt.log(), &mut buf).unwrap();
    assert_eq!(read_token_log(buf.as_slice()).unwrap(), gkt.log());
}

#[test]
fn gkt_unique_length_query_is_recovered() {
    let g = four();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut gkt = gkt_setup(&g, &mut rng).unwrap();
    let truth = [(0u32, 3u32), (0, 3), (2, 3)];
    for &(u, v) in &truth {
        gkt.query(u, v).unwrap();
    }
    let sets = query_recovery(&g, gkt.log()).unwrap();
    // (0, 3) and (1, 3) share a signature; after (0, 3) is seen twice the
    // attacker still cannot tell them apart, but (2, 3) is pinned down
    assert_eq!(sets[2].candidates, vec![(2, 3)]);
    let out = uniform_guess(&sets[2..], &truth[2..], &mut rng);
    assert_eq!(out.accuracy, 1.0);
}

fn run_obge(g: &Graph, queries: &[Pair], seed: u64) -> Vec<obge::trace::TraceRecord> {
    let out = setup(g, &SetupParams { mode: Mode::Trivial, seed: Some(seed), ..SetupParams::default() }).unwrap();
    let Deployment::Trivial(state) = out.deployment else { unreachable!() };
    let trace = AccessTrace::new();
    let store = out.tree.with_trace(0, trace.clone());
    let mut c = TrivialClient::new(&out.keys, state, store, component_rng(Some(seed), 1)).unwrap();
    for &(u, v) in queries {
        c.query(u, v).unwrap();
    }
    trace.snapshot()
}

#[test]
fn obge_star_recovery_is_a_guess() {
    let g = star();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let queries: Vec<Pair> = (0..1000).map(|_| (rng.gen_range(1..5), 0)).collect();
    let records = run_obge(&g, &queries, 3);
    let report = audit_trace(&records, Some((&g, &queries)), None, 5).unwrap();
    assert_eq!(report.round_mismatches, Some(0));
    let r = report.recovery.unwrap();
    assert!((r.baseline - 0.25).abs() < 1e-12);
    assert!(r.accuracy <= 0.25 + 0.05, "{r:?}");
    assert!(report.passes(0.01), "{}", report.summary(0.01));
}

#[test]
fn audit_flags_a_dropped_round() {
    let g = four();
    let queries = vec![(0, 3), (1, 3), (3, 0)];
    let mut records = run_obge(&g, &queries, 4);
    let report = audit_trace(&records, Some((&g, &queries)), None, 1).unwrap();
    assert_eq!(report.round_mismatches, Some(0));
    assert!(report.constant_width());
    records.drain(0..2);
    let report = audit_trace(&records, Some((&g, &queries)), None, 1).unwrap();
    assert!(report.round_mismatches.unwrap() > 0);
    assert!(!report.passes(0.01));
    assert!(report.to_csv().starts_with("metric,value\n"));
}

fn arb_graph(max_n: usize) -> impl Strategy<Value = Graph> {
    (2..=max_n, 0.0f64..0.25, any::<bool>(), any::<u64>()).prop_map(|(n, p, weighted, seed)| {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut g = Graph::new(n, true);
        for u in 0..n as u32 {
            for v in 0..n as u32 {
                if u != v && rng.gen_bool(p) {
                    g.add_edge(u, v, weighted.then(|| rng.gen_range(1..5) as f64)).unwrap();
                }
            }
        }
        g
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gkt_answers_match_oracle(g in arb_graph(20), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut gkt = gkt_setup(&g, &mut rng).unwrap();
        let n = g.vertex_count() as u32;
        for u in 0..n {
            for v in 0..n {
                let (resp, chain) = gkt.query(u, v).unwrap();
                let expect = spath_oracle(&g, u, v).unwrap();
                prop_assert_eq!(chain.len(), expect.as_ref().map_or(0, |p| p.len().saturating_sub(1)) + 1);
                prop_assert_eq!(reveal(&resp, u, v, gkt.k1()).unwrap(), expect);
            }
        }
    }

    #[test]
    fn recovery_is_sound_and_beats_length_only(g in arb_graph(50), seed in any::<u64>(), count in 1usize..200) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut gkt = gkt_setup(&g, &mut rng).unwrap();
        let n = g.vertex_count() as u32;
        let truth: Vec<Pair> = (0..count).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        for &(u, v) in &truth {
            gkt.query(u, v).unwrap();
        }
        let sets = query_recovery(&g, gkt.log()).unwrap();
        let trees = build_sp_trees(&g);
        let classes = length_classes(&trees);
        for (set, &q) in sets.iter().zip(&truth) {
            prop_assert!(set.contains(q), "{:?} missing from {:?}", q, set.candidates);
            prop_assert_eq!(set.length, path_length(&trees, q.0, q.1));
            prop_assert!(set.len() <= classes[&set.length].len());
        }
    }
}

#[test]
fn complete_workload_recovers_signature_classes() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.gen_range(5..25);
        let mut g = Graph::new(n, true);
        for u in 0..n as u32 {
            for v in 0..n as u32 {
                if u != v && rng.gen_bool(2.0 / n as f64) {
                    g.add_edge(u, v, None).unwrap();
                }
            }
        }
        let mut gkt = gkt_setup(&g, &mut rng).unwrap();
        let trees = build_sp_trees(&g);
        let truth: Vec<Pair> = (0..n as u32)
            .flat_map(|u| (0..n as u32).map(move |v| (u, v)))
            .filter(|&(u, v)| query_signature(&trees, u, v).is_some())
            .collect();
        for &(u, v) in &truth {
            gkt.query(u, v).unwrap();
        }
        let sets = query_recovery(&g, gkt.log()).unwrap();
        let classes = length_classes(&trees);
        let (mut gkt_sum, mut obge_sum) = (0, 0);
        for (set, &(u, v)) in sets.iter().zip(&truth) {
            let sig = query_signature(&trees, u, v);
            let same: Vec<Pair> =
                truth.iter().copied().filter(|&(a, b)| query_signature(&trees, a, b) == sig).collect();
            assert_eq!(set.candidates, same);
            gkt_sum += set.len();
            obge_sum += classes[&set.length].len();
        }
        assert!(gkt_sum <= obge_sum);
    }
}
