use std::io::Write;
use std::net::TcpStream;

use obge::graph::{load_graph, spath_oracle};
use obge::oram::TreeHeader;
use obge::protocol::{setup, ClientKeys, Mode, SetupParams};
use obge::trace::MsgKind;
use obge::Graph;
use obge_net::client::{request, RemoteEnhanced, RemoteTrivial, TcpTransport, Transport};
use obge_net::config::ServerConfig;
use obge_net::deploy::{split, Parts};
use obge_net::frame::{read_frame, Frame, FRAME_HEADER_LEN};
use obge_net::message::code;
use obge_net::server::{start_with, ServerHandle};
use obge_net::Message;
use proptest::prelude::*;

fn four() -> Graph {
    load_graph("0\t1\n1\t2\n2\t3\n0\t2\n".as_bytes(), true).unwrap()
}

fn serve(g: &Graph, mode: Mode, seed: u64) -> (ServerHandle, Parts) {
    let p = SetupParams { mode, seed: Some(seed), ..SetupParams::default() };
    let mut parts = split(setup(g, &p).unwrap());
    let mut cfg = ServerConfig::new(mode, "unused");
    cfg.listen_addr = "127.0.0.1:0".into();
    let server = std::mem::replace(
        &mut parts.server,
        obge_net::engine::EngineState { mode, trees: Vec::new(), controller: None },
    );
    (start_with(cfg, server, false).unwrap(), parts)
}

fn data_header(parts: &Parts) -> TreeHeader {
    parts.client.as_ref().unwrap().header
}

#[test]
fn read_path_returns_one_full_path() {
    let (h, parts) = serve(&four(), Mode::Trivial, 1);
    let header = data_header(&parts);
    let mut t = TcpTransport::connect(h.local_addr()).unwrap();
    match request(&mut t, &Message::ReadPath { tree: 0, leaf: 0 }).unwrap() {
        Message::PathData { buckets } => assert_eq!(buckets.len(), header.path_bytes()),
        m => panic!("unexpected {m:?}"),
    }
    let bad = request(&mut t, &Message::ReadPath { tree: 0, leaf: header.leaf_count() });
    assert!(bad.is_err());
    let bad = request(&mut t, &Message::ReadPath { tree: 9, leaf: 0 });
    assert!(bad.is_err());
    h.shutdown().unwrap();
}

#[test]
fn unknown_type_keeps_connection_alive() {
    let (h, _) = serve(&four(), Mode::Trivial, 2);
    let mut s = TcpStream::connect(h.local_addr()).unwrap();
    s.write_all(&Frame::new(0xff, vec![1, 2, 3]).encode()).unwrap();
    let reply = Message::from_frame(&read_frame(&mut s).unwrap().unwrap()).unwrap();
    assert!(matches!(reply, Message::Error { code: code::MALFORMED, .. }), "{reply:?}");
    s.write_all(&Message::ReadPath { tree: 0, leaf: 0 }.encode()).unwrap();
    let reply = Message::from_frame(&read_frame(&mut s).unwrap().unwrap()).unwrap();
    assert_eq!(reply.kind(), MsgKind::PathData);
    h.shutdown().unwrap();
}

#[test]
fn bad_magic_gets_error_then_hangup() {
    let (h, _) = serve(&four(), Mode::Trivial, 3);
    let mut s = TcpStream::connect(h.local_addr()).unwrap();
    let mut bytes = Message::Ack.encode();
    bytes[0] = b'X';
    s.write_all(&bytes).unwrap();
    let reply = Message::from_frame(&read_frame(&mut s).unwrap().unwrap()).unwrap();
    assert_eq!(reply.kind(), MsgKind::Error);
    assert!(read_frame(&mut s).unwrap().is_none());
    h.shutdown().unwrap();
}

fn check_all_pairs<F: FnMut(u32, u32) -> Option<Vec<u32>>>(g: &Graph, h: &ServerHandle, mut query: F) {
    let n = g.vertex_count() as u32;
    for u in 0..n {
        for v in 0..n {
            let before = h.trace().len();
            let got = query(u, v);
            let expect = spath_oracle(g, u, v).unwrap();
            assert_eq!(got, expect, "({u}, {v})");
            let hops = expect.map_or(0, |p| p.len().saturating_sub(1));
            let recs = h.trace().since(before);
            let reads = recs.iter().filter(|r| r.tree == 0 && r.kind == MsgKind::ReadPath).count();
            let writes = recs.iter().filter(|r| r.tree == 0 && r.kind == MsgKind::WritePath).count();
            assert_eq!((reads, writes), (hops + 1, hops + 1), "({u}, {v})");
        }
    }
}

#[test]
fn trivial_over_tcp_and_loopback() {
    let g = four();
    let (h, parts) = serve(&g, Mode::Trivial, 4);
    let t = TcpTransport::connect(h.local_addr()).unwrap();
    let mut c = RemoteTrivial::new(parts.keys.clone(), parts.client.clone().unwrap(), t, Some(4)).unwrap();
    check_all_pairs(&g, &h, |u, v| c.query(u, v).unwrap());
    let (_, file) = c.into_file();
    let mut c = RemoteTrivial::new(parts.keys, file, h.loopback(), Some(5)).unwrap();
    check_all_pairs(&g, &h, |u, v| c.query(u, v).unwrap());
    let widths: std::collections::BTreeSet<u64> = h.trace().snapshot().iter().map(|r| r.bytes).collect();
    assert_eq!(widths.len(), 1);
    h.shutdown().unwrap();
}

#[test]
fn enhanced_over_tcp_and_loopback() {
    let g = load_graph("0\t1\t2\n1\t2\t2\n0\t2\t5\n2\t3\t1\n3\t4\t1\n".as_bytes(), false).unwrap();
    let (h, parts) = serve(&g, Mode::Enhanced, 6);
    let keys: ClientKeys = parts.keys;
    let mut c = RemoteEnhanced::new(&keys, TcpTransport::connect(h.local_addr()).unwrap(), Some(6)).unwrap();
    check_all_pairs(&g, &h, |u, v| c.query(u, v).unwrap());
    let mut c = RemoteEnhanced::new(&keys, h.loopback(), Some(7)).unwrap();
    check_all_pairs(&g, &h, |u, v| c.query(u, v).unwrap());
    h.shutdown().unwrap();
}

#[test]
fn enhanced_refuses_remote_writes() {
    let (h, _) = serve(&four(), Mode::Enhanced, 8);
    let mut t = h.loopback();
    let reply = t.call(&Message::WritePath { tree: 0, leaf: 0, buckets: Vec::new() }).unwrap();
    assert!(matches!(reply, Message::Error { code: code::UNSUPPORTED, .. }), "{reply:?}");
    let reply = t.call(&Message::EnclaveRequest { ct: vec![0; 40] }).unwrap();
    assert_eq!(reply.kind(), MsgKind::Error);
    h.shutdown().unwrap();
}

fn arb_message() -> impl Strategy<Value = Message> {
    let bytes = proptest::collection::vec(any::<u8>(), 0..300);
    prop_oneof![
        (any::<u16>(), any::<u64>()).prop_map(|(tree, leaf)| Message::ReadPath { tree, leaf }),
        bytes.clone().prop_map(|buckets| Message::PathData { buckets }),
        (any::<u16>(), any::<u64>(), bytes.clone()).prop_map(|(tree, leaf, buckets)| Message::WritePath {
            tree,
            leaf,
            buckets
        }),
        Just(Message::Ack),
        bytes.clone().prop_map(|ct| Message::EnclaveRequest { ct }),
        bytes.clone().prop_map(|ct| Message::EnclaveResponse { ct }),
        (any::<u16>(), 0u32..20, 1u32..9, 1u32..500, bytes).prop_map(|(tree, depth, z, slot_width, stream)| {
            Message::UploadTree { tree, header: TreeHeader { depth, z, slot_width }, stream }
        }),
        (any::<u16>(), ".{0,40}").prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}

proptest! {
    #[test]
    fn messages_round_trip(m in arb_message()) {
        let bytes = m.encode();
        prop_assert_eq!(&bytes[..2], b"OG");
        prop_assert_eq!(bytes.len() - FRAME_HEADER_LEN, u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize);
        prop_assert_eq!(bytes[3], m.kind().code());
        prop_assert_eq!(Message::decode(&bytes).unwrap(), m);
    }

    #[test]
    fn truncated_frames_are_rejected(m in arb_message(), cut in 1usize..16) {
        let bytes = m.encode();
        let cut = cut.min(bytes.len());
        prop_assert!(Message::decode(&bytes[..bytes.len() - cut]).is_err());
    }
}
