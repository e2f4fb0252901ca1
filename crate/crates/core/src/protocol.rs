//! Setup, query and reveal for both deployments.
//!
//! In the trivial deployment the client keeps the position map and stash
//! and drives every ORAM access itself; blocks are identified by PRF tokens.
//! In the enhanced deployment a trusted controller co-located with the
//! server holds that state, blocks are identified by the dense pair address
//! `u·|V| + v`, and the position map may be recursive. Either way a query for
//! a path with `k` edges costs exactly `k + 1` ORAM accesses.

use rand::{CryptoRng, RngCore};
use rand_chacha::ChaCha20Rng;

use crate::codec::{Reader, Writer};
use crate::crypto::{ciphertext_width, decode_pair, encode_pair, keygen, KeySet, Prf, Ske, SymKey, TOKEN_LEN};
use crate::error::{Error, Result};
use crate::graph::{compute_spdx, Vertex, Weight, WeightedGraph};
use crate::oram::{
    oram_init, seeded_rng, BlockId, PadMode, PathOram, PathStore, PlainBlock, PositionMap, ServerTree, SlotLayout,
    Stash, TreeOram, DEFAULT_STASH_MAX, DEFAULT_Z,
};
use crate::recursive::{pair_address, position_layout, rpm_build, ChainConfig, RecursivePm, ABSENT, DEFAULT_CHI};

/// Padded plaintext width of an encrypted `(w, v)` pair.
pub const PAIR_PAD: usize = 12;
pub const PATH_CT_WIDTH: usize = ciphertext_width(PAIR_PAD);
/// Data block payload: next-hop identity followed by the sealed `(w, v)`.
pub const DATA_LAYOUT: SlotLayout = SlotLayout { payload_width: TOKEN_LEN + PATH_CT_WIDTH };
/// Width of an enclave request: one sealed vertex pair.
pub const REQUEST_WIDTH: usize = ciphertext_width(8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Trivial,
    Enhanced,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trivial" => Ok(Mode::Trivial),
            "enhanced" => Ok(Mode::Enhanced),
            _ => Err(Error::Config(format!("mode must be trivial or enhanced, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Trivial => "trivial",
            Mode::Enhanced => "enhanced",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SetupParams {
    pub lambda: u32,
    pub z: usize,
    pub pad: PadMode,
    pub stash_max: usize,
    pub mode: Mode,
    /// Controller memory budget in bytes for the enhanced position map.
    /// `None` keeps it flat.
    pub budget: Option<usize>,
    pub chi: usize,
    /// Fixes every random choice; tests only.
    pub seed: Option<u64>,
}

impl Default for SetupParams {
    fn default() -> Self {
        Self {
            lambda: 128,
            z: DEFAULT_Z,
            pad: PadMode::None,
            stash_max: DEFAULT_STASH_MAX,
            mode: Mode::Trivial,
            budget: None,
            chi: DEFAULT_CHI,
            seed: None,
        }
    }
}

/// Derives an independent generator per component from an optional seed.
pub fn component_rng(seed: Option<u64>, component: u64) -> ChaCha20Rng {
    seeded_rng(seed.map(|s| s.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(component)))
}

/// Sealed `(w_i, v)` pairs in hop order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncryptedPath(pub Vec<Vec<u8>>);

impl EncryptedPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u32(self.0.len() as u32);
        for ct in &self.0 {
            w.bytes(ct);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = r.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            out.push(r.bytes()?.to_vec());
        }
        r.finish()?;
        Ok(EncryptedPath(out))
    }
}

/// Decoded data-block payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBlock {
    pub next: BlockId,
    pub ct: Vec<u8>,
}

impl DataBlock {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(DATA_LAYOUT.payload_width);
        out.extend_from_slice(&self.next.0);
        out.extend_from_slice(&self.ct);
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        if payload.len() != DATA_LAYOUT.payload_width {
            return Err(Error::Integrity("data payload has the wrong width".into()));
        }
        Ok(DataBlock {
            next: BlockId(payload[..TOKEN_LEN].try_into().unwrap()),
            ct: payload[TOKEN_LEN..].to_vec(),
        })
    }
}

/// What the client keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientKeys {
    pub mode: Mode,
    pub vertex_count: u32,
    pub keys: KeySet,
    /// Shared with the controller in the enhanced deployment.
    pub session: Option<SymKey>,
}

const KEY_MAGIC: &[u8; 4] = b"OBGK";
const CLIENT_MAGIC: &[u8; 4] = b"OBGC";
const CONTROLLER_MAGIC: &[u8; 4] = b"OBGX";
const STATE_VERSION: u8 = 1;

fn check_magic(r: &mut Reader<'_>, magic: &[u8; 4], what: &str) -> Result<()> {
    if r.take(4)? != magic {
        return Err(Error::Format(format!("not a {what} file")));
    }
    let v = r.u8()?;
    if v != STATE_VERSION {
        return Err(Error::Format(format!("unsupported {what} version {v}")));
    }
    Ok(())
}

fn mode_code(m: Mode) -> u8 {
    match m {
        Mode::Trivial => 0,
        Mode::Enhanced => 1,
    }
}

fn mode_from_code(c: u8) -> Result<Mode> {
    match c {
        0 => Ok(Mode::Trivial),
        1 => Ok(Mode::Enhanced),
        _ => Err(Error::Format(format!("unknown mode {c}"))),
    }
}

impl ClientKeys {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(KEY_MAGIC).u8(STATE_VERSION).u8(mode_code(self.mode)).u32(self.vertex_count);
        w.bytes(self.keys.k1.as_bytes()).bytes(self.keys.k2.as_bytes()).bytes(self.keys.kprf.as_bytes());
        w.bytes(self.session.as_ref().map(SymKey::as_bytes).unwrap_or(&[]));
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, KEY_MAGIC, "key")?;
        let mode = mode_from_code(r.u8()?)?;
        let vertex_count = r.u32()?;
        let keys = KeySet {
            k1: SymKey::from_bytes(r.bytes()?)?,
            k2: SymKey::from_bytes(r.bytes()?)?,
            kprf: SymKey::from_bytes(r.bytes()?)?,
        };
        let session = match r.bytes()? {
            [] => None,
            s => Some(SymKey::from_bytes(s)?),
        };
        r.finish()?;
        Ok(ClientKeys { mode, vertex_count, keys, session })
    }
}

fn write_stash(w: &mut Writer, stash: &Stash) {
    w.u32(stash.len() as u32);
    for b in stash.blocks() {
        w.raw(&b.id.0).u64(b.leaf).bytes(&b.payload);
    }
}

fn read_stash(r: &mut Reader<'_>) -> Result<Stash> {
    let n = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let id = BlockId(r.take(TOKEN_LEN)?.try_into().unwrap());
        let leaf = r.u64()?;
        blocks.push(PlainBlock { id, leaf, payload: r.bytes()?.to_vec() });
    }
    Ok(Stash::from_blocks(blocks))
}

/// Client-held ORAM state of the trivial deployment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrivialState {
    pub stash_max: usize,
    pub positions: PositionMap,
    pub stash: Stash,
}

impl TrivialState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CLIENT_MAGIC).u8(STATE_VERSION).u32(self.stash_max as u32);
        let mut entries: Vec<_> = self.positions.iter().collect();
        entries.sort();
        w.u64(entries.len() as u64);
        for (id, leaf) in entries {
            w.raw(&id.0).u64(*leaf);
        }
        write_stash(&mut w, &self.stash);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, CLIENT_MAGIC, "client state")?;
        let stash_max = r.u32()? as usize;
        let n = r.u64()? as usize;
        let mut positions = PositionMap::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let id = BlockId(r.take(TOKEN_LEN)?.try_into().unwrap());
            positions.insert(id, r.u64()?);
        }
        let stash = read_stash(&mut r)?;
        r.finish()?;
        Ok(TrivialState { stash_max, positions, stash })
    }
}

/// Controller-held state of the enhanced deployment (everything except the
/// trees themselves).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerState {
    pub vertex_count: u32,
    pub chi: usize,
    pub stash_max: usize,
    pub k2: SymKey,
    pub session: SymKey,
    pub data_stash: Stash,
    pub level_stashes: Vec<Stash>,
    pub top: Vec<u64>,
}

impl ControllerState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CONTROLLER_MAGIC).u8(STATE_VERSION);
        w.u32(self.vertex_count).u32(self.chi as u32).u32(self.stash_max as u32);
        w.bytes(self.k2.as_bytes()).bytes(self.session.as_bytes());
        write_stash(&mut w, &self.data_stash);
        w.u32(self.level_stashes.len() as u32);
        for s in &self.level_stashes {
            write_stash(&mut w, s);
        }
        w.u64(self.top.len() as u64);
        for &t in &self.top {
            w.u64(t);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, CONTROLLER_MAGIC, "controller state")?;
        let vertex_count = r.u32()?;
        let chi = r.u32()? as usize;
        let stash_max = r.u32()? as usize;
        let k2 = SymKey::from_bytes(r.bytes()?)?;
        let session = SymKey::from_bytes(r.bytes()?)?;
        let data_stash = read_stash(&mut r)?;
        let levels = r.u32()? as usize;
        let level_stashes = (0..levels).map(|_| read_stash(&mut r)).collect::<Result<_>>()?;
        let n = r.u64()? as usize;
        let top = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
        r.finish()?;
        Ok(ControllerState { vertex_count, chi, stash_max, k2, session, data_stash, level_stashes, top })
    }
}

pub enum Deployment {
    Trivial(TrivialState),
    Enhanced { controller: ControllerState, levels: Vec<ServerTree> },
}

/// Everything [`setup`] produces: client keys, the server's data tree and the
/// per-deployment ORAM state.
pub struct SetupOutput {
    pub keys: ClientKeys,
    pub tree: ServerTree,
    pub deployment: Deployment,
}

fn seal_pair<R: RngCore + CryptoRng>(k1: &Ske, w: Vertex, v: Vertex, rng: &mut R) -> Result<Vec<u8>> {
    k1.encrypt(&encode_pair(w, v), PAIR_PAD, rng)
}

pub fn setup<W: Weight>(g: &WeightedGraph<W>, params: &SetupParams) -> Result<SetupOutput> {
    let n = g.vertex_count();
    if n > u32::MAX as usize / 2 {
        return Err(Error::Capacity(format!("{n} vertices exceed the address space")));
    }
    let mut rng = component_rng(params.seed, 0);
    let keys = keygen(params.lambda, &mut rng)?;
    let prf = Prf::new(&keys.kprf);
    let k1 = Ske::new(&keys.k1);
    let k2 = Ske::new(&keys.k2);
    let spdx = compute_spdx(g);
    let required = params.pad.required_slots(spdx.len(), n);

    let mut entries = Vec::with_capacity(spdx.len());
    for ((u, v), (w, _)) in spdx.iter() {
        let ct = seal_pair(&k1, w, v, &mut rng)?;
        let (id, next) = match params.mode {
            Mode::Trivial => (BlockId::from(prf.pair(u, v)), BlockId::from(prf.pair(w, v))),
            Mode::Enhanced => (
                BlockId::from_address(pair_address(u, v, n)),
                BlockId::from_address(pair_address(w, v, n)),
            ),
        };
        entries.push((id, DataBlock { next, ct }.encode()));
    }

    let init = oram_init(entries, required, params.z, DATA_LAYOUT, &k2, params.stash_max, &mut rng)?;
    match params.mode {
        Mode::Trivial => Ok(SetupOutput {
            keys: ClientKeys { mode: Mode::Trivial, vertex_count: n as u32, keys, session: None },
            tree: init.tree,
            deployment: Deployment::Trivial(TrivialState {
                stash_max: params.stash_max,
                positions: init.positions,
                stash: init.stash,
            }),
        }),
        Mode::Enhanced => {
            let mut assignments = vec![ABSENT; n * n];
            for (id, leaf) in &init.positions {
                assignments[id.address() as usize] = *leaf;
            }
            let cfg = ChainConfig {
                chi: params.chi,
                budget: params.budget.unwrap_or(usize::MAX),
                z: params.z,
                stash_max: params.stash_max,
            };
            let chain = rpm_build(assignments, cfg, &k2, &mut rng)?;
            let session = SymKey::random(keys.k1.len(), &mut rng);
            let controller = ControllerState {
                vertex_count: n as u32,
                chi: params.chi,
                stash_max: params.stash_max,
                k2: keys.k2.clone(),
                session: session.clone(),
                data_stash: init.stash,
                level_stashes: chain.levels.iter().map(|l| l.stash.clone()).collect(),
                top: chain.top,
            };
            Ok(SetupOutput {
                keys: ClientKeys { mode: Mode::Enhanced, vertex_count: n as u32, keys, session: Some(session) },
                tree: init.tree,
                deployment: Deployment::Enhanced {
                    controller,
                    levels: chain.levels.into_iter().map(|l| l.tree).collect(),
                },
            })
        }
    }
}

fn check_pair(u: Vertex, v: Vertex, vertex_count: u32) -> Result<()> {
    for x in [u, v] {
        if x >= vertex_count {
            return Err(Error::VertexOutOfRange { vertex: x as u64, vertex_count: vertex_count as usize });
        }
    }
    Ok(())
}

/// Trivial deployment: the client runs the query loop against the store.
pub struct TrivialClient<S> {
    vertex_count: u32,
    prf: Prf,
    oram: PathOram<S>,
}

impl<S: PathStore> TrivialClient<S> {
    pub fn new(keys: &ClientKeys, state: TrivialState, store: S, rng: ChaCha20Rng) -> Result<Self> {
        let tree = TreeOram::new(store, DATA_LAYOUT, Ske::new(&keys.keys.k2), state.stash, state.stash_max, rng)?;
        Ok(Self {
            vertex_count: keys.vertex_count,
            prf: Prf::new(&keys.keys.kprf),
            oram: PathOram::new(tree, state.positions),
        })
    }

    pub fn oram(&self) -> &PathOram<S> {
        &self.oram
    }

    pub fn oram_mut(&mut self) -> &mut PathOram<S> {
        &mut self.oram
    }

    pub fn into_parts(self) -> (S, TrivialState) {
        let stash_max = self.oram.tree().stash_max();
        let (tree, positions) = self.oram.into_parts();
        let (store, stash) = tree.into_parts();
        (store, TrivialState { stash_max, positions, stash })
    }

    /// Chases next-hop tokens from `P(u, v)` until an access misses.
    pub fn query(&mut self, u: Vertex, v: Vertex) -> Result<EncryptedPath> {
        check_pair(u, v, self.vertex_count)?;
        let mut resp = Vec::new();
        let mut current = BlockId::from(self.prf.pair(u, v));
        while let Some(payload) = self.oram.access(current)? {
            if resp.len() >= self.vertex_count as usize {
                return Err(Error::Integrity("next-hop chain longer than any simple path".into()));
            }
            let block = DataBlock::decode(&payload)?;
            resp.push(block.ct);
            current = block.next;
        }
        Ok(EncryptedPath(resp))
    }
}

/// Decrypts a response into the vertex path from `u` to `v`. `Ok(None)`
/// means no path exists.
pub fn reveal(resp: &EncryptedPath, u: Vertex, v: Vertex, k1: &SymKey) -> Result<Option<Vec<Vertex>>> {
    if resp.is_empty() {
        return Ok((u == v).then(Vec::new));
    }
    let cipher = Ske::new(k1);
    let mut path = Vec::with_capacity(resp.len() + 1);
    path.push(u);
    for ct in &resp.0 {
        let (w, dest) = decode_pair(&cipher.decrypt(ct)?)?;
        if dest != v {
            return Err(Error::Integrity(format!("hop toward {dest} in a path to {v}")));
        }
        path.push(w);
    }
    if path.last() != Some(&v) {
        return Err(Error::Integrity("path does not end at its destination".into()));
    }
    Ok(Some(path))
}

/// Enhanced deployment: the trusted controller that owns the stash and the
/// (possibly recursive) position map and answers sealed requests.
pub struct Controller<S> {
    vertex_count: u32,
    data: TreeOram<S>,
    pm: RecursivePm<S>,
    session: Ske,
    k2_key: SymKey,
    session_key: SymKey,
    rng: ChaCha20Rng,
}

impl<S: PathStore> Controller<S> {
    /// `level_stores[i]` must serve level `i` of the position chain.
    pub fn new(state: ControllerState, data_store: S, level_stores: Vec<S>, seed: Option<u64>) -> Result<Self> {
        if level_stores.len() != state.level_stashes.len() {
            return Err(Error::Config(format!(
                "controller state has {} levels but {} stores were supplied",
                state.level_stashes.len(),
                level_stores.len()
            )));
        }
        let k2 = Ske::new(&state.k2);
        let data_leaves = data_store.header().leaf_count();
        let data = TreeOram::new(
            data_store,
            DATA_LAYOUT,
            k2.clone(),
            state.data_stash,
            state.stash_max,
            component_rng(seed, 10),
        )?;
        let levels = level_stores
            .into_iter()
            .zip(state.level_stashes)
            .enumerate()
            .map(|(i, (store, stash))| {
                TreeOram::new(
                    store,
                    position_layout(state.chi),
                    k2.clone(),
                    stash,
                    state.stash_max,
                    component_rng(seed, 20 + i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let pm = RecursivePm::new(state.chi, data_leaves, levels, state.top, component_rng(seed, 11))?;
        let n = state.vertex_count as u64;
        if pm.capacity() < n * n {
            return Err(Error::Config("position map does not cover the pair address space".into()));
        }
        Ok(Self {
            vertex_count: state.vertex_count,
            data,
            pm,
            session: Ske::new(&state.session),
            k2_key: state.k2,
            session_key: state.session,
            rng: component_rng(seed, 12),
        })
    }

    pub fn vertex_count(&self) -> u32 {
        self.vertex_count
    }

    pub fn data_tree(&self) -> &TreeOram<S> {
        &self.data
    }

    pub fn position_map(&self) -> &RecursivePm<S> {
        &self.pm
    }

    /// Controller-resident bytes: position top array, every stash and keys.
    pub fn resident_bytes(&self) -> usize {
        self.pm.resident_bytes() + self.data.stash().len() * DATA_LAYOUT.plain_width() + self.k2_key.len() + self.session_key.len()
    }

    /// Largest single block the controller may hold.
    pub fn block_bytes(&self) -> usize {
        self.pm.block_bytes().max(DATA_LAYOUT.plain_width())
    }

    /// The query loop inside the trust boundary.
    pub fn query(&mut self, u: Vertex, v: Vertex) -> Result<EncryptedPath> {
        check_pair(u, v, self.vertex_count)?;
        let n = self.vertex_count as usize;
        let mut resp = Vec::new();
        let mut address = pair_address(u, v, n);
        loop {
            let remap = self.pm.get_and_remap(address)?;
            let Some(old) = remap.old else {
                let leaf = self.data.random_leaf();
                self.data.access(None, leaf, leaf, |_| {})?;
                break;
            };
            let id = BlockId::from_address(address);
            let payload = self
                .data
                .access(Some(id), old, remap.new, |_| {})?
                .ok_or_else(|| Error::Integrity("mapped block missing from its path".into()))?;
            if resp.len() >= n {
                return Err(Error::Integrity("next-hop chain longer than any simple path".into()));
            }
            let block = DataBlock::decode(&payload)?;
            resp.push(block.ct);
            address = block.next.address();
        }
        Ok(EncryptedPath(resp))
    }

    /// Opens a sealed request, runs the query and seals the response.
    pub fn handle(&mut self, request: &[u8]) -> Result<Vec<u8>> {
        if request.len() != REQUEST_WIDTH {
            return Err(Error::Authentication);
        }
        let (u, v) = decode_pair(&self.session.decrypt(request)?)?;
        let resp = self.query(u, v)?.to_bytes();
        self.session.encrypt(&resp, resp.len(), &mut self.rng)
    }

    pub fn into_parts(self) -> (ControllerState, S, Vec<S>) {
        let chi = self.pm.chi();
        let stash_max = self.data.stash_max();
        let (levels, top) = self.pm.into_parts();
        let (data_store, data_stash) = self.data.into_parts();
        let (stores, level_stashes): (Vec<S>, Vec<Stash>) = levels.into_iter().map(TreeOram::into_parts).unzip();
        let state = ControllerState {
            vertex_count: self.vertex_count,
            chi,
            stash_max,
            k2: self.k2_key,
            session: self.session_key,
            data_stash,
            level_stashes,
            top,
        };
        (state, data_store, stores)
    }
}

/// Client side of the enhanced deployment: seals requests, opens responses.
pub struct EnhancedClient {
    vertex_count: u32,
    k1: SymKey,
    session: Ske,
    rng: ChaCha20Rng,
}

impl EnhancedClient {
    pub fn new(keys: &ClientKeys, rng: ChaCha20Rng) -> Result<Self> {
        let session = keys
            .session
            .as_ref()
            .ok_or_else(|| Error::Config("key file has no session key".into()))?;
        Ok(Self { vertex_count: keys.vertex_count, k1: keys.keys.k1.clone(), session: Ske::new(session), rng })
    }

    pub fn request(&mut self, u: Vertex, v: Vertex) -> Result<Vec<u8>> {
        check_pair(u, v, self.vertex_count)?;
        self.session.encrypt(&encode_pair(u, v), 8, &mut self.rng)
    }

    pub fn open(&self, response: &[u8]) -> Result<EncryptedPath> {
        EncryptedPath::from_bytes(&self.session.decrypt(response)?)
    }

    pub fn reveal(&self, response: &[u8], u: Vertex, v: Vertex) -> Result<Option<Vec<Vertex>>> {
        reveal(&self.open(response)?, u, v, &self.k1)
    }
}
