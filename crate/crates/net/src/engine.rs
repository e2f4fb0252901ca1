//! Single-owner server state. Every request, whether from a remote client or
//! from the in-process controller, is answered here as a [`Message`], so the
//! access trace sees exactly what an untrusted host would.

use std::cell::RefCell;
use std::path::PathBuf;
use std::rc::Rc;

use obge::oram::{Bucket, PathStore, ServerTree, TreeHeader};
use obge::protocol::{Controller, ControllerState, Mode};
use obge::trace::{AccessTrace, MsgKind};
use obge::{Error, Result};

use crate::config::ServerConfig;
use crate::files::write_atomic;
use crate::message::{code, Message};

/// Everything the server persists. `trees[0]` is the data tree; in enhanced
/// mode `trees[1..]` are the position-map levels.
#[derive(Debug, Clone)]
pub struct EngineState {
    pub mode: Mode,
    pub trees: Vec<ServerTree>,
    pub controller: Option<ControllerState>,
}

impl EngineState {
    pub fn load(cfg: &ServerConfig) -> Result<Self> {
        let mut trees = vec![ServerTree::load(&cfg.tree_path)?];
        let controller = match cfg.mode {
            Mode::Trivial => None,
            Mode::Enhanced => {
                let path = cfg.controller_path.as_ref().ok_or_else(|| Error::Config("missing controller_path".into()))?;
                let mut state = ControllerState::from_bytes(&std::fs::read(path)?)?;
                state.stash_max = cfg.stash_max;
                for p in &cfg.level_paths {
                    trees.push(ServerTree::load(p)?);
                }
                Some(state)
            }
        };
        if let Some(t) = trees.iter().find(|t| t.header().z != cfg.z) {
            return Err(Error::Config(format!("config says Z={} but a tree has Z={}", cfg.z, t.header().z)));
        }
        Ok(Self { mode: cfg.mode, trees, controller })
    }

    /// Files written by [`Self::save`] for this config.
    pub fn paths(cfg: &ServerConfig) -> Vec<PathBuf> {
        let mut out = vec![cfg.tree_path.clone()];
        if cfg.mode == Mode::Enhanced {
            out.extend(cfg.level_paths.iter().cloned());
            out.extend(cfg.controller_path.iter().cloned());
        }
        out
    }

    pub fn save(&self, cfg: &ServerConfig) -> Result<()> {
        self.trees[0].save(&cfg.tree_path)?;
        if let Some(state) = &self.controller {
            if cfg.level_paths.len() != self.trees.len() - 1 {
                return Err(Error::Config("level_paths does not match the position-map depth".into()));
            }
            for (t, p) in self.trees[1..].iter().zip(&cfg.level_paths) {
                t.save(p)?;
            }
            let path = cfg.controller_path.as_ref().ok_or_else(|| Error::Config("missing controller_path".into()))?;
            write_atomic(path, &state.to_bytes())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Remote,
    Controller,
}

struct Storage {
    mode: Mode,
    trees: Vec<ServerTree>,
    trace: AccessTrace,
}

impl Storage {
    fn tree(&mut self, id: u16) -> Result<&mut ServerTree> {
        let n = self.trees.len();
        self.trees.get_mut(id as usize).ok_or_else(|| Error::Config(format!("no tree {id} (have {n})")))
    }

    fn handle(&mut self, msg: Message, origin: Origin) -> Message {
        let out = match msg {
            Message::ReadPath { tree, leaf } => self.tree(tree).and_then(|t| t.read_path(leaf)).map(|buckets| {
                Message::PathData { buckets: buckets.into_iter().flat_map(|b| b.0).collect() }
            }),
            Message::WritePath { .. } if origin == Origin::Remote && self.mode == Mode::Enhanced => {
                return Message::error(code::UNSUPPORTED, "trees are owned by the controller in enhanced mode");
            }
            Message::WritePath { tree, leaf, buckets } => self.tree(tree).and_then(|t| {
                let parts = split_path(&t.header(), &buckets)?;
                t.write_path(leaf, parts)
            }).map(|_| Message::Ack),
            Message::UploadTree { .. } if self.mode == Mode::Enhanced => {
                return Message::error(code::UNSUPPORTED, "uploads are only accepted in trivial mode");
            }
            Message::UploadTree { tree, header, stream } => self.upload(tree, header, stream).map(|_| Message::Ack),
            other => return Message::error(code::MALFORMED, format!("{} is not a storage request", other.kind())),
        };
        out.unwrap_or_else(|e| Message::from_error(&e))
    }

    fn upload(&mut self, id: u16, header: TreeHeader, stream: Vec<u8>) -> Result<()> {
        let mut bytes = header.encode().to_vec();
        bytes.extend_from_slice(&stream);
        let mut tree = ServerTree::from_bytes(&bytes)?;
        self.trace.record(id, MsgKind::UploadTree, None, bytes.len() as u64);
        tree.set_id(id);
        tree.set_trace(Some(self.trace.clone()));
        match (id as usize).cmp(&self.trees.len()) {
            std::cmp::Ordering::Less => self.trees[id as usize] = tree,
            std::cmp::Ordering::Equal => self.trees.push(tree),
            std::cmp::Ordering::Greater => return Err(Error::Config(format!("tree id {id} leaves a gap"))),
        }
        Ok(())
    }
}

/// Splits a concatenated path into buckets, checking the total width.
pub fn split_path(header: &TreeHeader, bytes: &[u8]) -> Result<Vec<Bucket>> {
    if bytes.len() != header.path_bytes() {
        return Err(Error::Format(format!("path carries {} bytes, expected {}", bytes.len(), header.path_bytes())));
    }
    Ok(bytes.chunks_exact(header.bucket_bytes()).map(|c| Bucket(c.to_vec())).collect())
}

/// The controller's only door to storage: requests are serialized to wire
/// bytes and answered by the same handler remote clients reach.
pub struct BoundaryStore {
    storage: Rc<RefCell<Storage>>,
    tree: u16,
    header: TreeHeader,
}

impl BoundaryStore {
    fn call(&self, msg: Message) -> Result<Message> {
        let msg = Message::decode(&msg.encode())?;
        let reply = self.storage.borrow_mut().handle(msg, Origin::Controller);
        match Message::decode(&reply.encode())? {
            Message::Error { code, detail } => Err(Message::into_error(code, detail)),
            m => Ok(m),
        }
    }
}

impl PathStore for BoundaryStore {
    fn header(&self) -> TreeHeader {
        self.header
    }

    fn read_path(&mut self, leaf: u64) -> Result<Vec<Bucket>> {
        match self.call(Message::ReadPath { tree: self.tree, leaf })? {
            Message::PathData { buckets } => split_path(&self.header, &buckets),
            m => Err(Error::Transport(format!("expected PathData, got {}", m.kind()))),
        }
    }

    fn write_path(&mut self, leaf: u64, buckets: Vec<Bucket>) -> Result<()> {
        let buckets = buckets.into_iter().flat_map(|b| b.0).collect();
        match self.call(Message::WritePath { tree: self.tree, leaf, buckets })? {
            Message::Ack => Ok(()),
            m => Err(Error::Transport(format!("expected Ack, got {}", m.kind()))),
        }
    }
}

pub struct Engine {
    storage: Rc<RefCell<Storage>>,
    controller: Option<Controller<BoundaryStore>>,
    trace: AccessTrace,
    budget: Option<usize>,
}

impl Engine {
    /// Attaches `trace` to every tree and, in enhanced mode, starts the controller.
    pub fn new(state: EngineState, trace: AccessTrace, budget: Option<usize>) -> Result<Self> {
        let mode = state.mode;
        let trees: Vec<ServerTree> = state
            .trees
            .into_iter()
            .enumerate()
            .map(|(i, t)| t.with_trace(i as u16, trace.clone()))
            .collect();
        let headers: Vec<TreeHeader> = trees.iter().map(PathStore::header).collect();
        let storage = Rc::new(RefCell::new(Storage { mode, trees, trace: trace.clone() }));
        let controller = match (mode, state.controller) {
            (Mode::Trivial, _) => None,
            (Mode::Enhanced, None) => return Err(Error::Config("enhanced mode without controller state".into())),
            (Mode::Enhanced, Some(cs)) => {
                let store = |i: usize| BoundaryStore { storage: storage.clone(), tree: i as u16, header: headers[i] };
                let levels = (1..headers.len()).map(store).collect();
                let ctl = Controller::new(cs, store(0), levels, None)?;
                if let Some(b) = budget {
                    if ctl.resident_bytes() > b + ctl.block_bytes() {
                        return Err(Error::Capacity(format!(
                            "controller needs {} resident bytes, budget is {b}",
                            ctl.resident_bytes()
                        )));
                    }
                }
                Some(ctl)
            }
        };
        Ok(Self { storage, controller, trace, budget })
    }

    pub fn handle(&mut self, msg: Message) -> Message {
        let reply = match msg {
            Message::EnclaveRequest { ct } => self.enclave(&ct),
            other => self.storage.borrow_mut().handle(other, Origin::Remote),
        };
        if let Message::Error { detail, .. } = &reply {
            self.trace.record(0, MsgKind::Error, None, detail.len() as u64);
        }
        reply
    }

    fn enclave(&mut self, ct: &[u8]) -> Message {
        let Some(ctl) = self.controller.as_mut() else {
            return Message::error(code::UNSUPPORTED, "no controller in trivial mode");
        };
        self.trace.record(0, MsgKind::EnclaveRequest, None, ct.len() as u64);
        let reply = match ctl.handle(ct) {
            Ok(resp) => {
                self.trace.record(0, MsgKind::EnclaveResponse, None, resp.len() as u64);
                Message::EnclaveResponse { ct: resp }
            }
            Err(e) => Message::from_error(&e),
        };
        if let Some(b) = self.budget {
            if ctl.resident_bytes() > b + ctl.block_bytes() {
                return Message::error(code::CAPACITY, "controller exceeded its memory budget");
            }
        }
        reply
    }

    /// Controller-resident bytes, if a controller runs.
    pub fn resident_bytes(&self) -> Option<usize> {
        self.controller.as_ref().map(Controller::resident_bytes)
    }

    pub fn into_state(self) -> EngineState {
        let controller = self.controller.map(|c| c.into_parts().0);
        let storage = Rc::try_unwrap(self.storage)
            .ok()
            .expect("controller stores dropped with the controller")
            .into_inner();
        let trees = storage
            .trees
            .into_iter()
            .map(|mut t| {
                t.set_trace(None);
                t
            })
            .collect();
        EngineState { mode: storage.mode, trees, controller }
    }
}
