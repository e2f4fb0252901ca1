//! Client side: transports, a remote [`PathStore`] and query helpers for
//! both deployments.

use std::net::{TcpStream, ToSocketAddrs};

use obge::graph::Vertex;
use obge::oram::{Bucket, PathStore, ServerTree, TreeHeader};
use obge::protocol::{component_rng, reveal, ClientKeys, EnhancedClient, TrivialClient, TrivialState};
use obge::{Error, Result};

use crate::engine::split_path;
use crate::files::ClientFile;
use crate::frame::{read_frame, write_frame};
use crate::message::Message;

/// One request, one response.
pub trait Transport {
    fn call(&mut self, msg: &Message) -> Result<Message>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn call(&mut self, msg: &Message) -> Result<Message> {
        (**self).call(msg)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn call(&mut self, msg: &Message) -> Result<Message> {
        (**self).call(msg)
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("connect: {e}")))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn stream(&self) -> &TcpStream {
        &self.stream
    }
}

impl Transport for TcpTransport {
    fn call(&mut self, msg: &Message) -> Result<Message> {
        write_frame(&mut self.stream, &msg.to_frame())?;
        let frame = read_frame(&mut self.stream)?.ok_or_else(|| Error::Transport("server closed the connection".into()))?;
        Message::from_frame(&frame)
    }
}

/// Sends `msg` and turns an error reply into an `Err`.
pub fn request<T: Transport>(t: &mut T, msg: &Message) -> Result<Message> {
    match t.call(msg)? {
        Message::Error { code, detail } => Err(Message::into_error(code, detail)),
        m => Ok(m),
    }
}

/// A server-hosted tree seen through a transport.
pub struct RemoteStore<T> {
    transport: T,
    tree: u16,
    header: TreeHeader,
}

impl<T: Transport> RemoteStore<T> {
    pub fn new(transport: T, tree: u16, header: TreeHeader) -> Self {
        Self { transport, tree, header }
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }
}

impl<T: Transport> PathStore for RemoteStore<T> {
    fn header(&self) -> TreeHeader {
        self.header
    }

    fn read_path(&mut self, leaf: u64) -> Result<Vec<Bucket>> {
        match request(&mut self.transport, &Message::ReadPath { tree: self.tree, leaf })? {
            Message::PathData { buckets } => split_path(&self.header, &buckets),
            m => Err(Error::Transport(format!("expected PathData, got {}", m.kind()))),
        }
    }

    fn write_path(&mut self, leaf: u64, buckets: Vec<Bucket>) -> Result<()> {
        let buckets = buckets.into_iter().flat_map(|b| b.0).collect();
        match request(&mut self.transport, &Message::WritePath { tree: self.tree, leaf, buckets })? {
            Message::Ack => Ok(()),
            m => Err(Error::Transport(format!("expected Ack, got {}", m.kind()))),
        }
    }
}

pub fn upload_tree<T: Transport>(t: &mut T, id: u16, tree: &ServerTree) -> Result<()> {
    let bytes = tree.to_bytes();
    let header = tree.header();
    let stream = bytes[obge::oram::storage::TREE_HEADER_LEN..].to_vec();
    match request(t, &Message::UploadTree { tree: id, header, stream })? {
        Message::Ack => Ok(()),
        m => Err(Error::Transport(format!("expected Ack, got {}", m.kind()))),
    }
}

/// Trivial-mode client driving a remote data tree.
pub struct RemoteTrivial<T> {
    keys: ClientKeys,
    client: TrivialClient<RemoteStore<T>>,
}

impl<T: Transport> RemoteTrivial<T> {
    pub fn new(keys: ClientKeys, file: ClientFile, transport: T, seed: Option<u64>) -> Result<Self> {
        let store = RemoteStore::new(transport, 0, file.header);
        let client = TrivialClient::new(&keys, file.state, store, component_rng(seed, 1))?;
        Ok(Self { keys, client })
    }

    pub fn query(&mut self, u: Vertex, v: Vertex) -> Result<Option<Vec<Vertex>>> {
        let resp = self.client.query(u, v)?;
        reveal(&resp, u, v, &self.keys.keys.k1)
    }

    pub fn into_file(self) -> (T, ClientFile) {
        let (store, state): (RemoteStore<T>, TrivialState) = self.client.into_parts();
        let header = store.header;
        (store.transport, ClientFile { header, state })
    }
}

/// Enhanced-mode client: one sealed request per query.
pub struct RemoteEnhanced<T> {
    client: EnhancedClient,
    transport: T,
}

impl<T: Transport> RemoteEnhanced<T> {
    pub fn new(keys: &ClientKeys, transport: T, seed: Option<u64>) -> Result<Self> {
        Ok(Self { client: EnhancedClient::new(keys, component_rng(seed, 2))?, transport })
    }

    pub fn query(&mut self, u: Vertex, v: Vertex) -> Result<Option<Vec<Vertex>>> {
        let ct = self.client.request(u, v)?;
        match request(&mut self.transport, &Message::EnclaveRequest { ct })? {
            Message::EnclaveResponse { ct } => self.client.reveal(&ct, u, v),
            m => Err(Error::Transport(format!("expected EnclaveResponse, got {}", m.kind()))),
        }
    }
}
