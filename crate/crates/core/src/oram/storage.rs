//! Untrusted bucket storage: the binary tree the server keeps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::{AccessTrace, MsgKind};

pub const TREE_MAGIC: [u8; 4] = *b"OBGT";
pub const TREE_VERSION: u8 = 1;
/// magic(4) | version(1) | depth(4) | z(4) | slot width(4), big-endian.
pub const TREE_HEADER_LEN: usize = 17;

/// Tree shape: depth `L`, `Z` slots per bucket and `B` bytes per sealed slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeHeader {
    pub depth: u32,
    pub z: u32,
    pub slot_width: u32,
}

impl TreeHeader {
    pub fn leaf_count(&self) -> u64 {
        1u64 << self.depth
    }

    pub fn bucket_count(&self) -> usize {
        (1usize << (self.depth + 1)) - 1
    }

    pub fn bucket_bytes(&self) -> usize {
        self.z as usize * self.slot_width as usize
    }

    /// Bytes moved by one read_path or write_path: `(L+1)·Z·B`.
    pub fn path_bytes(&self) -> usize {
        (self.depth as usize + 1) * self.bucket_bytes()
    }

    pub fn check_leaf(&self, leaf: u64) -> Result<()> {
        if leaf < self.leaf_count() {
            Ok(())
        } else {
            Err(Error::LeafOutOfRange { leaf, depth: self.depth })
        }
    }

    /// Heap indices of the buckets on the path to `leaf`, root first.
    pub fn path_nodes(&self, leaf: u64) -> impl Iterator<Item = usize> {
        let depth = self.depth;
        (0..=depth).map(move |d| ((1usize << d) - 1) + (leaf >> (depth - d)) as usize)
    }

    pub fn encode(&self) -> [u8; TREE_HEADER_LEN] {
        let mut out = [0u8; TREE_HEADER_LEN];
        out[..4].copy_from_slice(&TREE_MAGIC);
        out[4] = TREE_VERSION;
        out[5..9].copy_from_slice(&self.depth.to_be_bytes());
        out[9..13].copy_from_slice(&self.z.to_be_bytes());
        out[13..17].copy_from_slice(&self.slot_width.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < TREE_HEADER_LEN {
            return Err(Error::Format("truncated tree header".into()));
        }
        if bytes[..4] != TREE_MAGIC {
            return Err(Error::Format("bad tree magic".into()));
        }
        if bytes[4] != TREE_VERSION {
            return Err(Error::Format(format!("unsupported tree version {}", bytes[4])));
        }
        let word = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
        let h = TreeHeader { depth: word(5), z: word(9), slot_width: word(13) };
        if h.depth > 40 || h.z == 0 || h.slot_width == 0 {
            return Err(Error::Format(format!("implausible tree shape {h:?}")));
        }
        Ok(h)
    }
}

/// One tree node: exactly `Z` sealed slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket(pub Vec<u8>);

impl Bucket {
    pub fn slots(&self, slot_width: usize) -> impl Iterator<Item = &[u8]> {
        self.0.chunks_exact(slot_width)
    }
}

/// Storage side of one ORAM instance.
pub trait PathStore {
    fn header(&self) -> TreeHeader;
    /// The `L+1` buckets on the path to `leaf`, root first.
    fn read_path(&mut self, leaf: u64) -> Result<Vec<Bucket>>;
    /// Replaces the buckets on the path to `leaf`.
    fn write_path(&mut self, leaf: u64, buckets: Vec<Bucket>) -> Result<()>;
}

impl<S: PathStore + ?Sized> PathStore for Box<S> {
    fn header(&self) -> TreeHeader {
        (**self).header()
    }
    fn read_path(&mut self, leaf: u64) -> Result<Vec<Bucket>> {
        (**self).read_path(leaf)
    }
    fn write_path(&mut self, leaf: u64, buckets: Vec<Bucket>) -> Result<()> {
        (**self).write_path(leaf, buckets)
    }
}

/// In-memory bucket tree in heap order, optionally logging every access.
#[derive(Debug, Clone)]
pub struct ServerTree {
    id: u16,
    header: TreeHeader,
    data: Vec<u8>,
    trace: Option<AccessTrace>,
}

impl ServerTree {
    pub fn from_buckets(header: TreeHeader, buckets: Vec<Bucket>) -> Result<Self> {
        if buckets.len() != header.bucket_count() {
            return Err(Error::Format(format!(
                "expected {} buckets, got {}",
                header.bucket_count(),
                buckets.len()
            )));
        }
        let mut data = Vec::with_capacity(header.bucket_count() * header.bucket_bytes());
        for b in buckets {
            if b.0.len() != header.bucket_bytes() {
                return Err(Error::Format("bucket width mismatch".into()));
            }
            data.extend_from_slice(&b.0);
        }
        Ok(Self { id: 0, header, data, trace: None })
    }

    pub fn with_trace(mut self, id: u16, trace: AccessTrace) -> Self {
        self.id = id;
        self.trace = Some(trace);
        self
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn set_id(&mut self, id: u16) {
        self.id = id;
    }

    pub fn trace(&self) -> Option<&AccessTrace> {
        self.trace.as_ref()
    }

    pub fn set_trace(&mut self, trace: Option<AccessTrace>) {
        self.trace = trace;
    }

    pub fn bucket(&self, index: usize) -> Bucket {
        let w = self.header.bucket_bytes();
        Bucket(self.data[index * w..(index + 1) * w].to_vec())
    }

    /// Serialized form: header followed by buckets in heap order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TREE_HEADER_LEN + self.data.len());
        out.extend_from_slice(&self.header.encode());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = TreeHeader::decode(bytes)?;
        let body = &bytes[TREE_HEADER_LEN..];
        let expected = header.bucket_count() * header.bucket_bytes();
        if body.len() != expected {
            return Err(Error::Format(format!(
                "tree body is {} bytes, header implies {expected}",
                body.len()
            )));
        }
        Ok(Self { id: 0, header, data: body.to_vec(), trace: None })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(&self.header.encode())?;
            w.write_all(&self.data)?;
            w.flush()?;
            w.get_ref().sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

impl PathStore for ServerTree {
    fn header(&self) -> TreeHeader {
        self.header
    }

    fn read_path(&mut self, leaf: u64) -> Result<Vec<Bucket>> {
        self.header.check_leaf(leaf)?;
        let out: Vec<Bucket> = self.header.path_nodes(leaf).map(|i| self.bucket(i)).collect();
        if let Some(t) = &self.trace {
            t.record(self.id, MsgKind::ReadPath, Some(leaf), self.header.path_bytes() as u64);
        }
        Ok(out)
    }

    fn write_path(&mut self, leaf: u64, buckets: Vec<Bucket>) -> Result<()> {
        self.header.check_leaf(leaf)?;
        let w = self.header.bucket_bytes();
        if buckets.len() != self.header.depth as usize + 1 || buckets.iter().any(|b| b.0.len() != w) {
            return Err(Error::Format("write_path payload has the wrong shape".into()));
        }
        let nodes: Vec<usize> = self.header.path_nodes(leaf).collect();
        for (node, b) in nodes.into_iter().zip(buckets) {
            self.data[node * w..(node + 1) * w].copy_from_slice(&b.0);
        }
        if let Some(t) = &self.trace {
            t.record(self.id, MsgKind::WritePath, Some(leaf), self.header.path_bytes() as u64);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(depth: u32) -> ServerTree {
        let h = TreeHeader { depth, z: 2, slot_width: 3 };
        let buckets = (0..h.bucket_count()).map(|i| Bucket(vec![i as u8; 6])).collect();
        ServerTree::from_buckets(h, buckets).unwrap()
    }

    #[test]
    fn path_has_depth_plus_one_buckets() {
        let mut t = tree(1);
        let p = t.read_path(0).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].0, vec![0; 6]);
        assert_eq!(p[1].0, vec![1; 6]);
        assert_eq!(t.read_path(1).unwrap()[1].0, vec![2; 6]);
    }

    #[test]
    fn path_nodes_heap_layout() {
        let h = TreeHeader { depth: 3, z: 1, slot_width: 1 };
        assert_eq!(h.path_nodes(0).collect::<Vec<_>>(), vec![0, 1, 3, 7]);
        assert_eq!(h.path_nodes(5).collect::<Vec<_>>(), vec![0, 2, 5, 12]);
        assert_eq!(h.path_nodes(7).collect::<Vec<_>>(), vec![0, 2, 6, 14]);
    }

    #[test]
    fn write_then_read_is_identical() {
        let mut t = tree(2);
        let new: Vec<Bucket> = (0..3).map(|i| Bucket(vec![100 + i; 6])).collect();
        t.write_path(3, new.clone()).unwrap();
        assert_eq!(t.read_path(3).unwrap(), new);
        // sibling path shares only the upper buckets
        let sib = t.read_path(2).unwrap();
        assert_eq!(sib[..2], new[..2]);
        assert_ne!(sib[2], new[2]);
    }

    #[test]
    fn out_of_range_leaf() {
        let mut t = tree(1);
        assert!(matches!(t.read_path(2), Err(Error::LeafOutOfRange { leaf: 2, depth: 1 })));
        assert!(t.write_path(2, vec![]).is_err());
    }

    #[test]
    fn file_round_trip_and_bad_magic() {
        let t = tree(2);
        let bytes = t.to_bytes();
        let back = ServerTree::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ServerTree::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(ServerTree::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn traced_accesses() {
        let trace = AccessTrace::new();
        let mut t = tree(1).with_trace(4, trace.clone());
        let p = t.read_path(1).unwrap();
        t.write_path(1, p).unwrap();
        let recs = trace.snapshot();
        assert_eq!(recs.len(), 2);
        assert_eq!((recs[0].tree, recs[0].kind, recs[0].leaf, recs[0].bytes), (4, MsgKind::ReadPath, Some(1), 12));
        assert_eq!(recs[1].kind, MsgKind::WritePath);
    }
}
