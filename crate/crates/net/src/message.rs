//! Typed messages carried in frames.

use obge::codec::{Reader, Writer};
use obge::oram::storage::{TreeHeader, TREE_HEADER_LEN};
use obge::trace::MsgKind;
use obge::{Error, Result};

use crate::frame::Frame;

/// Error codes carried by [`Message::Error`].
pub mod code {
    /// Unknown message type or malformed payload.
    pub const MALFORMED: u16 = 1;
    /// Authentication or integrity failure.
    pub const INTEGRITY: u16 = 2;
    /// Stash or tree capacity exhausted.
    pub const CAPACITY: u16 = 3;
    /// Well-formed request the server cannot serve (bad tree id, leaf out of range).
    pub const BAD_REQUEST: u16 = 4;
    /// Request not available in the server's mode.
    pub const UNSUPPORTED: u16 = 5;
    /// Server is shutting down.
    pub const UNAVAILABLE: u16 = 6;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ReadPath { tree: u16, leaf: u64 },
    /// Buckets of one path, root first, concatenated.
    PathData { buckets: Vec<u8> },
    WritePath { tree: u16, leaf: u64, buckets: Vec<u8> },
    Ack,
    EnclaveRequest { ct: Vec<u8> },
    EnclaveResponse { ct: Vec<u8> },
    /// Replaces tree `tree` with `header` and the heap-ordered bucket stream.
    UploadTree { tree: u16, header: TreeHeader, stream: Vec<u8> },
    Error { code: u16, detail: String },
}

impl Message {
    pub fn kind(&self) -> MsgKind {
        match self {
            Message::ReadPath { .. } => MsgKind::ReadPath,
            Message::PathData { .. } => MsgKind::PathData,
            Message::WritePath { .. } => MsgKind::WritePath,
            Message::Ack => MsgKind::Ack,
            Message::EnclaveRequest { .. } => MsgKind::EnclaveRequest,
            Message::EnclaveResponse { .. } => MsgKind::EnclaveResponse,
            Message::UploadTree { .. } => MsgKind::UploadTree,
            Message::Error { .. } => MsgKind::Error,
        }
    }

    pub fn error(code: u16, detail: impl Into<String>) -> Self {
        Message::Error { code, detail: detail.into() }
    }

    /// Error reply describing a failed request.
    pub fn from_error(e: &Error) -> Self {
        let c = match e {
            Error::Authentication | Error::Integrity(_) => code::INTEGRITY,
            Error::Capacity(_) | Error::StashOverflow { .. } => code::CAPACITY,
            Error::Format(_) | Error::Parse { .. } => code::MALFORMED,
            _ => code::BAD_REQUEST,
        };
        Message::error(c, e.to_string())
    }

    /// Converts an error reply back into a library error.
    pub fn into_error(code: u16, detail: String) -> Error {
        match code {
            code::INTEGRITY => Error::Integrity(detail),
            code::CAPACITY => Error::Capacity(detail),
            code::MALFORMED => Error::Format(detail),
            _ => Error::Transport(detail),
        }
    }

    pub fn to_frame(&self) -> Frame {
        let mut w = Writer::new();
        match self {
            Message::ReadPath { tree, leaf } => {
                w.u16(*tree).u64(*leaf);
            }
            Message::PathData { buckets } => {
                w.raw(buckets);
            }
            Message::WritePath { tree, leaf, buckets } => {
                w.u16(*tree).u64(*leaf).raw(buckets);
            }
            Message::Ack => {}
            Message::EnclaveRequest { ct } | Message::EnclaveResponse { ct } => {
                w.raw(ct);
            }
            Message::UploadTree { tree, header, stream } => {
                w.u16(*tree).raw(&header.encode()).raw(stream);
            }
            Message::Error { code, detail } => {
                w.u16(*code).raw(detail.as_bytes());
            }
        }
        Frame::new(self.kind().code(), w.finish())
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let kind = MsgKind::from_code(frame.msg_type)
            .ok_or_else(|| Error::Format(format!("unknown message type 0x{:02x}", frame.msg_type)))?;
        let mut r = Reader::new(&frame.payload);
        let msg = match kind {
            MsgKind::ReadPath => Message::ReadPath { tree: r.u16()?, leaf: r.u64()? },
            MsgKind::PathData => Message::PathData { buckets: r.rest().to_vec() },
            MsgKind::WritePath => Message::WritePath { tree: r.u16()?, leaf: r.u64()?, buckets: r.rest().to_vec() },
            MsgKind::Ack => Message::Ack,
            MsgKind::EnclaveRequest => Message::EnclaveRequest { ct: r.rest().to_vec() },
            MsgKind::EnclaveResponse => Message::EnclaveResponse { ct: r.rest().to_vec() },
            MsgKind::UploadTree => {
                let tree = r.u16()?;
                let header = TreeHeader::decode(r.take(TREE_HEADER_LEN)?)?;
                Message::UploadTree { tree, header, stream: r.rest().to_vec() }
            }
            MsgKind::Error => {
                let code = r.u16()?;
                let detail = String::from_utf8(r.rest().to_vec())
                    .map_err(|_| Error::Format("error detail is not UTF-8".into()))?;
                Message::Error { code, detail }
            }
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_frame().encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_frame(&Frame::decode(bytes)?)
    }
}
