//! Length-prefixed binary frames.
//!
//! `magic(2) | version(1) | msg_type(1) | payload_len(4, big-endian) | payload`

use std::io::{ErrorKind, Read, Write};

use obge::{Error, Result};

pub const MAGIC: [u8; 2] = *b"OG";
pub const VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 8;
/// Refuse payloads above 1 GiB before allocating.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(Error::Format("truncated frame header".into()));
        }
        let (msg_type, len) = parse_header(bytes[..FRAME_HEADER_LEN].try_into().unwrap())?;
        let payload = &bytes[FRAME_HEADER_LEN..];
        if payload.len() != len as usize {
            return Err(Error::Format(format!("frame declares {len} payload bytes, carries {}", payload.len())));
        }
        Ok(Self { msg_type, payload: payload.to_vec() })
    }
}

fn parse_header(h: [u8; FRAME_HEADER_LEN]) -> Result<(u8, u32)> {
    if h[..2] != MAGIC {
        return Err(Error::Format("bad frame magic".into()));
    }
    if h[2] != VERSION {
        return Err(Error::Format(format!("unsupported frame version {}", h[2])));
    }
    let len = u32::from_be_bytes(h[4..8].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(Error::Format(format!("frame payload of {len} bytes exceeds limit")));
    }
    Ok((h[3], len))
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut h = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < h.len() {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Transport("stream closed inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Transport(e.to_string())),
        }
    }
    let (msg_type, len) = parse_header(h)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| Error::Transport(e.to_string()))?;
    Ok(Some(Frame { msg_type, payload }))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode()).and_then(|_| w.flush()).map_err(|e| Error::Transport(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let f = Frame::new(3, vec![9; 5]);
        let b = f.encode();
        assert_eq!(&b[..8], &[b'O', b'G', 1, 3, 0, 0, 0, 5]);
        assert_eq!(Frame::decode(&b).unwrap(), f);
        assert_eq!(read_frame(&mut b.as_slice()).unwrap(), Some(f));
        assert_eq!(read_frame(&mut [].as_slice()).unwrap(), None);
    }

    #[test]
    fn rejects_bad_headers() {
        let mut b = Frame::new(1, vec![]).encode();
        b[0] = b'X';
        assert!(Frame::decode(&b).is_err());
        let mut b = Frame::new(1, vec![]).encode();
        b[2] = 9;
        assert!(read_frame(&mut b.as_slice()).is_err());
        let mut b = Frame::new(1, vec![1, 2]).encode();
        b.pop();
        assert!(Frame::decode(&b).is_err());
        assert!(read_frame(&mut b.as_slice()).is_err());
        assert!(read_frame(&mut [b'O', b'G', 1].as_slice()).is_err());
    }
}
