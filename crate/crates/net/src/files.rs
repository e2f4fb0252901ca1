//! Client-side files and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use obge::codec::{Reader, Writer};
use obge::oram::storage::{TreeHeader, TREE_HEADER_LEN};
use obge::protocol::TrivialState;
use obge::{Error, Result};

const CLIENT_FILE_MAGIC: &[u8; 4] = b"OBGS";
const CLIENT_FILE_VERSION: u8 = 1;

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Trivial-mode client file: the shape of the remote data tree plus the
/// client's position map and stash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientFile {
    pub header: TreeHeader,
    pub state: TrivialState,
}

impl ClientFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CLIENT_FILE_MAGIC).u8(CLIENT_FILE_VERSION).raw(&self.header.encode()).raw(&self.state.to_bytes());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != CLIENT_FILE_MAGIC {
            return Err(Error::Format("not a client state file".into()));
        }
        let version = r.u8()?;
        if version != CLIENT_FILE_VERSION {
            return Err(Error::Format(format!("unsupported client state version {version}")));
        }
        let header = TreeHeader::decode(r.take(TREE_HEADER_LEN)?)?;
        let state = TrivialState::from_bytes(r.rest())?;
        Ok(Self { header, state })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}
