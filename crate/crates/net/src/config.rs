//! `key=value` server configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use obge::protocol::Mode;
use obge::{Error, Result};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7400";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub mode: Mode,
    pub tree_path: PathBuf,
    pub listen_addr: String,
    /// Controller memory budget; enhanced mode refuses to start above it.
    pub budget_bytes: Option<usize>,
    pub z: u32,
    pub stash_max: usize,
    /// Enhanced mode: sealed controller state.
    pub controller_path: Option<PathBuf>,
    /// Enhanced mode: position-map trees, level 0 first.
    pub level_paths: Vec<PathBuf>,
    /// Where the access trace is written on shutdown.
    pub trace_path: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(mode: Mode, tree_path: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            tree_path: tree_path.into(),
            listen_addr: DEFAULT_LISTEN.into(),
            budget_bytes: None,
            z: obge::oram::DEFAULT_Z as u32,
            stash_max: obge::oram::DEFAULT_STASH_MAX,
            controller_path: None,
            level_paths: Vec::new(),
            trace_path: None,
        }
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut mode = None;
        let mut tree_path = None;
        let mut cfg = ServerConfig::new(Mode::Trivial, PathBuf::new());
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |detail: String| Error::Parse { line: i + 1, detail };
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{key} must be an integer")));
            match key {
                "mode" => mode = Some(value.parse::<Mode>().map_err(|e| bad(e.to_string()))?),
                "tree_path" => tree_path = Some(resolve(value)),
                "listen_addr" => cfg.listen_addr = value.to_string(),
                "budget_bytes" => cfg.budget_bytes = Some(num(value)?),
                "Z" | "z" => cfg.z = num(value)? as u32,
                "stash_max" => cfg.stash_max = num(value)?,
                "controller_path" => cfg.controller_path = Some(resolve(value)),
                "level_paths" => {
                    cfg.level_paths = value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(resolve).collect()
                }
                "trace_path" => cfg.trace_path = Some(resolve(value)),
                _ => return Err(bad(format!("unknown key {key:?}"))),
            }
        }
        cfg.mode = mode.ok_or_else(|| Error::Config("config is missing mode".into()))?;
        cfg.tree_path = tree_path.ok_or_else(|| Error::Config("config is missing tree_path".into()))?;
        if cfg.mode == Mode::Enhanced && cfg.controller_path.is_none() {
            return Err(Error::Config("enhanced mode needs controller_path".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

impl fmt::Display for ServerConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={}", self.mode)?;
        writeln!(f, "tree_path={}", self.tree_path.display())?;
        writeln!(f, "listen_addr={}", self.listen_addr)?;
        if let Some(b) = self.budget_bytes {
            writeln!(f, "budget_bytes={b}")?;
        }
        writeln!(f, "Z={}", self.z)?;
        writeln!(f, "stash_max={}", self.stash_max)?;
        if let Some(p) = &self.controller_path {
            writeln!(f, "controller_path={}", p.display())?;
        }
        if !self.level_paths.is_empty() {
            let list: Vec<String> = self.level_paths.iter().map(|p| p.display().to_string()).collect();
            writeln!(f, "level_paths={}", list.join(","))?;
        }
        if let Some(p) = &self.trace_path {
            writeln!(f, "trace_path={}", p.display())?;
        }
        Ok(())
    }
}
