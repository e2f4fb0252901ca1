//! Splits a setup result into its client and server halves.

use std::fs;
use std::path::{Path, PathBuf};

use obge::oram::PathStore;
use obge::protocol::{ClientKeys, Deployment, Mode, SetupOutput};
use obge::Result;

use crate::config::ServerConfig;
use crate::engine::EngineState;
use crate::files::{write_atomic, ClientFile};

pub const TREE_FILE: &str = "tree.bin";
pub const KEYS_FILE: &str = "keys.bin";
pub const CLIENT_STATE_FILE: &str = "client_state.bin";
pub const CONTROLLER_FILE: &str = "controller.bin";
pub const CONFIG_FILE: &str = "server.conf";
pub const TRACE_FILE: &str = "trace.csv";

pub struct Parts {
    pub keys: ClientKeys,
    /// Trivial mode only.
    pub client: Option<ClientFile>,
    pub server: EngineState,
}

pub fn split(out: SetupOutput) -> Parts {
    let header = out.tree.header();
    match out.deployment {
        Deployment::Trivial(state) => Parts {
            keys: out.keys,
            client: Some(ClientFile { header, state }),
            server: EngineState { mode: Mode::Trivial, trees: vec![out.tree], controller: None },
        },
        Deployment::Enhanced { controller, levels } => {
            let mut trees = vec![out.tree];
            trees.extend(levels);
            Parts {
                keys: out.keys,
                client: None,
                server: EngineState { mode: Mode::Enhanced, trees, controller: Some(controller) },
            }
        }
    }
}

pub fn level_file(i: usize) -> String {
    format!("level{i}.bin")
}

/// Writes every file of a deployment into `dir` and returns the server config.
/// Paths in `server.conf` are relative to `dir`.
pub fn write_deployment(dir: &Path, parts: &Parts, mut config: ServerConfig) -> Result<ServerConfig> {
    fs::create_dir_all(dir)?;
    let mut relative = config.clone();
    relative.mode = parts.server.mode;
    relative.tree_path = PathBuf::from(TREE_FILE);
    relative.trace_path = Some(PathBuf::from(TRACE_FILE));
    if parts.server.mode == Mode::Enhanced {
        relative.controller_path = Some(PathBuf::from(CONTROLLER_FILE));
        relative.level_paths = (0..parts.server.trees.len() - 1).map(|i| PathBuf::from(level_file(i))).collect();
    }
    write_atomic(&dir.join(KEYS_FILE), &parts.keys.to_bytes())?;
    if let Some(c) = &parts.client {
        c.save(&dir.join(CLIENT_STATE_FILE))?;
    }
    write_atomic(&dir.join(CONFIG_FILE), relative.to_string().as_bytes())?;

    config.mode = relative.mode;
    config.tree_path = dir.join(TREE_FILE);
    config.trace_path = Some(dir.join(TRACE_FILE));
    config.controller_path = relative.controller_path.map(|p| dir.join(p));
    config.level_paths = relative.level_paths.iter().map(|p| dir.join(p)).collect();
    parts.server.save(&config)?;
    Ok(config)
}
