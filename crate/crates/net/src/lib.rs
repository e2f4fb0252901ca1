//! Deployment around the scheme: binary wire protocol, the storage daemon
//! (which also hosts the controller in enhanced mode), client transports and
//! the `obge` command line.

pub mod bench;
pub mod cli;
pub mod client;
pub mod config;
pub mod deploy;
pub mod engine;
pub mod files;
pub mod frame;
pub mod message;
pub mod server;

pub use message::Message;
