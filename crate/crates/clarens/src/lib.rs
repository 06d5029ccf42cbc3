//! Grid services framework: a single deployable server hosting pluggable
//! RPC services behind one URL that speaks both XML-RPC and JSON-RPC 2.0.
//!
//! The built-in services cover the framework's foundation set — per-method
//! access control with groups, a soft-state discovery registry with UDP
//! peer publication, a network-cost replica ranking service with its
//! metrics feed, dataset catalogs, and a sandboxed shell / jailed file
//! service pair — all bound to a server instance through one properties
//! file.

pub mod acl;
pub mod auth;
pub mod catalog;
pub mod client;
pub mod clock;
pub mod config;
pub mod dls;
pub mod fault;
pub mod files;
pub mod glob;
pub mod gridmap;
pub mod journal;
pub mod jsonrpc;
pub mod metrics;
pub mod plugin;
pub mod registry;
pub mod rpc;
pub mod server;
pub mod shell;
pub mod system;
pub mod value;
pub mod xmlrpc;

pub use auth::Principal;
pub use client::{ClientAuth, ClientError, RpcClient};
pub use config::{load_config, parse_config, ServerConfig};
pub use fault::Fault;
pub use rpc::{Encoding, RpcCall, RpcResponse};
pub use server::{start, ServerHandle};
pub use value::RpcValue;
