//! Annotation server: leases queried instances to annotators, takes their
//! corrections, retrains in the background and reports progress.
//!
//! [`Project`] is the synchronous state machine and owns the on-disk
//! [`store`]; [`server`] puts it behind HTTP. Endpoint payloads are in
//! [`api`].

pub mod api;
pub mod config;
pub mod project;
pub mod server;
pub mod store;

pub use config::{Identity, ServiceConfig};
pub use project::{Project, ProjectError, ProjectSettings};
pub use server::{router, serve, ServiceHandle};
