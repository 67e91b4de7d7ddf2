//! The data-plane node.

mod config;
mod server;
mod store;

pub use config::{DepotConfig, DEFAULT_REQUEST_TIMEOUT_SECONDS, DEFAULT_TOMBSTONE_RETENTION_SECONDS};
pub use server::{bind, DepotServer};
pub use store::{AllocState, AllocationStatus, Depot, TransferGate};
