//! Exposed buffer processing: leased buffer depots addressed by capabilities,
//! and a client-side control plane that aggregates them into files,
//! multi-hop transfers and datagrams.

pub mod capability;
pub mod client;
pub mod clock;
pub mod control;
pub mod depot;
pub mod error;
pub mod exnode;
pub mod harness;
pub mod topology;
pub mod transforms;
pub mod wire;

pub use capability::{CapKind, Capability, CapabilitySet, Key};
pub use client::{Client, Connection};
pub use clock::{Clock, SimClock, SystemClock};
pub use depot::{AllocState, AllocationStatus, Depot, DepotConfig, DepotServer};
pub use error::{EbpError, ErrorCode, Result};
pub use exnode::{ExNode, Mapping, ParityGroup};
pub use topology::{AdjacencyGraph, DepotDirectory};
pub use control::{ControlPlane, DepotSelection, Parity, UploadPolicy};
pub use harness::{FaultPlan, SimCluster, Topology};
