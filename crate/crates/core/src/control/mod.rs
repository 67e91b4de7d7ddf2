//! Client-side control plane: aggregates primitive depot operations into
//! files, lease maintenance, repair, multi-hop delivery and datagrams.
//!
//! Nothing here runs inside a depot. Every service is a sequence of
//! ordinary requests issued by a [`ControlPlane`].

mod files;
mod transfer;

use std::collections::BTreeSet;
use std::sync::Arc;

use log::debug;

use crate::capability::Capability;
use crate::client::Client;
use crate::clock::Clock;
use crate::error::{EbpError, ErrorCode, Result};
use crate::topology::DepotDirectory;
use crate::wire::ManageAction;

pub use files::WarmReport;
pub use transfer::{DatagramFailure, DatagramReport, HopReport, MultiHopFailure, TransferReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    None,
    /// One XOR parity block per `k` consecutive data blocks.
    Xor { k: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepotSelection {
    /// Every directory entry, in node id order.
    RoundRobin,
    Ordered(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadPolicy {
    pub block_size: u64,
    pub replicas: usize,
    pub parity: Parity,
    pub depot_selection: DepotSelection,
    pub lease_seconds: u64,
}

impl UploadPolicy {
    pub fn new(block_size: u64, replicas: usize, lease_seconds: u64) -> Self {
        UploadPolicy {
            block_size,
            replicas,
            parity: Parity::None,
            depot_selection: DepotSelection::RoundRobin,
            lease_seconds,
        }
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    pub fn with_depots(mut self, depots: Vec<String>) -> Self {
        self.depot_selection = DepotSelection::Ordered(depots);
        self
    }

    /// Candidate depots in selection order.
    pub fn candidates(&self, dir: &DepotDirectory) -> Result<Vec<String>> {
        match &self.depot_selection {
            DepotSelection::RoundRobin => Ok(dir.nodes().map(str::to_owned).collect()),
            DepotSelection::Ordered(list) => {
                for n in list {
                    dir.get(n)?;
                }
                Ok(list.clone())
            }
        }
    }

    pub fn validate(&self, dir: &DepotDirectory) -> Result<()> {
        if self.block_size == 0 {
            return Err(EbpError::policy("block size must be positive"));
        }
        if self.replicas == 0 {
            return Err(EbpError::policy("at least one replica is required"));
        }
        if self.lease_seconds == 0 {
            return Err(EbpError::policy("lease must be positive"));
        }
        if let Parity::Xor { k } = self.parity {
            if k < 2 {
                return Err(EbpError::policy("xor parity needs k >= 2"));
            }
        }
        let candidates = self.candidates(dir)?;
        let distinct: BTreeSet<&String> = candidates.iter().collect();
        if distinct.len() < self.replicas {
            return Err(EbpError::policy(format!(
                "{} replicas requested but only {} depots selected",
                self.replicas,
                distinct.len()
            )));
        }
        for n in &candidates {
            if let Some(max) = dir.get(n)?.max_allocation_bytes {
                if self.block_size > max {
                    return Err(EbpError::policy(format!(
                        "block size {} exceeds {n}'s max allocation {max}",
                        self.block_size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Round-robin depot chooser that skips excluded and failed depots.
#[derive(Debug, Clone)]
struct Placer {
    candidates: Vec<String>,
    cursor: usize,
    dead: BTreeSet<String>,
}

impl Placer {
    fn new(candidates: Vec<String>) -> Self {
        Placer { candidates, cursor: 0, dead: BTreeSet::new() }
    }

    fn next(&mut self, exclude: &BTreeSet<String>) -> Option<String> {
        let n = self.candidates.len();
        for step in 0..n {
            let i = (self.cursor + step) % n;
            let c = &self.candidates[i];
            if !exclude.contains(c) && !self.dead.contains(c) {
                self.cursor = i + 1;
                return Some(c.clone());
            }
        }
        None
    }

    fn mark_dead(&mut self, node: &str) {
        self.dead.insert(node.to_owned());
    }
}

pub struct ControlPlane {
    client: Client,
    clock: Arc<dyn Clock>,
}

impl ControlPlane {
    pub fn new(client: Client, clock: Arc<dyn Clock>) -> Self {
        ControlPlane { client, clock }
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    /// Point `cap` at the directory's endpoint for its node, when listed.
    fn locate(&self, cap: &Capability, dir: &DepotDirectory) -> Capability {
        let mut c = cap.clone();
        if let Ok(ep) = dir.endpoint(&cap.node_id) {
            c.endpoint = ep.to_owned();
        }
        c
    }

    fn release(&self, manage: &Capability, dir: &DepotDirectory) -> bool {
        match self.client.manage(&self.locate(manage, dir), ManageAction::Release) {
            Ok(_) => true,
            Err(e) => {
                debug!("release of {} on {} failed: {e}", manage.alloc_id, manage.node_id);
                false
            }
        }
    }
}

fn is_node_failure(e: &EbpError) -> bool {
    e.code == ErrorCode::Net
}
