//! Store-and-forward delivery along depot paths.

use std::fmt;
use std::time::{Duration, Instant};

use log::{debug, info};
use serde_json::json;

use super::ControlPlane;
use crate::capability::{Capability, CapabilitySet};
use crate::error::{EbpError, ErrorCode, Result};
use crate::topology::{AdjacencyGraph, DepotDirectory};
use crate::transforms::{COPY_RANGE, DGRAM_FORWARD};
use crate::wire::Params;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HopReport {
    pub node: String,
    /// Bytes allocated on this hop by the transfer (0 for the source).
    pub allocated: u64,
    /// Bytes that moved into this hop (out of it, for the source).
    pub transferred: u64,
    pub released: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferReport {
    pub path: Vec<String>,
    pub per_hop: Vec<HopReport>,
    pub elapsed: Duration,
}

impl TransferReport {
    fn new(path: Vec<String>) -> Self {
        let per_hop = path.iter().map(|n| HopReport { node: n.clone(), ..Default::default() }).collect();
        TransferReport { path, per_hop, elapsed: Duration::ZERO }
    }
}

#[derive(Debug, Clone)]
pub struct MultiHopFailure {
    pub error: EbpError,
    pub report: TransferReport,
}

impl fmt::Display for MultiHopFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for MultiHopFailure {}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatagramReport {
    pub path: Vec<String>,
    /// TTL found in the frame on arrival at each hop reached.
    pub ttl_at_hop: Vec<u8>,
    /// Index into `path` of the hop whose forward step failed.
    pub dropped_at: Option<usize>,
    pub final_ttl: Option<u8>,
    pub payload: Option<Vec<u8>>,
    /// Capabilities of the frame at the last hop, when delivered.
    pub delivered: Option<CapabilitySet>,
}

#[derive(Debug, Clone)]
pub struct DatagramFailure {
    pub error: EbpError,
    pub report: Box<DatagramReport>,
}

impl fmt::Display for DatagramFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for DatagramFailure {}

fn params(v: serde_json::Value) -> Params {
    match v {
        serde_json::Value::Object(m) => m,
        _ => Params::new(),
    }
}

impl ControlPlane {
    /// Move `length` bytes from the allocation named by `src` (a read
    /// capability) to a new allocation on `dst_node`, hop by hop along the
    /// graph's route. Intermediate copies are released once the next hop
    /// holds the bytes.
    pub fn multi_hop_transfer(
        &self,
        src: &Capability,
        length: u64,
        dst_node: &str,
        graph: &AdjacencyGraph,
        dir: &DepotDirectory,
        lease: u64,
    ) -> std::result::Result<(CapabilitySet, TransferReport), MultiHopFailure> {
        let started = Instant::now();
        let fail = |error: EbpError, mut report: TransferReport| {
            report.elapsed = started.elapsed();
            MultiHopFailure { error, report }
        };
        let path = graph
            .route(&src.node_id, dst_node)
            .map_err(|e| fail(e, TransferReport::new(Vec::new())))?;
        for n in &path {
            dir.get(n).map_err(|e| fail(e, TransferReport::new(path.clone())))?;
        }
        let src = self.locate(src, dir);
        let mut report = TransferReport::new(path.clone());

        if path.len() == 1 {
            let result = self.client.allocate(dir.endpoint(&path[0]).expect("checked"), length, lease).and_then(|caps| {
                match self.client.transform(
                    COPY_RANGE,
                    std::slice::from_ref(&src),
                    std::slice::from_ref(&caps.write),
                    &params(json!({"length": length})),
                ) {
                    Ok(_) => Ok(caps),
                    Err(e) => {
                        self.release(&caps.manage, dir);
                        Err(e)
                    }
                }
            });
            return match result {
                Ok(caps) => {
                    report.per_hop[0].allocated = length;
                    report.per_hop[0].transferred = length;
                    report.elapsed = started.elapsed();
                    Ok((caps, report))
                }
                Err(e) => Err(fail(e, report)),
            };
        }

        let mut prev_read = src;
        let mut prev_manage: Option<Capability> = None;
        for i in 1..path.len() {
            let caps = match self.client.allocate(dir.endpoint(&path[i]).expect("checked"), length, lease) {
                Ok(c) => c,
                Err(e) => {
                    self.cleanup_hop(&mut report, i - 1, prev_manage.as_ref(), dir);
                    return Err(fail(e, report));
                }
            };
            report.per_hop[i].allocated = length;
            match self.client.transfer(&prev_read, &caps.write, 0, 0, length) {
                Ok(n) => {
                    report.per_hop[i].transferred = n;
                    if i == 1 {
                        report.per_hop[0].transferred = n;
                    }
                    debug!("hop {} -> {}: {n} bytes", path[i - 1], path[i]);
                }
                Err(e) => {
                    self.cleanup_hop(&mut report, i, Some(&caps.manage), dir);
                    self.cleanup_hop(&mut report, i - 1, prev_manage.as_ref(), dir);
                    return Err(fail(e, report));
                }
            }
            self.cleanup_hop(&mut report, i - 1, prev_manage.as_ref(), dir);
            prev_read = caps.read.clone();
            prev_manage = Some(caps.manage.clone());
            if i == path.len() - 1 {
                report.elapsed = started.elapsed();
                info!("delivered {length} bytes over {}", path.join(" "));
                return Ok((caps, report));
            }
        }
        unreachable!("path has at least two nodes")
    }

    fn cleanup_hop(&self, report: &mut TransferReport, hop: usize, manage: Option<&Capability>, dir: &DepotDirectory) {
        if let Some(m) = manage {
            report.per_hop[hop].released = self.release(m, dir);
        }
    }

    /// Send `payload` as a datagram along `path`. The frame is one TTL byte
    /// followed by the payload; each hop decrements the TTL before passing
    /// the frame on.
    pub fn datagram_send(
        &self,
        payload: &[u8],
        ttl: u8,
        path: &[String],
        dir: &DepotDirectory,
        lease: u64,
    ) -> std::result::Result<DatagramReport, DatagramFailure> {
        let mut report = DatagramReport { path: path.to_vec(), ..Default::default() };
        let mut held: Option<CapabilitySet> = None;
        match self.datagram_inner(payload, ttl, path, dir, lease, &mut report, &mut held) {
            Ok(()) => Ok(report),
            Err(error) => {
                if let Some(h) = held {
                    self.release(&h.manage, dir);
                }
                Err(DatagramFailure { error, report: Box::new(report) })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn datagram_inner(
        &self,
        payload: &[u8],
        ttl: u8,
        path: &[String],
        dir: &DepotDirectory,
        lease: u64,
        report: &mut DatagramReport,
        held: &mut Option<CapabilitySet>,
    ) -> Result<()> {
        if path.is_empty() {
            return Err(EbpError::proto("datagram path is empty"));
        }
        if let Some(w) = path.windows(2).find(|w| w[0] == w[1]) {
            return Err(EbpError::proto(format!("path repeats {} consecutively", w[0])));
        }
        for n in path {
            dir.get(n)?;
        }
        let size = payload.len() as u64 + 1;
        let mut frame = Vec::with_capacity(payload.len() + 1);
        frame.push(ttl);
        frame.extend_from_slice(payload);

        let first = self.client.allocate(dir.endpoint(&path[0])?, size, lease)?;
        *held = Some(first.clone());
        self.client.write(&first.write, 0, &frame)?;
        report.ttl_at_hop.push(ttl);

        let mut current = first;
        for i in 1..path.len() {
            let fwd = self.client.transform(
                DGRAM_FORWARD,
                &[current.read.clone()],
                &[current.write.clone()],
                &params(json!({"ttl_offset": 0})),
            );
            let current_ttl = match fwd {
                Ok(counts) => counts.first().copied().unwrap_or(0) as u8,
                Err(e) => {
                    if e.code == ErrorCode::Ttl {
                        report.dropped_at = Some(i - 1);
                        info!("datagram dropped at {} with ttl exhausted", path[i - 1]);
                    }
                    return Err(e);
                }
            };
            let next = self.client.allocate(dir.endpoint(&path[i])?, size, lease)?;
            if let Err(e) = self.client.transfer(&current.read, &next.write, 0, 0, size) {
                self.release(&next.manage, dir);
                return Err(e);
            }
            self.release(&current.manage, dir);
            *held = Some(next.clone());
            current = next;
            report.ttl_at_hop.push(current_ttl);
        }

        let delivered = self.client.read(&current.read, 0, size)?;
        report.final_ttl = Some(delivered[0]);
        report.payload = Some(delivered[1..].to_vec());
        report.delivered = Some(current);
        *held = None;
        Ok(())
    }
}
