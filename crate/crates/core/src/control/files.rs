//! Files over depots: upload, download, lease warming, repair and storing
//! exNodes inside the data plane.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, info};
use serde_json::json;

use super::{is_node_failure, ControlPlane, Parity, Placer, UploadPolicy};
use crate::capability::{Capability, CapabilitySet};
use crate::error::{EbpError, ErrorCode, Result};
use crate::exnode::{ExNode, Mapping, MappingCaps, ParityGroup, ParityScheme};
use crate::topology::DepotDirectory;
use crate::transforms::{sha256_hex, DIGEST_SHA256, PARITY_XOR};
use crate::wire::{ManageAction, Params};

/// Lease for temporary allocations used while rebuilding a block.
const SCRATCH_LEASE_SECONDS: u64 = 60;

pub const ATTR_SHA256: &str = "sha256";
pub const ATTR_CONTENT: &str = "content";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WarmReport {
    pub extended: usize,
    pub failed: usize,
}

fn params(v: serde_json::Value) -> Params {
    match v {
        serde_json::Value::Object(m) => m,
        _ => Params::new(),
    }
}

/// XOR of blocks, each zero padded to `len`.
fn xor_padded(blocks: &[&[u8]], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for b in blocks {
        for (o, x) in out.iter_mut().zip(b.iter()) {
            *o ^= x;
        }
    }
    out
}

fn check_digest(m: &Mapping, bytes: &[u8]) -> Result<()> {
    match &m.digest {
        Some(d) if *d != sha256_hex(bytes) => Err(EbpError::digest(format!(
            "block at {} on {} failed its checksum",
            m.logical_offset, m.caps.read.node_id
        ))),
        _ => Ok(()),
    }
}

fn full_caps(caps: &CapabilitySet) -> MappingCaps {
    MappingCaps { read: caps.read.clone(), write: Some(caps.write.clone()), manage: Some(caps.manage.clone()) }
}

fn require_valid(x: &ExNode) -> Result<()> {
    match x.validate().first() {
        Some(v) => Err(EbpError::proto(format!("invalid exNode: {v}"))),
        None => Ok(()),
    }
}

impl ControlPlane {
    /// Pick a depot from `placer` (skipping `exclude`), allocate there and
    /// fill the allocation with `fill`. Depots that fail are skipped.
    fn place(
        &self,
        placer: &mut Placer,
        exclude: &BTreeSet<String>,
        dir: &DepotDirectory,
        alloc_size: u64,
        lease: u64,
        fill: &dyn Fn(&CapabilitySet) -> Result<()>,
    ) -> Result<(String, CapabilitySet)> {
        let mut tried = exclude.clone();
        let mut last = None;
        while let Some(node) = placer.next(&tried) {
            let attempt = dir
                .endpoint(&node)
                .and_then(|ep| self.client.allocate(ep, alloc_size, lease))
                .and_then(|caps| match fill(&caps) {
                    Ok(()) => Ok(caps),
                    Err(e) => {
                        self.release(&caps.manage, dir);
                        Err(e)
                    }
                });
            match attempt {
                Ok(caps) => return Ok((node, caps)),
                Err(e) => {
                    debug!("placement on {node} failed: {e}");
                    if is_node_failure(&e) {
                        placer.mark_dead(&node);
                    }
                    tried.insert(node);
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| EbpError::nospace("no eligible depot left")))
    }

    fn place_bytes(
        &self,
        placer: &mut Placer,
        exclude: &BTreeSet<String>,
        dir: &DepotDirectory,
        alloc_size: u64,
        lease: u64,
        bytes: &[u8],
    ) -> Result<(String, CapabilitySet)> {
        self.place(placer, exclude, dir, alloc_size, lease, &|caps| {
            self.client.write(&caps.write, 0, bytes).map(drop)
        })
    }

    /// Store `data` as blocks spread over depots.
    pub fn upload(&self, data: &[u8], policy: &UploadPolicy, dir: &DepotDirectory) -> Result<ExNode> {
        policy.validate(dir)?;
        let mut placer = Placer::new(policy.candidates(dir)?);
        let mut x = ExNode::new(data.len() as u64);
        let mut owned = Vec::new();
        if let Err(e) = self.upload_into(&mut x, &mut owned, &mut placer, data, policy, dir) {
            for m in &owned {
                self.release(m, dir);
            }
            return Err(e);
        }
        x.attributes.insert(ATTR_SHA256.into(), sha256_hex(data));
        info!(
            "uploaded {} bytes as {} mappings and {} parity groups",
            data.len(),
            x.mappings.len(),
            x.parity_groups.len()
        );
        Ok(x)
    }

    fn upload_into(
        &self,
        x: &mut ExNode,
        owned: &mut Vec<Capability>,
        placer: &mut Placer,
        data: &[u8],
        policy: &UploadPolicy,
        dir: &DepotDirectory,
    ) -> Result<()> {
        let bs = policy.block_size as usize;
        let blocks: Vec<&[u8]> = data.chunks(bs).collect();
        let mut hosts_of_block = Vec::with_capacity(blocks.len());
        let mut first_replica = Vec::with_capacity(blocks.len());

        for (b, block) in blocks.iter().enumerate() {
            let digest = sha256_hex(block);
            let mut hosts = BTreeSet::new();
            for r in 0..policy.replicas {
                let (node, caps) =
                    self.place_bytes(placer, &hosts, dir, policy.block_size, policy.lease_seconds, block)?;
                owned.push(caps.manage.clone());
                hosts.insert(node);
                if r == 0 {
                    first_replica.push(x.mappings.len());
                }
                x.mappings.push(Mapping {
                    logical_offset: (b * bs) as u64,
                    length: block.len() as u64,
                    alloc_offset: 0,
                    caps: full_caps(&caps),
                    replica_index: r as u32,
                    digest: Some(digest.clone()),
                });
            }
            hosts_of_block.push(hosts);
        }

        if let Parity::Xor { k } = policy.parity {
            let ids: Vec<usize> = (0..blocks.len()).collect();
            for chunk in ids.chunks(k) {
                let members: Vec<usize> = chunk.iter().map(|&b| first_replica[b]).collect();
                let block_length = chunk.iter().map(|&b| blocks[b].len()).max().unwrap_or(0);
                let parity = xor_padded(&chunk.iter().map(|&b| blocks[b]).collect::<Vec<_>>(), block_length);
                let busy: BTreeSet<String> = chunk.iter().flat_map(|&b| hosts_of_block[b].iter().cloned()).collect();
                let placed = self
                    .place_bytes(placer, &busy, dir, policy.block_size, policy.lease_seconds, &parity)
                    .or_else(|_| {
                        self.place_bytes(placer, &BTreeSet::new(), dir, policy.block_size, policy.lease_seconds, &parity)
                    });
                let (_, caps) = placed?;
                owned.push(caps.manage.clone());
                x.parity_groups.push(ParityGroup {
                    scheme: ParityScheme::Xor,
                    data_members: members.clone(),
                    parity_member: Mapping {
                        logical_offset: x.mappings[members[0]].logical_offset,
                        length: block_length as u64,
                        alloc_offset: 0,
                        caps: full_caps(&caps),
                        replica_index: 0,
                        digest: Some(sha256_hex(&parity)),
                    },
                    block_length: block_length as u64,
                });
            }
        }
        Ok(())
    }

    /// Read a mapping's bytes and check its digest.
    fn fetch_mapping(&self, m: &Mapping, dir: &DepotDirectory) -> Result<Vec<u8>> {
        let bytes = self.client.read(&self.locate(&m.caps.read, dir), m.alloc_offset, m.length)?;
        check_digest(m, &bytes)?;
        Ok(bytes)
    }

    /// Read the block held by `member` (from any healthy replica) as a
    /// `block_length` buffer, zero padded past the mapping's length.
    fn fetch_padded(&self, x: &ExNode, member: usize, block_length: u64, dir: &DepotDirectory) -> Result<Vec<u8>> {
        let mut last = None;
        for r in x.replicas_of(member) {
            let m = &x.mappings[r];
            match self.fetch_mapping(m, dir) {
                Ok(mut bytes) => {
                    bytes.resize(block_length as usize, 0);
                    return Ok(bytes);
                }
                Err(e) => last = Some(e),
            }
        }
        Err(EbpError::unrecoverable(format!(
            "parity member at {} unreadable: {}",
            x.mappings[member].logical_offset,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    /// Rebuild the block held by `missing` on the depot holding its group's
    /// parity. Returns the output allocation and every scratch allocation
    /// (output included) to release afterwards.
    fn reconstruct_on_host(
        &self,
        x: &ExNode,
        group: usize,
        missing: usize,
        dir: &DepotDirectory,
    ) -> Result<(CapabilitySet, Vec<Capability>)> {
        let mut scratch = Vec::new();
        match self.reconstruct_inner(x, group, missing, dir, &mut scratch) {
            Ok(out) => Ok((out, scratch)),
            Err(e) => {
                for s in &scratch {
                    self.release(s, dir);
                }
                Err(if e.code == ErrorCode::Unrecoverable {
                    e
                } else {
                    EbpError::unrecoverable(format!("reconstruction failed: {e}"))
                })
            }
        }
    }

    fn reconstruct_inner(
        &self,
        x: &ExNode,
        group: usize,
        missing: usize,
        dir: &DepotDirectory,
        scratch: &mut Vec<Capability>,
    ) -> Result<CapabilitySet> {
        let g = &x.parity_groups[group];
        let bl = g.block_length;
        let target = &x.mappings[missing];
        let parity = &g.parity_member;
        let parity_read = self.locate(&parity.caps.read, dir);
        let mut conn = self.client.connect(&parity_read.endpoint)?;
        let mut alloc = |conn: &mut crate::client::Connection, size: u64| -> Result<CapabilitySet> {
            let caps = conn.allocate(size, SCRATCH_LEASE_SECONDS)?;
            scratch.push(caps.manage.clone());
            Ok(caps)
        };

        let survivors: Vec<Vec<u8>> = g
            .data_members
            .iter()
            .filter(|&&i| !x.mappings[i].same_extent(target))
            .map(|&i| self.fetch_padded(x, i, bl, dir))
            .collect::<Result<_>>()?;

        if let Some(expected) = &parity.digest {
            let d = alloc(&mut conn, 32)?;
            conn.transform(
                DIGEST_SHA256,
                std::slice::from_ref(&parity_read),
                std::slice::from_ref(&d.write),
                &params(json!({"offset": parity.alloc_offset, "length": bl})),
            )?;
            if hex::encode(conn.read(&d.read, 0, 32)?) != *expected {
                return Err(EbpError::unrecoverable("parity block failed its checksum"));
            }
        }

        let mut inputs = Vec::with_capacity(survivors.len() + 1);
        if parity.alloc_offset == 0 {
            inputs.push(parity_read.clone());
        } else {
            let p = alloc(&mut conn, bl)?;
            conn.transform(
                crate::transforms::COPY_RANGE,
                std::slice::from_ref(&parity_read),
                std::slice::from_ref(&p.write),
                &params(json!({"src_off": parity.alloc_offset, "length": bl})),
            )?;
            inputs.push(p.read);
        }
        for bytes in &survivors {
            let s = alloc(&mut conn, bl)?;
            conn.write(&s.write, 0, bytes)?;
            inputs.push(s.read);
        }
        let out = alloc(&mut conn, bl)?;
        conn.transform(PARITY_XOR, &inputs, std::slice::from_ref(&out.write), &params(json!({"length": bl})))?;
        Ok(out)
    }

    /// Recover the bytes of `missing` through its parity group.
    fn rebuild_bytes(&self, x: &ExNode, missing: usize, dir: &DepotDirectory) -> Result<(Vec<u8>, CapabilitySet, Vec<Capability>)> {
        let group = x
            .group_of(missing)
            .ok_or_else(|| EbpError::unrecoverable(format!(
                "no readable replica and no parity for block at {}",
                x.mappings[missing].logical_offset
            )))?;
        let (out, scratch) = self.reconstruct_on_host(x, group, missing, dir)?;
        let m = &x.mappings[missing];
        let bytes = match self.client.read(&out.read, 0, m.length) {
            Ok(b) => b,
            Err(e) => {
                for s in &scratch {
                    self.release(s, dir);
                }
                return Err(EbpError::unrecoverable(format!("reading rebuilt block: {e}")));
            }
        };
        if check_digest(m, &bytes).is_err() {
            for s in &scratch {
                self.release(s, dir);
            }
            return Err(EbpError::unrecoverable("rebuilt block failed its checksum"));
        }
        Ok((bytes, out, scratch))
    }

    /// Fetch the whole extent, failing over between replicas and falling
    /// back to parity reconstruction.
    pub fn download(&self, x: &ExNode, dir: &DepotDirectory) -> Result<Vec<u8>> {
        require_valid(x)?;
        let plan = x.resolve(0, x.logical_length)?;
        let mut fetched: HashMap<usize, Result<Vec<u8>>> = HashMap::new();
        let mut rebuilt: HashMap<usize, Vec<u8>> = HashMap::new();
        let mut out = Vec::with_capacity(x.logical_length as usize);

        for seg in &plan {
            let mut served = None;
            let mut last = None;
            for alt in &seg.alternatives {
                let m = &x.mappings[alt.mapping];
                let got = fetched.entry(alt.mapping).or_insert_with(|| self.fetch_mapping(m, dir));
                match got {
                    Ok(bytes) => {
                        served = Some((alt.mapping, bytes.clone()));
                        break;
                    }
                    Err(e) => last = Some(e.clone()),
                }
            }
            let (idx, bytes) = match served {
                Some(s) => s,
                None => {
                    let mut recovered = None;
                    for alt in &seg.alternatives {
                        if let Some(b) = rebuilt.get(&alt.mapping) {
                            recovered = Some((alt.mapping, b.clone()));
                            break;
                        }
                        if x.group_of(alt.mapping).is_none() {
                            continue;
                        }
                        let (bytes, _, scratch) = self.rebuild_bytes(x, alt.mapping, dir)?;
                        for s in &scratch {
                            self.release(s, dir);
                        }
                        for r in x.replicas_of(alt.mapping) {
                            rebuilt.insert(r, bytes.clone());
                        }
                        info!("rebuilt block at {} from parity", x.mappings[alt.mapping].logical_offset);
                        recovered = Some((alt.mapping, bytes));
                        break;
                    }
                    recovered.ok_or_else(|| {
                        EbpError::unrecoverable(format!(
                            "segment at {} unreadable and not protected by parity: {}",
                            seg.start,
                            last.map(|e| e.to_string()).unwrap_or_default()
                        ))
                    })?
                }
            };
            let start = (seg.start - x.mappings[idx].logical_offset) as usize;
            out.extend_from_slice(&bytes[start..start + seg.length as usize]);
        }

        if let Some(expected) = x.attributes.get(ATTR_SHA256) {
            if sha256_hex(&out) != *expected {
                return Err(EbpError::digest("downloaded data does not match its sha256 attribute"));
            }
        }
        Ok(out)
    }

    /// Extend every lease with less than `min_remaining` seconds left to
    /// `extend_to` seconds from now. Never shortens a lease.
    pub fn warm(&self, x: &ExNode, dir: &DepotDirectory, min_remaining: u64, extend_to: u64) -> WarmReport {
        let mut report = WarmReport::default();
        let all = x.mappings.iter().chain(x.parity_groups.iter().map(|g| &g.parity_member));
        for m in all {
            let Some(manage) = &m.caps.manage else {
                report.failed += 1;
                continue;
            };
            let manage = self.locate(manage, dir);
            let now = self.clock.now();
            let status = match self.client.manage(&manage, ManageAction::Probe) {
                Ok(s) => s,
                Err(e) => {
                    debug!("probe of {} failed: {e}", manage.alloc_id);
                    report.failed += 1;
                    continue;
                }
            };
            if status.expires_at.saturating_sub(now) >= min_remaining {
                continue;
            }
            if now + extend_to < status.expires_at {
                report.failed += 1;
                continue;
            }
            match self.client.manage(&manage, ManageAction::Extend(extend_to)) {
                Ok(s) if s.expires_at >= status.expires_at => report.extended += 1,
                Ok(_) => report.failed += 1,
                Err(e) => {
                    debug!("extend of {} failed: {e}", manage.alloc_id);
                    report.failed += 1;
                }
            }
        }
        report
    }

    /// Replace unreadable, corrupted or expired mappings with fresh copies
    /// and top replicas up to the policy level. Healthy mappings are kept.
    pub fn repair(&self, x: &ExNode, dir: &DepotDirectory, policy: &UploadPolicy) -> Result<ExNode> {
        require_valid(x)?;
        if !x.coverage_holes().is_empty() {
            return Err(EbpError::hole("exNode does not cover its extent"));
        }
        let mut out = x.clone();
        let mut placer = Placer::new(policy.candidates(dir)?);
        let lease = policy.lease_seconds;
        let health: Vec<Result<Vec<u8>>> = x.mappings.iter().map(|m| self.fetch_mapping(m, dir)).collect();

        let mut extents: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
        for (i, m) in x.mappings.iter().enumerate() {
            extents.entry((m.logical_offset, m.length)).or_default().push(i);
        }

        for ((offset, length), idxs) in extents {
            let healthy: Vec<usize> = idxs.iter().copied().filter(|&i| health[i].is_ok()).collect();
            let broken: Vec<usize> = idxs.iter().copied().filter(|&i| health[i].is_err()).collect();
            let deficit = policy.replicas.saturating_sub(idxs.len());
            if broken.is_empty() && deficit == 0 {
                continue;
            }
            let group_bl = x.group_of(idxs[0]).map(|g| x.parity_groups[g].block_length).unwrap_or(0);
            let alloc_size = policy.block_size.max(length).max(group_bl);

            let (bytes, rebuilt) = match healthy.first() {
                Some(&h) => (health[h].as_ref().expect("healthy").clone(), None),
                None => {
                    let (bytes, out_caps, scratch) = self.rebuild_bytes(x, idxs[0], dir)?;
                    (bytes, Some((out_caps, scratch)))
                }
            };

            let mut hosts: BTreeSet<String> = healthy.iter().map(|&i| x.mappings[i].caps.read.node_id.clone()).collect();
            let failed_hosts: BTreeSet<String> = broken.iter().map(|&i| x.mappings[i].caps.read.node_id.clone()).collect();
            let mut next_replica = idxs.iter().map(|&i| x.mappings[i].replica_index).max().unwrap_or(0) + 1;
            let targets: Vec<Option<usize>> = broken.iter().copied().map(Some).chain((0..deficit).map(|_| None)).collect();

            let fill = |caps: &CapabilitySet| -> Result<()> {
                if let Some((out_caps, _)) = &rebuilt {
                    // Push straight from the rebuild site when adjacency allows.
                    match self.client.transfer(&out_caps.read, &caps.write, 0, 0, length) {
                        Ok(_) => return Ok(()),
                        Err(e) => debug!("direct transfer of rebuilt block failed ({e}); relaying"),
                    }
                }
                self.client.write(&caps.write, 0, &bytes).map(drop)
            };

            let mut result = Ok(());
            for target in targets {
                let exclude: BTreeSet<String> = hosts.union(&failed_hosts).cloned().collect();
                let placed = self
                    .place(&mut placer, &exclude, dir, alloc_size, lease, &fill)
                    .or_else(|_| self.place(&mut placer, &hosts, dir, alloc_size, lease, &fill));
                let (node, caps) = match placed {
                    Ok(p) => p,
                    Err(e) => {
                        result = Err(EbpError::unrecoverable(format!("cannot re-place block at {offset}: {e}")));
                        break;
                    }
                };
                hosts.insert(node.clone());
                let replica_index = match target {
                    Some(i) => x.mappings[i].replica_index,
                    None => {
                        next_replica += 1;
                        next_replica - 1
                    }
                };
                let m = Mapping {
                    logical_offset: offset,
                    length,
                    alloc_offset: 0,
                    caps: full_caps(&caps),
                    replica_index,
                    digest: x.mappings[idxs[0]].digest.clone().or_else(|| Some(sha256_hex(&bytes))),
                };
                match target {
                    Some(i) => {
                        if let Some(old) = &x.mappings[i].caps.manage {
                            self.release(old, dir);
                        }
                        info!("replaced block at {offset} on {} with a copy on {node}", x.mappings[i].caps.read.node_id);
                        out.mappings[i] = m;
                    }
                    None => {
                        info!("added replica {replica_index} of block at {offset} on {node}");
                        out.mappings.push(m);
                    }
                }
            }
            if let Some((_, scratch)) = &rebuilt {
                for s in scratch {
                    self.release(s, dir);
                }
            }
            result?;
        }

        for g in 0..out.parity_groups.len() {
            let group = &out.parity_groups[g];
            let p = &group.parity_member;
            let readable = self
                .client
                .read(&self.locate(&p.caps.read, dir), p.alloc_offset, p.length)
                .and_then(|b| check_digest(p, &b).map(|_| b));
            let members: Vec<Vec<u8>> = group
                .data_members
                .iter()
                .map(|&i| self.fetch_padded(&out, i, group.block_length, dir))
                .collect::<Result<_>>()?;
            let refs: Vec<&[u8]> = members.iter().map(Vec::as_slice).collect();
            let parity = xor_padded(&refs, group.block_length as usize);
            if readable.as_ref().is_ok_and(|b| *b == parity) {
                continue;
            }
            let busy: BTreeSet<String> = group
                .data_members
                .iter()
                .flat_map(|&i| out.replicas_of(i))
                .map(|i| out.mappings[i].caps.read.node_id.clone())
                .collect();
            let alloc_size = policy.block_size.max(group.block_length);
            let (node, caps) = self
                .place_bytes(&mut placer, &busy, dir, alloc_size, lease, &parity)
                .or_else(|_| self.place_bytes(&mut placer, &BTreeSet::new(), dir, alloc_size, lease, &parity))
                .map_err(|e| EbpError::unrecoverable(format!("cannot re-place parity of group {g}: {e}")))?;
            if let Some(old) = &p.caps.manage {
                self.release(old, dir);
            }
            info!("rewrote parity of group {g} on {node}");
            let logical_offset = p.logical_offset;
            out.parity_groups[g].parity_member = Mapping {
                logical_offset,
                length: group.block_length,
                alloc_offset: 0,
                caps: full_caps(&caps),
                replica_index: 0,
                digest: Some(sha256_hex(&parity)),
            };
        }

        if !out.is_complete() {
            return Err(EbpError::internal("repair produced an incomplete exNode"));
        }
        Ok(out)
    }

    /// Write the serialized exNode into one allocation on `node` and return
    /// an exNode describing that allocation.
    pub fn store_exnode(&self, x: &ExNode, node: &str, dir: &DepotDirectory, lease: u64) -> Result<ExNode> {
        let bytes = x.serialize();
        let entry = dir.get(node)?;
        if let Some(max) = entry.max_allocation_bytes {
            if bytes.len() as u64 > max {
                return Err(EbpError::nospace(format!(
                    "serialized exNode is {} bytes, {node} allows {max}",
                    bytes.len()
                )));
            }
        }
        let caps = self
            .client
            .allocate(&entry.endpoint, bytes.len() as u64, lease)
            .map_err(|e| match e.code {
                ErrorCode::Policy => EbpError::nospace(e.message),
                _ => e,
            })?;
        if let Err(e) = self.client.write(&caps.write, 0, &bytes) {
            self.release(&caps.manage, dir);
            return Err(e);
        }
        let digest = sha256_hex(&bytes);
        let mut wrapper = ExNode::new(bytes.len() as u64);
        wrapper.mappings.push(Mapping {
            logical_offset: 0,
            length: bytes.len() as u64,
            alloc_offset: 0,
            caps: full_caps(&caps),
            replica_index: 0,
            digest: Some(digest.clone()),
        });
        wrapper.attributes.insert(ATTR_CONTENT.into(), "exnode".into());
        wrapper.attributes.insert(ATTR_SHA256.into(), digest);
        Ok(wrapper)
    }

    /// Inverse of [`ControlPlane::store_exnode`].
    pub fn fetch_exnode(&self, wrapper: &ExNode, dir: &DepotDirectory) -> Result<ExNode> {
        if wrapper.attributes.get(ATTR_CONTENT).map(String::as_str) != Some("exnode") {
            return Err(EbpError::proto("wrapper does not describe a stored exNode"));
        }
        ExNode::deserialize(&self.download(wrapper, dir)?)
    }

    /// Release every allocation the exNode names. Returns how many were
    /// released.
    pub fn release_all(&self, x: &ExNode, dir: &DepotDirectory) -> usize {
        x.mappings
            .iter()
            .chain(x.parity_groups.iter().map(|g| &g.parity_member))
            .filter_map(|m| m.caps.manage.as_ref())
            .filter(|c| self.release(c, dir))
            .count()
    }
}
