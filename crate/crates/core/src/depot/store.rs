use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockWriteGuard};
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::capability::{verify, CapKind, Capability, CapabilitySet, Key};
use crate::client::Client;
use crate::clock::Clock;
use crate::error::{EbpError, Result};
use crate::transforms::{check_arity, Buffers, Registry, ResolvedParams};
use crate::wire::{ManageAction, Params, Request, Response};

use super::config::DepotConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocState {
    Active,
    Expired,
    Released,
}

impl AllocState {
    pub fn as_str(self) -> &'static str {
        match self {
            AllocState::Active => "ACTIVE",
            AllocState::Expired => "EXPIRED",
            AllocState::Released => "RELEASED",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ACTIVE" => Ok(AllocState::Active),
            "EXPIRED" => Ok(AllocState::Expired),
            "RELEASED" => Ok(AllocState::Released),
            other => Err(EbpError::proto(format!("unknown allocation state {other:?}"))),
        }
    }
}

impl fmt::Display for AllocState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationStatus {
    pub size_limit: u64,
    pub expires_at: u64,
    pub state: AllocState,
}

impl AllocationStatus {
    pub fn to_tokens(self) -> Vec<String> {
        vec![self.size_limit.to_string(), self.expires_at.to_string(), self.state.to_string()]
    }

    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        let [size, expires, state] = tokens else {
            return Err(EbpError::proto("status needs size, expiry and state"));
        };
        let int = |t: &str| t.parse::<u64>().map_err(|_| EbpError::proto(format!("bad integer {t:?}")));
        Ok(AllocationStatus {
            size_limit: int(size)?,
            expires_at: int(expires)?,
            state: AllocState::parse(state)?,
        })
    }
}

#[derive(Debug)]
struct Record {
    size_limit: u64,
    data: Vec<u8>,
    #[allow(dead_code)]
    created_at: u64,
    expires_at: u64,
    read_key: Key,
    write_key: Key,
    manage_key: Key,
    state: AllocState,
}

impl Record {
    fn key(&self, kind: CapKind) -> &Key {
        match kind {
            CapKind::Read => &self.read_key,
            CapKind::Write => &self.write_key,
            CapKind::Manage => &self.manage_key,
        }
    }

    fn authorize(&self, key: &Key, kind: CapKind, now: u64) -> Result<()> {
        if !verify(key, self.key(kind)) || self.state == AllocState::Released {
            return Err(EbpError::cap(format!("key does not grant {kind} access")));
        }
        if self.state == AllocState::Expired || self.expires_at <= now {
            return Err(EbpError::expired(format!("allocation expired at {}", self.expires_at)));
        }
        Ok(())
    }

    fn status(&self) -> AllocationStatus {
        AllocationStatus { size_limit: self.size_limit, expires_at: self.expires_at, state: self.state }
    }

    fn range(&self, offset: u64, length: u64) -> Result<std::ops::Range<usize>> {
        match offset.checked_add(length) {
            Some(end) if end <= self.size_limit => Ok(offset as usize..end as usize),
            _ => Err(EbpError::range("offset+length exceeds size_limit")),
        }
    }
}

type Slot = Arc<RwLock<Record>>;

#[derive(Default)]
struct Table {
    slots: HashMap<String, Slot>,
    live_bytes: u64,
}

/// Consulted before each outbound transfer; returning false fails it with
/// E_NET. Used to inject transfer faults.
pub trait TransferGate: Send + Sync {
    fn admit(&self, src_node: &str, dst_node: &str) -> bool;
}

/// A data-plane node: leased, size-bounded buffers behind capability keys.
pub struct Depot {
    config: DepotConfig,
    clock: Arc<dyn Clock>,
    table: Mutex<Table>,
    registry: Registry,
    rng: Mutex<ChaCha20Rng>,
    gate: Option<Arc<dyn TransferGate>>,
}

impl fmt::Debug for Depot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Depot").field("node_id", &self.config.node_id).finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn write_lock(slot: &Slot) -> RwLockWriteGuard<'_, Record> {
    slot.write().unwrap_or_else(|p| p.into_inner())
}

impl Depot {
    /// A depot advertising `config.listen_endpoint` in its capabilities.
    pub fn new(config: DepotConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        Ok(Depot {
            config,
            clock,
            table: Mutex::new(Table::default()),
            registry: Registry::with_builtins(),
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
            gate: None,
        })
    }

    /// Draw ids and keys from a seeded generator instead of the OS.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = Mutex::new(ChaCha20Rng::seed_from_u64(seed));
        self
    }

    pub fn with_registry(mut self, registry: Registry) -> Self {
        self.registry = registry;
        self
    }

    pub fn with_transfer_gate(mut self, gate: Arc<dyn TransferGate>) -> Self {
        self.gate = Some(gate);
        self
    }

    pub fn config(&self) -> &DepotConfig {
        &self.config
    }

    pub fn node_id(&self) -> &str {
        &self.config.node_id
    }

    pub fn endpoint(&self) -> &str {
        &self.config.listen_endpoint
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    /// Bytes held by allocations that have not been reclaimed.
    pub fn live_bytes(&self) -> u64 {
        lock(&self.table).live_bytes
    }

    /// Active allocations, by a fresh scan.
    pub fn active_allocations(&self) -> usize {
        self.slots().iter().filter(|(_, s)| s.read().map(|r| r.state == AllocState::Active).unwrap_or(false)).count()
    }

    fn slots(&self) -> Vec<(String, Slot)> {
        lock(&self.table).slots.iter().map(|(k, v)| (k.clone(), Arc::clone(v))).collect()
    }

    fn slot(&self, alloc_id: &str) -> Result<Slot> {
        lock(&self.table)
            .slots
            .get(alloc_id)
            .cloned()
            .ok_or_else(|| EbpError::cap("no such allocation"))
    }

    fn cap(&self, alloc_id: &str, key: Key, kind: CapKind) -> Capability {
        Capability {
            node_id: self.config.node_id.clone(),
            endpoint: self.config.listen_endpoint.clone(),
            alloc_id: alloc_id.to_owned(),
            key,
            kind,
        }
    }

    pub fn allocate(&self, size: u64, duration: u64) -> Result<CapabilitySet> {
        if size == 0 || duration == 0 {
            return Err(EbpError::proto("size and duration must be positive"));
        }
        if size > self.config.max_allocation_bytes {
            return Err(EbpError::policy(format!(
                "size {size} exceeds max_allocation_bytes {}",
                self.config.max_allocation_bytes
            )));
        }
        if duration > self.config.max_duration_seconds {
            return Err(EbpError::policy(format!(
                "duration {duration} exceeds max_duration_seconds {}",
                self.config.max_duration_seconds
            )));
        }
        let now = self.clock.now();
        self.expire_sweep(now);

        let (read_key, write_key, manage_key) = {
            let mut rng = lock(&self.rng);
            loop {
                let k = (Key::random(&mut *rng), Key::random(&mut *rng), Key::random(&mut *rng));
                if k.0 != k.1 && k.1 != k.2 && k.0 != k.2 {
                    break k;
                }
            }
        };
        let record = Record {
            size_limit: size,
            data: vec![0; size as usize],
            created_at: now,
            expires_at: now + duration,
            read_key,
            write_key,
            manage_key,
            state: AllocState::Active,
        };

        let mut table = lock(&self.table);
        if table.live_bytes + size > self.config.max_total_bytes {
            return Err(EbpError::nospace(format!(
                "{} of {} bytes in use, cannot add {size}",
                table.live_bytes, self.config.max_total_bytes
            )));
        }
        let alloc_id = loop {
            let mut raw = [0u8; 8];
            lock(&self.rng).fill_bytes(&mut raw);
            let id = URL_SAFE_NO_PAD.encode(raw);
            if !table.slots.contains_key(&id) {
                break id;
            }
        };
        table.slots.insert(alloc_id.clone(), Arc::new(RwLock::new(record)));
        table.live_bytes += size;
        drop(table);

        Ok(CapabilitySet {
            read: self.cap(&alloc_id, read_key, CapKind::Read),
            write: self.cap(&alloc_id, write_key, CapKind::Write),
            manage: self.cap(&alloc_id, manage_key, CapKind::Manage),
        })
    }

    pub fn write(&self, alloc_id: &str, key: &Key, offset: u64, payload: &[u8]) -> Result<u64> {
        let slot = self.slot(alloc_id)?;
        let mut rec = write_lock(&slot);
        rec.authorize(key, CapKind::Write, self.clock.now())?;
        let r = rec.range(offset, payload.len() as u64)?;
        rec.data[r].copy_from_slice(payload);
        Ok(payload.len() as u64)
    }

    pub fn read(&self, alloc_id: &str, key: &Key, offset: u64, length: u64) -> Result<Vec<u8>> {
        let slot = self.slot(alloc_id)?;
        let rec = slot.read().unwrap_or_else(|p| p.into_inner());
        rec.authorize(key, CapKind::Read, self.clock.now())?;
        let r = rec.range(offset, length)?;
        Ok(rec.data[r].to_vec())
    }

    pub fn manage(&self, alloc_id: &str, key: &Key, action: ManageAction) -> Result<AllocationStatus> {
        let slot = self.slot(alloc_id)?;
        let now = self.clock.now();
        let mut rec = write_lock(&slot);
        match action {
            ManageAction::Probe => {
                rec.authorize(key, CapKind::Manage, now)?;
                Ok(rec.status())
            }
            ManageAction::Extend(duration) => {
                rec.authorize(key, CapKind::Manage, now)?;
                if duration == 0 {
                    return Err(EbpError::proto("lease duration must be positive"));
                }
                if duration > self.config.max_duration_seconds {
                    return Err(EbpError::policy(format!(
                        "duration {duration} exceeds max_duration_seconds {}",
                        self.config.max_duration_seconds
                    )));
                }
                rec.expires_at = now + duration;
                Ok(rec.status())
            }
            ManageAction::Release => {
                if !verify(key, &rec.manage_key) || rec.state == AllocState::Released {
                    return Err(EbpError::cap("key does not grant manage access"));
                }
                let freed = if rec.state == AllocState::Active { rec.size_limit } else { 0 };
                rec.state = AllocState::Released;
                rec.data = Vec::new();
                let status = rec.status();
                drop(rec);
                let mut table = lock(&self.table);
                table.slots.remove(alloc_id);
                table.live_bytes -= freed;
                Ok(status)
            }
        }
    }

    /// Reclaim every allocation whose lease ended at or before `now`.
    pub fn expire_sweep(&self, now: u64) -> usize {
        let mut reclaimed = 0;
        let mut freed = 0;
        let mut forget = Vec::new();
        for (id, slot) in self.slots() {
            let mut rec = write_lock(&slot);
            if rec.state == AllocState::Active && rec.expires_at <= now {
                rec.state = AllocState::Expired;
                rec.data = Vec::new();
                freed += rec.size_limit;
                reclaimed += 1;
            }
            if rec.state == AllocState::Expired
                && rec.expires_at.saturating_add(self.config.tombstone_retention_seconds) <= now
            {
                forget.push(id);
            }
        }
        let mut table = lock(&self.table);
        table.live_bytes -= freed;
        for id in forget {
            table.slots.remove(&id);
        }
        reclaimed
    }

    /// Push bytes from a local allocation into a remote one.
    pub fn transfer_out(
        &self,
        src_alloc_id: &str,
        src_key: &Key,
        dst: &Capability,
        src_offset: u64,
        dst_offset: u64,
        length: u64,
    ) -> Result<u64> {
        if dst.kind != CapKind::Write {
            return Err(EbpError::cap(format!("transfer destination must be a write capability, got {}", dst.kind)));
        }
        if let Some(max) = self.config.max_transfer_bytes_per_request {
            if length > max {
                return Err(EbpError::policy(format!("transfer of {length} bytes exceeds cap {max}")));
            }
        }
        let local = dst.node_id == self.config.node_id;
        let endpoint = if local {
            None
        } else {
            match self.config.adjacent_endpoints.get(&dst.node_id) {
                Some(ep) if self.config.allowed_adjacent.contains(&dst.node_id) => Some(ep.clone()),
                _ => {
                    return Err(EbpError::adj(format!(
                        "{} is not adjacent to {}",
                        dst.node_id, self.config.node_id
                    )))
                }
            }
        };
        let bytes = self.read(src_alloc_id, src_key, src_offset, length)?;
        let Some(endpoint) = endpoint else {
            return self.write(&dst.alloc_id, &dst.key, dst_offset, &bytes);
        };
        if let Some(gate) = &self.gate {
            if !gate.admit(&self.config.node_id, &dst.node_id) {
                return Err(EbpError::net(format!("transfer to {} refused", dst.node_id)));
            }
        }
        let mut target = dst.clone();
        target.endpoint = endpoint;
        let client = Client::new(Duration::from_secs(self.config.request_timeout_seconds));
        client.write(&target, dst_offset, &bytes).map_err(|e| match e.code {
            crate::ErrorCode::Net => e,
            _ => e.context(format!("remote {}", dst.node_id)),
        })
    }

    pub fn transform(
        &self,
        op_name: &str,
        inputs: &[Capability],
        outputs: &[Capability],
        params: &Params,
    ) -> Result<Vec<u64>> {
        let (spec, op) = self.registry.resolve(op_name)?;
        check_arity(spec, inputs.len(), outputs.len())?;
        if let Some(c) = inputs.iter().chain(outputs).find(|c| c.node_id != self.config.node_id) {
            return Err(EbpError::local(format!(
                "capability names {}, not {}",
                c.node_id, self.config.node_id
            )));
        }
        if let Some(c) = inputs.iter().find(|c| c.kind != CapKind::Read) {
            return Err(EbpError::cap(format!("transform input must be a read capability, got {}", c.kind)));
        }
        if let Some(c) = outputs.iter().find(|c| c.kind != CapKind::Write) {
            return Err(EbpError::cap(format!("transform output must be a write capability, got {}", c.kind)));
        }
        let params = ResolvedParams::resolve(spec, params)?;

        // Lock every allocation once, in id order.
        let ids: BTreeSet<&str> = inputs.iter().chain(outputs).map(|c| c.alloc_id.as_str()).collect();
        let ids: Vec<&str> = ids.into_iter().collect();
        let slots: Vec<Slot> = ids.iter().map(|id| self.slot(id)).collect::<Result<_>>()?;
        let mut guards: Vec<RwLockWriteGuard<'_, Record>> = slots.iter().map(write_lock).collect();
        let now = self.clock.now();
        let position = |c: &Capability| ids.binary_search(&c.alloc_id.as_str()).expect("id collected above");
        for c in inputs.iter().chain(outputs) {
            guards[position(c)].authorize(&c.key, c.kind, now)?;
        }
        let in_pos: Vec<usize> = inputs.iter().map(position).collect();
        let out_pos: Vec<usize> = outputs.iter().map(position).collect();
        let views: Vec<&mut [u8]> = guards.iter_mut().map(|g| g.data.as_mut_slice()).collect();
        let mut bufs = Buffers::new(views, in_pos, out_pos);
        op.apply(&mut bufs, &params)
    }

    /// XOR `mask` into byte `byte_index` of every active allocation whose id
    /// matches. Returns how many allocations changed.
    pub fn corrupt(&self, matches: &dyn Fn(&str) -> bool, byte_index: u64, mask: u8) -> usize {
        let mut n = 0;
        for (id, slot) in self.slots() {
            if !matches(&id) {
                continue;
            }
            let mut rec = write_lock(&slot);
            if rec.state == AllocState::Active && byte_index < rec.size_limit {
                rec.data[byte_index as usize] ^= mask;
                n += 1;
            }
        }
        n
    }

    /// Execute one decoded request.
    pub fn handle(&self, req: &Request) -> Response {
        let result = match req {
            Request::Allocate { size, duration } => self
                .allocate(*size, *duration)
                .map(|c| Response::Ok(vec![c.read.to_uri(), c.write.to_uri(), c.manage.to_uri()])),
            Request::Write { alloc_id, key, offset, payload } => {
                self.write(alloc_id, key, *offset, payload).map(|n| Response::Ok(vec![n.to_string()]))
            }
            Request::Read { alloc_id, key, offset, length } => {
                self.read(alloc_id, key, *offset, *length).map(Response::Data)
            }
            Request::Manage { alloc_id, key, action } => {
                self.manage(alloc_id, key, *action).map(|s| Response::Ok(s.to_tokens()))
            }
            Request::Transfer { src_alloc_id, src_key, dst, src_offset, dst_offset, length } => self
                .transfer_out(src_alloc_id, src_key, dst, *src_offset, *dst_offset, *length)
                .map(|n| Response::Ok(vec![n.to_string()])),
            Request::Transform { op_name, inputs, outputs, params } => self
                .transform(op_name, inputs, outputs, params)
                .map(|v| Response::Ok(v.iter().map(u64::to_string).collect())),
        };
        result.unwrap_or_else(Response::Err)
    }
}
