//! In-process multi-depot cluster on loopback sockets with a shared
//! simulated clock and fault injection.

use std::collections::{BTreeMap, BTreeSet};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::client::Client;
use crate::clock::{Clock, SimClock};
use crate::control::ControlPlane;
use crate::depot::{bind, Depot, DepotConfig, DepotServer, TransferGate};
use crate::error::{EbpError, Result};
use crate::topology::{AdjacencyGraph, DepotDirectory};

/// Simulated time starts here rather than at zero so lease arithmetic
/// never sits at the edge of the integer range.
pub const SIM_EPOCH: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Topology {
    /// d0 -> d1 -> ... -> d(n-1).
    Chain,
    /// Chain plus d(n-1) -> d0.
    Ring,
    /// d0 <-> every other depot.
    Star,
    /// Every ordered pair.
    Full,
    /// Explicit directed edges by depot index.
    Edges(Vec<(usize, usize)>),
}

impl Topology {
    fn edges(&self, n: usize) -> Result<Vec<(usize, usize)>> {
        let edges = match self {
            Topology::Chain => (1..n).map(|i| (i - 1, i)).collect(),
            Topology::Ring => {
                let mut e: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
                if n > 2 {
                    e.push((n - 1, 0));
                } else if n == 2 {
                    e.push((1, 0));
                }
                e
            }
            Topology::Star => (1..n).flat_map(|i| [(0, i), (i, 0)]).collect(),
            Topology::Full => (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect(),
            Topology::Edges(e) => e.clone(),
        };
        if let Some(&(a, b)) = edges.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
            return Err(EbpError::unknown_node(format!("edge d{a} -> d{b} outside a {n}-depot cluster")));
        }
        Ok(edges)
    }
}

pub fn node_name(i: usize) -> String {
    format!("d{i}")
}

/// Which allocations a corrupt directive touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllocMatch {
    All,
    Ids(BTreeSet<String>),
}

impl AllocMatch {
    pub fn id(id: &str) -> Self {
        AllocMatch::Ids(BTreeSet::from([id.to_owned()]))
    }

    fn matches(&self, id: &str) -> bool {
        match self {
            AllocMatch::All => true,
            AllocMatch::Ids(ids) => ids.contains(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fault {
    Stop,
    Corrupt { allocs: AllocMatch, byte_index: u64, mask: u8 },
    /// Fail transfers into this depot with E_NET at the given rate.
    RefuseTransfers { probability: f64, seed: u64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPlan {
    pub directives: Vec<(String, Fault)>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(mut self, node: &str) -> Self {
        self.directives.push((node.to_owned(), Fault::Stop));
        self
    }

    pub fn corrupt(mut self, node: &str, allocs: AllocMatch, byte_index: u64, mask: u8) -> Self {
        self.directives.push((node.to_owned(), Fault::Corrupt { allocs, byte_index, mask }));
        self
    }

    pub fn refuse_transfers(mut self, node: &str, probability: f64, seed: u64) -> Self {
        self.directives.push((node.to_owned(), Fault::RefuseTransfers { probability, seed }));
        self
    }
}

/// Seeded per-destination refusal, shared by every depot of a cluster.
#[derive(Default)]
struct RefusalGate {
    rules: Mutex<BTreeMap<String, (f64, ChaCha20Rng)>>,
}

impl TransferGate for RefusalGate {
    fn admit(&self, _src: &str, dst: &str) -> bool {
        let mut rules = self.rules.lock().unwrap_or_else(|p| p.into_inner());
        match rules.get_mut(dst) {
            Some((p, rng)) => rng.gen::<f64>() >= *p,
            None => true,
        }
    }
}

struct Member {
    depot: Arc<Depot>,
    server: Option<DepotServer>,
}

pub struct SimCluster {
    members: Vec<Member>,
    directory: DepotDirectory,
    graph: AdjacencyGraph,
    clock: SimClock,
    gate: Arc<RefusalGate>,
    timeout: Duration,
}

impl SimCluster {
    /// `n` depots in a chain.
    pub fn spawn(n: usize, base: &DepotConfig) -> Result<Self> {
        Self::spawn_with(n, base, Topology::Chain, 0)
    }

    /// `n` depots named d0..d(n-1), allowlists following `topology`, ids and
    /// keys drawn from generators seeded by `seed`.
    pub fn spawn_with(n: usize, base: &DepotConfig, topology: Topology, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(EbpError::policy("a cluster needs at least one depot"));
        }
        let edges = topology.edges(n)?;
        let listeners: Vec<TcpListener> = (0..n).map(|_| bind("127.0.0.1:0")).collect::<Result<_>>()?;
        let endpoints: Vec<String> = listeners
            .iter()
            .map(|l| l.local_addr().map(|a| a.to_string()).map_err(|e| EbpError::bind(e.to_string())))
            .collect::<Result<_>>()?;

        let clock = SimClock::new(SIM_EPOCH);
        let gate = Arc::new(RefusalGate::default());
        let names: Vec<String> = (0..n).map(node_name).collect();
        let mut graph = AdjacencyGraph::new(names.iter().cloned());
        let mut directory = DepotDirectory::default();
        let mut configs = Vec::with_capacity(n);
        for i in 0..n {
            let mut c = base.clone();
            c.node_id = names[i].clone();
            c.listen_endpoint = endpoints[i].clone();
            c.allowed_adjacent.clear();
            c.adjacent_endpoints.clear();
            directory.insert(&names[i], &endpoints[i], Some(c.max_allocation_bytes));
            configs.push(c);
        }
        for &(a, b) in &edges {
            graph.add_edge(&names[a], &names[b])?;
            configs[a] = configs[a].clone().with_neighbor(&names[b], &endpoints[b]);
        }

        let mut members = Vec::with_capacity(n);
        for (i, (config, listener)) in configs.into_iter().zip(listeners).enumerate() {
            let depot = Depot::new(config, Arc::new(clock.clone()))?
                .with_seed(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64))
                .with_transfer_gate(gate.clone() as Arc<dyn TransferGate>);
            let depot = Arc::new(depot);
            let server = DepotServer::serve(listener, Arc::clone(&depot));
            members.push(Member { depot, server: Some(server) });
        }
        Ok(SimCluster { members, directory, graph, clock, gate, timeout: Duration::from_secs(5) })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn directory(&self) -> &DepotDirectory {
        &self.directory
    }

    pub fn graph(&self) -> &AdjacencyGraph {
        &self.graph
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn endpoint(&self, node: &str) -> Result<&str> {
        self.directory.endpoint(node)
    }

    pub fn depot(&self, node: &str) -> Result<&Arc<Depot>> {
        Ok(&self.members[self.index(node)?].depot)
    }

    pub fn depots(&self) -> impl Iterator<Item = &Arc<Depot>> {
        self.members.iter().map(|m| &m.depot)
    }

    fn index(&self, node: &str) -> Result<usize> {
        self.members
            .iter()
            .position(|m| m.depot.node_id() == node)
            .ok_or_else(|| EbpError::unknown_node(format!("{node} is not part of the cluster")))
    }

    /// Move time forward and sweep every depot. Returns the new time.
    pub fn advance_clock(&self, delta: u64) -> u64 {
        let now = self.clock.advance(delta);
        for m in &self.members {
            m.depot.expire_sweep(now);
        }
        now
    }

    /// Apply every directive, after checking that all named depots exist.
    /// Returns how many allocations the corrupt directives changed.
    pub fn inject_fault(&mut self, plan: &FaultPlan) -> Result<usize> {
        for (node, _) in &plan.directives {
            self.index(node)?;
        }
        let mut corrupted = 0;
        for (node, fault) in &plan.directives {
            let i = self.index(node)?;
            match fault {
                Fault::Stop => self.stop(node)?,
                Fault::Corrupt { allocs, byte_index, mask } => {
                    corrupted += self.members[i].depot.corrupt(&|id| allocs.matches(id), *byte_index, *mask);
                }
                Fault::RefuseTransfers { probability, seed } => {
                    let mut rules = self.gate.rules.lock().unwrap_or_else(|p| p.into_inner());
                    rules.insert(node.clone(), (probability.clamp(0.0, 1.0), ChaCha20Rng::seed_from_u64(*seed)));
                }
            }
        }
        Ok(corrupted)
    }

    /// Remove every transfer refusal rule.
    pub fn clear_refusals(&self) {
        self.gate.rules.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }

    /// Close a depot's listener. Its stored allocations are kept.
    pub fn stop(&mut self, node: &str) -> Result<()> {
        let i = self.index(node)?;
        if let Some(mut s) = self.members[i].server.take() {
            s.stop();
        }
        Ok(())
    }

    /// Serve a stopped depot again on its original endpoint.
    pub fn restart(&mut self, node: &str) -> Result<()> {
        let i = self.index(node)?;
        if self.members[i].server.is_some() {
            return Ok(());
        }
        let listener = bind(self.directory.endpoint(node)?)?;
        self.members[i].server = Some(DepotServer::serve(listener, Arc::clone(&self.members[i].depot)));
        Ok(())
    }

    pub fn is_running(&self, node: &str) -> Result<bool> {
        Ok(self.members[self.index(node)?].server.is_some())
    }

    pub fn client(&self) -> Client {
        Client::new(self.timeout)
    }

    /// A control plane reading the cluster's simulated clock.
    pub fn control_plane(&self) -> ControlPlane {
        ControlPlane::new(self.client(), Arc::new(self.clock.clone()))
    }
}
