//! Depot directory and the directed adjacency graph used for multi-hop
//! routing.
//!
//! Directory file: one `node_id endpoint [max_alloc]` per line.
//! Graph file: one `src -> dst` edge per line. `#` starts a comment in both.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use crate::capability::validate_endpoint;
use crate::error::{EbpError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectoryEntry {
    pub endpoint: String,
    pub max_allocation_bytes: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DepotDirectory {
    pub entries: BTreeMap<String, DirectoryEntry>,
}

fn is_valid_graph_node(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

impl DepotDirectory {
    pub fn insert(&mut self, node_id: &str, endpoint: &str, max_allocation_bytes: Option<u64>) {
        self.entries.insert(
            node_id.to_owned(),
            DirectoryEntry { endpoint: endpoint.to_owned(), max_allocation_bytes },
        );
    }

    pub fn get(&self, node_id: &str) -> Result<&DirectoryEntry> {
        self.entries
            .get(node_id)
            .ok_or_else(|| EbpError::unknown_node(format!("{node_id} is not in the directory")))
    }

    pub fn endpoint(&self, node_id: &str) -> Result<&str> {
        self.get(node_id).map(|e| e.endpoint.as_str())
    }

    /// Node ids in lexicographic order.
    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dir = DepotDirectory::default();
        for (no, line) in content_lines(text) {
            let toks: Vec<&str> = line.split_whitespace().collect();
            let (node, endpoint, max) = match toks[..] {
                [n, e] => (n, e, None),
                [n, e, m] => (
                    n,
                    e,
                    Some(m.parse::<u64>().map_err(|_| {
                        EbpError::proto(format!("line {no}: max_alloc must be an integer, got {m:?}"))
                    })?),
                ),
                _ => return Err(EbpError::proto(format!("line {no}: expected `node_id endpoint [max_alloc]`"))),
            };
            if !is_valid_graph_node(node) {
                return Err(EbpError::proto(format!("line {no}: bad node id {node:?}")));
            }
            validate_endpoint(endpoint).map_err(|e| e.context(format!("line {no}")))?;
            if dir.entries.contains_key(node) {
                return Err(EbpError::proto(format!("line {no}: duplicate node id {node}")));
            }
            dir.insert(node, endpoint, max);
        }
        Ok(dir)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (n, e) in &self.entries {
            match e.max_allocation_bytes {
                Some(m) => s += &format!("{n} {} {m}\n", e.endpoint),
                None => s += &format!("{n} {}\n", e.endpoint),
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdjacencyGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl AdjacencyGraph {
    pub fn new<I, S>(nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AdjacencyGraph { nodes: nodes.into_iter().map(Into::into).collect(), edges: BTreeMap::new() }
    }

    /// Add a directed edge. Both ends must already be nodes; self loops are
    /// rejected.
    pub fn add_edge(&mut self, src: &str, dst: &str) -> Result<()> {
        for n in [src, dst] {
            if !self.nodes.contains(n) {
                return Err(EbpError::unknown_node(format!("{n} is not a node of the graph")));
            }
        }
        if src == dst {
            return Err(EbpError::proto(format!("self loop on {src}")));
        }
        self.edges.entry(src.to_owned()).or_default().insert(dst.to_owned());
        Ok(())
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .flat_map(|(s, ds)| ds.iter().map(move |d| (s.as_str(), d.as_str())))
    }

    pub fn has_edge(&self, src: &str, dst: &str) -> bool {
        self.edges.get(src).is_some_and(|d| d.contains(dst))
    }

    /// Outbound neighbours, sorted.
    pub fn neighbors(&self, node: &str) -> Result<BTreeSet<String>> {
        if !self.nodes.contains(node) {
            return Err(EbpError::unknown_node(format!("{node} is not a node of the graph")));
        }
        Ok(self.edges.get(node).cloned().unwrap_or_default())
    }

    /// Minimum-hop path from `src` to `dst`; ties go to the lexicographically
    /// smallest node sequence.
    pub fn route(&self, src: &str, dst: &str) -> Result<Vec<String>> {
        for n in [src, dst] {
            if !self.nodes.contains(n) {
                return Err(EbpError::unknown_node(format!("{n} is not a node of the graph")));
            }
        }
        // Hop distance to dst over reversed edges.
        let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (s, d) in self.edges() {
            reverse.entry(d).or_default().push(s);
        }
        let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(dst, 0)]);
        let mut queue = VecDeque::from([dst]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for &p in reverse.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if !dist.contains_key(p) {
                    dist.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        let Some(&hops) = dist.get(src) else {
            return Err(EbpError::noroute(format!("no path from {src} to {dst}")));
        };
        // Walk forward, always taking the smallest neighbour one hop closer.
        let mut path = vec![src.to_owned()];
        let mut at = src;
        for remaining in (0..hops).rev() {
            at = self.edges[at]
                .iter()
                .map(String::as_str)
                .find(|n| dist.get(n) == Some(&remaining))
                .expect("a node at distance k+1 has a successor at distance k");
            path.push(at.to_owned());
        }
        Ok(path)
    }

    /// Parse edges; nodes are whatever the edges mention.
    pub fn parse(text: &str) -> Result<Self> {
        let edges = parse_edges(text)?;
        let mut g = AdjacencyGraph::new(edges.iter().flat_map(|(s, d)| [s.clone(), d.clone()]));
        for (s, d) in &edges {
            g.add_edge(s, d)?;
        }
        Ok(g)
    }

    pub fn render(&self) -> String {
        self.edges().map(|(s, d)| format!("{s} -> {d}\n")).collect()
    }
}

fn parse_edges(text: &str) -> Result<Vec<(String, String)>> {
    content_lines(text)
        .map(|(no, line)| {
            let (s, d) = line
                .split_once("->")
                .ok_or_else(|| EbpError::proto(format!("line {no}: expected `src -> dst`")))?;
            let (s, d) = (s.trim(), d.trim());
            if !is_valid_graph_node(s) || !is_valid_graph_node(d) {
                return Err(EbpError::proto(format!("line {no}: bad node id in {line:?}")));
            }
            if s == d {
                return Err(EbpError::proto(format!("line {no}: self loop on {s}")));
            }
            Ok((s.to_owned(), d.to_owned()))
        })
        .collect()
}

/// Parse a directory and a graph whose nodes must all be listed in it. The
/// graph's node set is the directory's.
pub fn parse_pair(directory: &str, graph: &str) -> Result<(DepotDirectory, AdjacencyGraph)> {
    let dir = DepotDirectory::parse(directory)?;
    let mut g = AdjacencyGraph::new(dir.nodes());
    for (s, d) in parse_edges(graph)? {
        g.add_edge(&s, &d)?;
    }
    Ok((dir, g))
}

pub fn load(directory_file: &Path, graph_file: &Path) -> Result<(DepotDirectory, AdjacencyGraph)> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| EbpError::proto(format!("cannot read {}: {e}", p.display())))
    };
    parse_pair(&read(directory_file)?, &read(graph_file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorCode;

    fn graph(nodes: &[&str], edges: &[(&str, &str)]) -> AdjacencyGraph {
        let mut g = AdjacencyGraph::new(nodes.iter().copied());
        for (s, d) in edges {
            g.add_edge(s, d).unwrap();
        }
        g
    }

    #[test]
    fn chain_routes() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "B"), ("B", "C")]);
        assert_eq!(g.route("A", "C").unwrap(), ["A", "B", "C"]);
        assert_eq!(g.route("A", "A").unwrap(), ["A"]);
        assert_eq!(g.route("A", "D").unwrap_err().code, ErrorCode::NoRoute);
        assert_eq!(g.route("C", "A").unwrap_err().code, ErrorCode::NoRoute);
        assert_eq!(g.route("A", "Z").unwrap_err().code, ErrorCode::UnknownNode);
    }

    #[test]
    fn diamond_prefers_smaller_name() {
        let g = graph(&["A", "B", "C", "D"], &[("A", "C"), ("A", "B"), ("B", "D"), ("C", "D")]);
        assert_eq!(g.route("A", "D").unwrap(), ["A", "B", "D"]);
    }

    #[test]
    fn neighbors_are_outbound() {
        let g = graph(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        assert_eq!(g.neighbors("A").unwrap(), BTreeSet::from(["B".to_owned()]));
        assert!(g.neighbors("C").unwrap().is_empty());
        let mut g = g;
        assert_eq!(g.add_edge("A", "A").unwrap_err().code, ErrorCode::Proto);
    }

    #[test]
    fn loads_fixture_pair() {
        let dir = "# three depots\nA 127.0.0.1:7001 4096\nB 127.0.0.1:7002\nC 127.0.0.1:7003\n";
        let (d, g) = parse_pair(dir, "A -> B\nB -> C # chain\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.get("A").unwrap().max_allocation_bytes, Some(4096));
        assert_eq!(g.route("A", "C").unwrap(), ["A", "B", "C"]);
        assert_eq!(parse_pair(dir, "A -> Q\n").unwrap_err().code, ErrorCode::UnknownNode);
        let dup = format!("{dir}A 127.0.0.1:7009\n");
        assert_eq!(parse_pair(&dup, "").unwrap_err().code, ErrorCode::Proto);
        assert_eq!(parse_pair(dir, "A => B\n").unwrap_err().code, ErrorCode::Proto);
        assert_eq!(parse_pair(dir, "A -> A\n").unwrap_err().code, ErrorCode::Proto);
        assert_eq!(DepotDirectory::parse(&d.render()).unwrap(), d);
    }
}
