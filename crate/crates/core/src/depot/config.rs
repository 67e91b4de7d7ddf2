//! Operator configuration for a depot.
//!
//! The file format is line based UTF-8, one `key = value` pair per line.
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma separated; `adjacent_endpoints` entries are `node_id=host:port`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::capability::{is_valid_node_id, validate_endpoint};
use crate::error::{EbpError, Result};

pub const DEFAULT_REQUEST_TIMEOUT_SECONDS: u64 = 30;
pub const DEFAULT_TOMBSTONE_RETENTION_SECONDS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepotConfig {
    pub node_id: String,
    pub listen_endpoint: String,
    pub max_allocation_bytes: u64,
    pub max_total_bytes: u64,
    pub max_duration_seconds: u64,
    /// Outbound transfer allowlist.
    pub allowed_adjacent: BTreeSet<String>,
    pub adjacent_endpoints: BTreeMap<String, String>,
    pub request_timeout_seconds: u64,
    /// Cap on bytes moved by a single TRANSFER. Not a rate limit.
    pub max_transfer_bytes_per_request: Option<u64>,
    /// How long an expired allocation keeps answering E_EXPIRED before its
    /// id is forgotten.
    pub tombstone_retention_seconds: u64,
}

impl DepotConfig {
    pub fn new(node_id: &str, listen_endpoint: &str) -> Self {
        DepotConfig {
            node_id: node_id.to_owned(),
            listen_endpoint: listen_endpoint.to_owned(),
            max_allocation_bytes: 4096,
            max_total_bytes: 65536,
            max_duration_seconds: 3600,
            allowed_adjacent: BTreeSet::new(),
            adjacent_endpoints: BTreeMap::new(),
            request_timeout_seconds: DEFAULT_REQUEST_TIMEOUT_SECONDS,
            max_transfer_bytes_per_request: None,
            tombstone_retention_seconds: DEFAULT_TOMBSTONE_RETENTION_SECONDS,
        }
    }

    pub fn with_caps(mut self, max_allocation_bytes: u64, max_total_bytes: u64, max_duration_seconds: u64) -> Self {
        self.max_allocation_bytes = max_allocation_bytes;
        self.max_total_bytes = max_total_bytes;
        self.max_duration_seconds = max_duration_seconds;
        self
    }

    /// Allow outbound transfers to `node_id`, reached at `endpoint`.
    pub fn with_neighbor(mut self, node_id: &str, endpoint: &str) -> Self {
        self.allowed_adjacent.insert(node_id.to_owned());
        self.adjacent_endpoints.insert(node_id.to_owned(), endpoint.to_owned());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !is_valid_node_id(&self.node_id) {
            return Err(EbpError::proto(format!("node_id {:?} must match [a-z0-9-]+", self.node_id)));
        }
        validate_endpoint(&self.listen_endpoint)?;
        if self.max_allocation_bytes > self.max_total_bytes {
            return Err(EbpError::proto("max_allocation_bytes exceeds max_total_bytes"));
        }
        if self.max_duration_seconds == 0 {
            return Err(EbpError::proto("max_duration_seconds must be positive"));
        }
        if self.request_timeout_seconds == 0 {
            return Err(EbpError::proto("request_timeout_seconds must be positive"));
        }
        for n in &self.allowed_adjacent {
            if !is_valid_node_id(n) {
                return Err(EbpError::proto(format!("bad node id {n:?} in allowed_adjacent")));
            }
        }
        for (n, ep) in &self.adjacent_endpoints {
            if !is_valid_node_id(n) {
                return Err(EbpError::proto(format!("bad node id {n:?} in adjacent_endpoints")));
            }
            validate_endpoint(ep)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| EbpError::proto(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if fields.insert(k, v).is_some() {
                return Err(EbpError::proto(format!("line {}: duplicate key {k}", no + 1)));
            }
        }

        let mut take = |k: &str| fields.remove(k);
        let required = |k: &str, v: Option<&str>| {
            v.map(str::to_owned)
                .ok_or_else(|| EbpError::proto(format!("missing required key {k}")))
        };
        let int = |k: &str, v: &str| {
            v.parse::<u64>()
                .map_err(|_| EbpError::proto(format!("{k} must be a non-negative integer, got {v:?}")))
        };

        let node_id = required("node_id", take("node_id"))?;
        let listen_endpoint = required("listen_endpoint", take("listen_endpoint"))?;
        let max_allocation_bytes = int("max_allocation_bytes", &required("max_allocation_bytes", take("max_allocation_bytes"))?)?;
        let max_total_bytes = int("max_total_bytes", &required("max_total_bytes", take("max_total_bytes"))?)?;
        let max_duration_seconds = int("max_duration_seconds", &required("max_duration_seconds", take("max_duration_seconds"))?)?;
        let allowed_adjacent = take("allowed_adjacent")
            .map(|v| list(v).map(str::to_owned).collect())
            .unwrap_or_default();
        let adjacent_endpoints = match take("adjacent_endpoints") {
            None => BTreeMap::new(),
            Some(v) => list(v)
                .map(|entry| {
                    entry
                        .split_once('=')
                        .map(|(n, ep)| (n.trim().to_owned(), ep.trim().to_owned()))
                        .ok_or_else(|| EbpError::proto(format!("adjacent_endpoints entry {entry:?} is not node=host:port")))
                })
                .collect::<Result<_>>()?,
        };
        let request_timeout_seconds = match take("request_timeout_seconds") {
            Some(v) => int("request_timeout_seconds", v)?,
            None => DEFAULT_REQUEST_TIMEOUT_SECONDS,
        };
        let max_transfer_bytes_per_request = take("max_transfer_bytes_per_request")
            .map(|v| int("max_transfer_bytes_per_request", v))
            .transpose()?;
        let tombstone_retention_seconds = match take("tombstone_retention_seconds") {
            Some(v) => int("tombstone_retention_seconds", v)?,
            None => DEFAULT_TOMBSTONE_RETENTION_SECONDS,
        };
        if let Some(k) = fields.keys().next() {
            return Err(EbpError::proto(format!("unknown key {k}")));
        }

        let cfg = DepotConfig {
            node_id,
            listen_endpoint,
            max_allocation_bytes,
            max_total_bytes,
            max_duration_seconds,
            allowed_adjacent,
            adjacent_endpoints,
            request_timeout_seconds,
            max_transfer_bytes_per_request,
            tombstone_retention_seconds,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EbpError::proto(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "node_id = {}", self.node_id);
        let _ = writeln!(s, "listen_endpoint = {}", self.listen_endpoint);
        let _ = writeln!(s, "max_allocation_bytes = {}", self.max_allocation_bytes);
        let _ = writeln!(s, "max_total_bytes = {}", self.max_total_bytes);
        let _ = writeln!(s, "max_duration_seconds = {}", self.max_duration_seconds);
        let adj: Vec<&str> = self.allowed_adjacent.iter().map(String::as_str).collect();
        let _ = writeln!(s, "allowed_adjacent = {}", adj.join(","));
        let eps: Vec<String> = self.adjacent_endpoints.iter().map(|(n, e)| format!("{n}={e}")).collect();
        let _ = writeln!(s, "adjacent_endpoints = {}", eps.join(","));
        let _ = writeln!(s, "request_timeout_seconds = {}", self.request_timeout_seconds);
        if let Some(m) = self.max_transfer_bytes_per_request {
            let _ = writeln!(s, "max_transfer_bytes_per_request = {m}");
        }
        let _ = writeln!(s, "tombstone_retention_seconds = {}", self.tombstone_retention_seconds);
        s
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# depot one
node_id = d1
listen_endpoint = 127.0.0.1:6714
max_allocation_bytes = 4096
max_total_bytes = 65536
max_duration_seconds = 3600
allowed_adjacent = d2, d3
adjacent_endpoints = d2=127.0.0.1:6715,d3=10.0.0.3:6714
";

    #[test]
    fn parses_sample() {
        let c = DepotConfig::parse(SAMPLE).unwrap();
        assert_eq!(c.node_id, "d1");
        assert_eq!(c.allowed_adjacent.len(), 2);
        assert_eq!(c.adjacent_endpoints["d3"], "10.0.0.3:6714");
        assert_eq!(c.request_timeout_seconds, 30);
        assert_eq!(DepotConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            SAMPLE.replace("max_allocation_bytes = 4096", "max_allocation_bytes = 100000"),
            SAMPLE.replace("max_duration_seconds = 3600", "max_duration_seconds = 0"),
            SAMPLE.replace("node_id = d1", "node_id = D1"),
            SAMPLE.replace("node_id = d1\n", ""),
            format!("{SAMPLE}colour = blue\n"),
            format!("{SAMPLE}node_id = d9\n"),
            SAMPLE.replace("d3=10.0.0.3:6714", "d3"),
            SAMPLE.replace("max_total_bytes = 65536", "max_total_bytes = lots"),
        ];
        for c in cases {
            assert!(DepotConfig::parse(&c).is_err(), "{c}");
        }
    }
}
