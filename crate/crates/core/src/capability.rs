//! Capabilities: the only names by which an allocation can be referenced.
//!
//! A capability binds a depot (node id and endpoint), an allocation id, an
//! access kind and a 128-bit random key. Its textual form is
//!
//! ```text
//! ebp://<host>:<port>/<node_id>/<alloc_id>/<base64url(key)>/<read|write|manage>
//! ```

use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{EbpError, Result};

pub const KEY_LEN: usize = 16;
const SCHEME: &str = "ebp://";

/// A 128-bit capability key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Key(pub [u8; KEY_LEN]);

impl Key {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Key(bytes)
    }

    pub fn to_b64(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.0)
    }

    pub fn from_b64(s: &str) -> Result<Self> {
        let bytes = URL_SAFE_NO_PAD
            .decode(s)
            .map_err(|e| EbpError::proto(format!("bad key encoding: {e}")))?;
        let arr: [u8; KEY_LEN] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| EbpError::proto(format!("key must be {KEY_LEN} bytes, got {}", b.len())))?;
        Ok(Key(arr))
    }
}

// Keys are secrets; keep them out of debug logs.
impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key(..)")
    }
}

/// Compare two keys in time independent of where they differ.
pub fn verify(presented: &Key, stored: &Key) -> bool {
    let mut diff = 0u8;
    for (a, b) in presented.0.iter().zip(stored.0.iter()) {
        diff |= a ^ b;
    }
    std::hint::black_box(diff) == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CapKind {
    Read,
    Write,
    Manage,
}

impl CapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CapKind::Read => "read",
            CapKind::Write => "write",
            CapKind::Manage => "manage",
        }
    }
}

impl fmt::Display for CapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CapKind {
    type Err = EbpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(CapKind::Read),
            "write" => Ok(CapKind::Write),
            "manage" => Ok(CapKind::Manage),
            other => Err(EbpError::proto(format!("unknown capability kind {other:?}"))),
        }
    }
}

/// `[a-z0-9-]+`
pub fn is_valid_node_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// Unpadded base64url alphabet, nonempty.
pub fn is_valid_alloc_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// `host:port` with a nonempty host free of `/`, whitespace and `@`.
pub fn validate_endpoint(s: &str) -> Result<()> {
    let (host, port) = s
        .rsplit_once(':')
        .ok_or_else(|| EbpError::proto(format!("endpoint {s:?} is not host:port")))?;
    if host.is_empty() || host.bytes().any(|b| b == b'/' || b == b'@' || b.is_ascii_whitespace()) {
        return Err(EbpError::proto(format!("bad host in endpoint {s:?}")));
    }
    port.parse::<u16>()
        .map_err(|_| EbpError::proto(format!("bad port in endpoint {s:?}")))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Capability {
    pub node_id: String,
    pub endpoint: String,
    pub alloc_id: String,
    pub key: Key,
    pub kind: CapKind,
}

impl Capability {
    /// Mint a fresh capability with a new random key.
    pub fn mint<R: RngCore + CryptoRng>(
        node_id: &str,
        endpoint: &str,
        alloc_id: &str,
        kind: CapKind,
        rng: &mut R,
    ) -> Self {
        Capability {
            node_id: node_id.to_owned(),
            endpoint: endpoint.to_owned(),
            alloc_id: alloc_id.to_owned(),
            key: Key::random(rng),
            kind,
        }
    }

    pub fn to_uri(&self) -> String {
        format!(
            "{SCHEME}{}/{}/{}/{}/{}",
            self.endpoint,
            self.node_id,
            self.alloc_id,
            self.key.to_b64(),
            self.kind
        )
    }

    pub fn parse(uri: &str) -> Result<Self> {
        let rest = uri
            .strip_prefix(SCHEME)
            .ok_or_else(|| EbpError::proto(format!("capability must start with {SCHEME}")))?;
        let parts: Vec<&str> = rest.split('/').collect();
        let [endpoint, node_id, alloc_id, key, kind] = parts[..] else {
            return Err(EbpError::proto(format!(
                "capability has {} path segments, expected 5",
                parts.len()
            )));
        };
        validate_endpoint(endpoint)?;
        if !is_valid_node_id(node_id) {
            return Err(EbpError::proto(format!("bad node id {node_id:?}")));
        }
        if !is_valid_alloc_id(alloc_id) {
            return Err(EbpError::proto(format!("bad allocation id {alloc_id:?}")));
        }
        Ok(Capability {
            node_id: node_id.to_owned(),
            endpoint: endpoint.to_owned(),
            alloc_id: alloc_id.to_owned(),
            key: Key::from_b64(key)?,
            kind: kind.parse()?,
        })
    }

    /// True when both capabilities name the same allocation on the same depot.
    pub fn same_allocation(&self, other: &Capability) -> bool {
        self.node_id == other.node_id && self.alloc_id == other.alloc_id
    }

    pub fn expect_kind(&self, kind: CapKind) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(EbpError::cap(format!("expected a {kind} capability, got {}", self.kind)))
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_uri())
    }
}

impl FromStr for Capability {
    type Err = EbpError;

    fn from_str(s: &str) -> Result<Self> {
        Capability::parse(s)
    }
}

impl Serialize for Capability {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_uri())
    }
}

impl<'de> Deserialize<'de> for Capability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Capability::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// The three capabilities returned by an allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapabilitySet {
    pub read: Capability,
    pub write: Capability,
    pub manage: Capability,
}
