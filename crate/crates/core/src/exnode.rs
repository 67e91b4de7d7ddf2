//! exNode: structural metadata mapping a linear logical extent onto
//! allocations spread over depots.
//!
//! Replicas are plain mappings that overlap in logical space and differ in
//! `replica_index`. XOR parity groups reference their data members by index
//! into `mappings` and carry the parity allocation inline, so parity never
//! counts towards coverage.
//!
//! The on-disk form is canonical JSON: sorted keys, no insignificant
//! whitespace, integers in decimal.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::capability::{CapKind, Capability};
use crate::error::{EbpError, Result};

pub const EXNODE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingCaps {
    pub read: Capability,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub write: Option<Capability>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manage: Option<Capability>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mapping {
    pub logical_offset: u64,
    pub length: u64,
    pub alloc_offset: u64,
    pub caps: MappingCaps,
    pub replica_index: u32,
    /// Hex SHA-256 of the `length` bytes this mapping holds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl Mapping {
    pub fn end(&self) -> u64 {
        self.logical_offset.saturating_add(self.length)
    }

    /// Same logical range as `other`, i.e. a replica of the same block.
    pub fn same_extent(&self, other: &Mapping) -> bool {
        self.logical_offset == other.logical_offset && self.length == other.length
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityScheme {
    Xor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParityGroup {
    pub scheme: ParityScheme,
    /// Indices into [`ExNode::mappings`].
    pub data_members: Vec<usize>,
    pub parity_member: Mapping,
    /// Parity length. Members are this long, except a member ending at the
    /// end of the extent, which may be shorter and is zero padded in its
    /// allocation.
    pub block_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExNode {
    pub version: u32,
    pub logical_length: u64,
    pub mappings: Vec<Mapping>,
    pub parity_groups: Vec<ParityGroup>,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnsupportedVersion(u32),
    EmptyMapping { mapping: usize },
    OutOfBounds { mapping: usize, end: u64 },
    WrongCapabilityKind { mapping: usize, field: &'static str },
    NoDataMembers { group: usize },
    UnknownMember { group: usize, member: usize },
    MemberLength { group: usize, member: usize, length: u64 },
    ParityLength { group: usize, length: u64 },
    ParityOutOfBounds { group: usize },
    ParityWrongCapabilityKind { group: usize, field: &'static str },
    SharedAllocation { group: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            Violation::EmptyMapping { mapping } => write!(f, "mapping {mapping} has zero length"),
            Violation::OutOfBounds { mapping, end } => {
                write!(f, "mapping {mapping} ends at {end}, past the logical length")
            }
            Violation::WrongCapabilityKind { mapping, field } => {
                write!(f, "mapping {mapping} {field} capability has the wrong kind")
            }
            Violation::NoDataMembers { group } => write!(f, "parity group {group} has no data members"),
            Violation::UnknownMember { group, member } => {
                write!(f, "parity group {group} references missing mapping {member}")
            }
            Violation::MemberLength { group, member, length } => {
                write!(f, "parity group {group} member {member} has length {length}, not the block length")
            }
            Violation::ParityLength { group, length } => {
                write!(f, "parity group {group} parity member has length {length}, not the block length")
            }
            Violation::ParityOutOfBounds { group } => {
                write!(f, "parity group {group} parity member lies past the logical length")
            }
            Violation::ParityWrongCapabilityKind { group, field } => {
                write!(f, "parity group {group} parity {field} capability has the wrong kind")
            }
            Violation::SharedAllocation { group } => {
                write!(f, "parity group {group} members share an allocation")
            }
        }
    }
}

/// One replica able to serve a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alternative {
    /// Index into [`ExNode::mappings`].
    pub mapping: usize,
    pub alloc_offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: u64,
    pub length: u64,
    /// Ranked by replica index, then mapping position.
    pub alternatives: Vec<Alternative>,
}

fn caps_kind_violations(caps: &MappingCaps) -> Vec<&'static str> {
    let mut bad = Vec::new();
    if caps.read.kind != CapKind::Read {
        bad.push("read");
    }
    if caps.write.as_ref().is_some_and(|c| c.kind != CapKind::Write) {
        bad.push("write");
    }
    if caps.manage.as_ref().is_some_and(|c| c.kind != CapKind::Manage) {
        bad.push("manage");
    }
    bad
}

impl ExNode {
    pub fn new(logical_length: u64) -> Self {
        ExNode {
            version: EXNODE_VERSION,
            logical_length,
            mappings: Vec::new(),
            parity_groups: Vec::new(),
            attributes: BTreeMap::new(),
        }
    }

    /// Every broken invariant; empty when the exNode is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.version != EXNODE_VERSION {
            out.push(Violation::UnsupportedVersion(self.version));
        }
        for (i, m) in self.mappings.iter().enumerate() {
            if m.length == 0 {
                out.push(Violation::EmptyMapping { mapping: i });
            }
            if m.logical_offset.checked_add(m.length).is_none_or(|e| e > self.logical_length) {
                out.push(Violation::OutOfBounds { mapping: i, end: m.end() });
            }
            for field in caps_kind_violations(&m.caps) {
                out.push(Violation::WrongCapabilityKind { mapping: i, field });
            }
        }
        for (g, group) in self.parity_groups.iter().enumerate() {
            if group.data_members.is_empty() {
                out.push(Violation::NoDataMembers { group: g });
            }
            let mut allocs = BTreeSet::new();
            let mut shared = false;
            for &idx in &group.data_members {
                let Some(m) = self.mappings.get(idx) else {
                    out.push(Violation::UnknownMember { group: g, member: idx });
                    continue;
                };
                let tail = m.end() == self.logical_length && m.length <= group.block_length;
                if m.length != group.block_length && !tail {
                    out.push(Violation::MemberLength { group: g, member: idx, length: m.length });
                }
                shared |= !allocs.insert((&m.caps.read.node_id, &m.caps.read.alloc_id));
            }
            let p = &group.parity_member;
            if p.length != group.block_length || p.length == 0 {
                out.push(Violation::ParityLength { group: g, length: p.length });
            }
            if p.logical_offset.checked_add(p.length).is_none_or(|e| e > self.logical_length) {
                out.push(Violation::ParityOutOfBounds { group: g });
            }
            for field in caps_kind_violations(&p.caps) {
                out.push(Violation::ParityWrongCapabilityKind { group: g, field });
            }
            shared |= !allocs.insert((&p.caps.read.node_id, &p.caps.read.alloc_id));
            if shared {
                out.push(Violation::SharedAllocation { group: g });
            }
        }
        out
    }

    /// Sorted, disjoint, maximal ranges of `[0, logical_length)` that no
    /// mapping covers.
    pub fn coverage_holes(&self) -> Vec<(u64, u64)> {
        let mut spans: Vec<(u64, u64)> = self
            .mappings
            .iter()
            .filter(|m| m.length > 0)
            .map(|m| (m.logical_offset.min(self.logical_length), m.end().min(self.logical_length)))
            .collect();
        spans.sort_unstable();
        let mut holes = Vec::new();
        let mut cursor = 0;
        for (start, end) in spans {
            if start > cursor {
                holes.push((cursor, start));
            }
            cursor = cursor.max(end);
        }
        if cursor < self.logical_length {
            holes.push((cursor, self.logical_length));
        }
        holes
    }

    pub fn is_complete(&self) -> bool {
        self.validate().is_empty() && self.coverage_holes().is_empty()
    }

    /// Plan a read of `[offset, offset + length)`.
    pub fn resolve(&self, offset: u64, length: u64) -> Result<Vec<Segment>> {
        let end = offset
            .checked_add(length)
            .filter(|&e| e <= self.logical_length)
            .ok_or_else(|| EbpError::range(format!("range {offset}+{length} exceeds logical length {}", self.logical_length)))?;
        if length == 0 {
            return Ok(Vec::new());
        }
        let mut order: Vec<usize> = (0..self.mappings.len())
            .filter(|&i| {
                let m = &self.mappings[i];
                m.length > 0 && m.logical_offset < end && m.end() > offset
            })
            .collect();
        order.sort_by_key(|&i| (self.mappings[i].replica_index, i));

        let mut cuts: BTreeSet<u64> = [offset, end].into();
        for &i in &order {
            let m = &self.mappings[i];
            cuts.extend([m.logical_offset, m.end()].into_iter().filter(|&c| c > offset && c < end));
        }
        let cuts: Vec<u64> = cuts.into_iter().collect();

        let mut plan = Vec::with_capacity(cuts.len() - 1);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let alternatives: Vec<Alternative> = order
                .iter()
                .filter(|&&i| self.mappings[i].logical_offset <= a && self.mappings[i].end() >= b)
                .map(|&i| {
                    let m = &self.mappings[i];
                    Alternative { mapping: i, alloc_offset: m.alloc_offset + (a - m.logical_offset), length: b - a }
                })
                .collect();
            if alternatives.is_empty() {
                return Err(EbpError::hole(format!("no mapping covers [{a}, {b})")));
            }
            plan.push(Segment { start: a, length: b - a, alternatives });
        }
        Ok(plan)
    }

    /// Mappings holding the same logical block as `mapping`, including itself.
    pub fn replicas_of(&self, mapping: usize) -> Vec<usize> {
        let target = &self.mappings[mapping];
        let mut v: Vec<usize> = (0..self.mappings.len())
            .filter(|&i| self.mappings[i].same_extent(target))
            .collect();
        v.sort_by_key(|&i| (self.mappings[i].replica_index, i));
        v
    }

    /// The parity group protecting the block held by `mapping`, if any.
    pub fn group_of(&self, mapping: usize) -> Option<usize> {
        let target = &self.mappings[mapping];
        self.parity_groups.iter().position(|g| {
            g.data_members
                .iter()
                .any(|&i| self.mappings.get(i).is_some_and(|m| m.same_extent(target)))
        })
    }

    pub fn serialize(&self) -> Vec<u8> {
        // Round-tripping through Value sorts object keys.
        let value = serde_json::to_value(self).expect("exNode is always representable as JSON");
        serde_json::to_vec(&value).expect("JSON value serializes")
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        let x: ExNode = serde_json::from_slice(bytes).map_err(|e| EbpError::proto(format!("bad exNode: {e}")))?;
        if x.version != EXNODE_VERSION {
            return Err(EbpError::proto(format!("unsupported exNode version {}", x.version)));
        }
        Ok(x)
    }

    /// Serialized size over logical size.
    pub fn overhead_ratio(&self) -> f64 {
        self.serialize().len() as f64 / self.logical_length as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::{Key, KEY_LEN};
    use crate::error::ErrorCode;
    use proptest::prelude::*;

    fn cap(alloc: &str, kind: CapKind) -> Capability {
        Capability {
            node_id: "d0".into(),
            endpoint: "127.0.0.1:6714".into(),
            alloc_id: alloc.into(),
            key: Key([3; KEY_LEN]),
            kind,
        }
    }

    fn mapping(off: u64, len: u64, replica: u32, alloc: &str) -> Mapping {
        Mapping {
            logical_offset: off,
            length: len,
            alloc_offset: 0,
            caps: MappingCaps { read: cap(alloc, CapKind::Read), write: None, manage: None },
            replica_index: replica,
            digest: None,
        }
    }

    fn exnode(len: u64, maps: &[(u64, u64, u32)]) -> ExNode {
        let mut x = ExNode::new(len);
        for (i, &(o, l, r)) in maps.iter().enumerate() {
            x.mappings.push(mapping(o, l, r, &format!("a{i}")));
        }
        x
    }

    #[test]
    fn validation_examples() {
        assert!(exnode(10, &[(0, 10, 0)]).validate().is_empty());
        let v = exnode(10, &[(4, 7, 0)]).validate();
        assert_eq!(v, vec![Violation::OutOfBounds { mapping: 0, end: 11 }]);

        let mut x = exnode(16, &[(0, 8, 0), (8, 4, 0), (12, 4, 0)]);
        x.parity_groups.push(ParityGroup {
            scheme: ParityScheme::Xor,
            data_members: vec![0, 1],
            parity_member: Mapping { logical_offset: 0, ..mapping(0, 8, 0, "p") },
            block_length: 8,
        });
        assert_eq!(x.validate(), vec![Violation::MemberLength { group: 0, member: 1, length: 4 }]);

        // A short member at the end of the extent is fine.
        let mut x = exnode(12, &[(0, 8, 0), (8, 4, 0)]);
        x.parity_groups.push(ParityGroup {
            scheme: ParityScheme::Xor,
            data_members: vec![0, 1],
            parity_member: mapping(0, 8, 0, "p"),
            block_length: 8,
        });
        assert!(x.validate().is_empty(), "{:?}", x.validate());
        x.parity_groups[0].parity_member.caps.read.alloc_id = "a0".into();
        assert_eq!(x.validate(), vec![Violation::SharedAllocation { group: 0 }]);
    }

    #[test]
    fn hole_examples() {
        assert!(exnode(10, &[(0, 10, 0)]).coverage_holes().is_empty());
        assert_eq!(exnode(10, &[(0, 4, 0)]).coverage_holes(), vec![(4, 10)]);
        assert_eq!(exnode(10, &[(0, 4, 0), (6, 4, 0)]).coverage_holes(), vec![(4, 6)]);
        assert_eq!(exnode(0, &[]).coverage_holes(), vec![]);
    }

    #[test]
    fn resolve_examples() {
        let x = exnode(8, &[(0, 4, 0), (4, 4, 0)]);
        let plan = x.resolve(2, 4).unwrap();
        assert_eq!(
            plan,
            vec![
                Segment { start: 2, length: 2, alternatives: vec![Alternative { mapping: 0, alloc_offset: 2, length: 2 }] },
                Segment { start: 4, length: 2, alternatives: vec![Alternative { mapping: 1, alloc_offset: 0, length: 2 }] },
            ]
        );

        let x = exnode(4, &[(0, 4, 1), (0, 4, 0)]);
        let plan = x.resolve(0, 4).unwrap();
        assert_eq!(plan.len(), 1);
        let ranked: Vec<usize> = plan[0].alternatives.iter().map(|a| a.mapping).collect();
        assert_eq!(ranked, vec![1, 0]);

        let x = exnode(10, &[(0, 4, 0), (6, 4, 0)]);
        assert_eq!(x.resolve(0, 10).unwrap_err().code, ErrorCode::Hole);
        assert_eq!(x.resolve(8, 3).unwrap_err().code, ErrorCode::Range);
    }

    #[test]
    fn schema_errors() {
        let x = exnode(4, &[(0, 4, 0)]);
        let doc = String::from_utf8(x.serialize()).unwrap();
        let missing = doc.replace("\"logical_length\":4,", "");
        assert_eq!(ExNode::deserialize(missing.as_bytes()).unwrap_err().code, ErrorCode::Proto);
        let v2 = doc.replace("\"version\":1", "\"version\":2");
        assert_eq!(ExNode::deserialize(v2.as_bytes()).unwrap_err().code, ErrorCode::Proto);
        let extra = doc.replacen('{', "{\"owner\":\"x\",", 1);
        assert_eq!(ExNode::deserialize(extra.as_bytes()).unwrap_err().code, ErrorCode::Proto);
    }

    #[test]
    fn serialized_form_is_canonical() {
        let mut x = exnode(4, &[(0, 4, 0)]);
        x.attributes.insert("z".into(), "1".into());
        x.attributes.insert("a".into(), "2".into());
        let s = String::from_utf8(x.serialize()).unwrap();
        assert!(s.starts_with("{\"attributes\":{\"a\":\"2\",\"z\":\"1\"},\"logical_length\":4,\"mappings\":[{\"alloc_offset\":0,"), "{s}");
        assert!(!s.contains(' '));
    }

    fn arb_exnode() -> impl Strategy<Value = ExNode> {
        (1u64..5000, prop::collection::vec((0u64..5000, 1u64..800, 0u32..3, 0u64..64, any::<bool>()), 0..12))
            .prop_map(|(len, maps)| {
                let mut x = ExNode::new(len);
                for (i, (o, l, r, ao, with_write)) in maps.into_iter().enumerate() {
                    let o = o % len;
                    let l = l.min(len - o).max(1);
                    let mut m = mapping(o, l, r, &format!("m{i}"));
                    m.alloc_offset = ao;
                    if with_write {
                        m.caps.write = Some(cap(&format!("m{i}"), CapKind::Write));
                        m.digest = Some(format!("{i:064x}"));
                    }
                    x.mappings.push(m);
                }
                x.attributes.insert("sha256".into(), "00".into());
                x
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trips(x in arb_exnode()) {
            let bytes = x.serialize();
            let back = ExNode::deserialize(&bytes).unwrap();
            prop_assert_eq!(&back, &x);
            prop_assert_eq!(back.serialize(), bytes);
        }

        #[test]
        fn holes_match_byte_oracle(x in arb_exnode()) {
            let n = x.logical_length as usize;
            let mut covered = vec![false; n];
            for m in &x.mappings {
                for b in m.logical_offset..m.end() {
                    covered[b as usize] = true;
                }
            }
            let mut oracle = Vec::new();
            let mut i = 0;
            while i < n {
                if covered[i] {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < n && !covered[i] {
                    i += 1;
                }
                oracle.push((start as u64, i as u64));
            }
            prop_assert_eq!(x.coverage_holes(), oracle);
        }

        #[test]
        fn resolve_partitions_request(x in arb_exnode(), a in 0u64..5000, b in 0u64..5000) {
            let (lo, hi) = (a.min(b) % (x.logical_length + 1), a.max(b) % (x.logical_length + 1));
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let holed = x.coverage_holes().iter().any(|&(s, e)| s < hi && e > lo);
            match x.resolve(lo, hi - lo) {
                Err(e) => prop_assert!(holed && e.code == ErrorCode::Hole),
                Ok(plan) => {
                    prop_assert!(!holed);
                    let mut cursor = lo;
                    for seg in &plan {
                        prop_assert_eq!(seg.start, cursor);
                        cursor += seg.length;
                        for alt in &seg.alternatives {
                            let m = &x.mappings[alt.mapping];
                            prop_assert!(m.logical_offset <= seg.start && m.end() >= seg.start + seg.length);
                            prop_assert_eq!(alt.alloc_offset, m.alloc_offset + seg.start - m.logical_offset);
                        }
                        // Every covering mapping is listed.
                        let covering = x.mappings.iter().filter(|m| m.logical_offset <= seg.start && m.end() >= seg.start + seg.length).count();
                        prop_assert_eq!(covering, seg.alternatives.len());
                    }
                    prop_assert_eq!(cursor, hi);
                }
            }
        }
    }
}
