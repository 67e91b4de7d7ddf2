//! Oracles and fixtures shared by the integration suites and the
//! acceptance runner. Everything here is written independently of the
//! library code it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::panic;
use std::path::PathBuf;

use ebp_core::capability::{CapKind, Capability, Key};
use ebp_core::error::{EbpError, ErrorCode};
use ebp_core::wire::{decode_request, decode_response, ManageAction, Params, Request, Response, ResponseShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn fixture(path: &str) -> Vec<u8> {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", path].iter().collect();
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn cap(ep: &str, node: &str, alloc: &str, key: [u8; 16], kind: CapKind) -> Capability {
    Capability { node_id: node.into(), endpoint: ep.into(), alloc_id: alloc.into(), key: Key(key), kind }
}

const K0: [u8; 16] = [0; 16];
const KF: [u8; 16] = [0xFF; 16];
const K1: [u8; 16] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15];

fn params(pairs: &[(&str, u64)]) -> Params {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), (*v).into())).collect()
}

/// Request fixtures and the values they encode.
pub fn golden_requests() -> Vec<(&'static str, Request)> {
    let a = cap("127.0.0.1:6714", "d1", "AAAAAAAA", K0, CapKind::Read);
    let b = cap("127.0.0.1:6714", "d1", "BBBBBBBB", K1, CapKind::Read);
    let p = cap("127.0.0.1:6714", "d1", "CCCCCCCC", KF, CapKind::Write);
    let d = cap("127.0.0.1:6715", "d2", "DDDDDDDD", KF, CapKind::Write);
    let id = || "AAAAAAAA".to_owned();
    vec![
        ("allocate", Request::Allocate { size: 1024, duration: 60 }),
        ("write", Request::Write { alloc_id: id(), key: Key(K0), offset: 0, payload: b"abc".to_vec() }),
        ("write_empty", Request::Write { alloc_id: id(), key: Key(K0), offset: 7, payload: Vec::new() }),
        ("read", Request::Read { alloc_id: id(), key: Key(K0), offset: 16, length: 4 }),
        ("manage_probe", Request::Manage { alloc_id: id(), key: Key(KF), action: ManageAction::Probe }),
        ("manage_extend", Request::Manage { alloc_id: id(), key: Key(KF), action: ManageAction::Extend(120) }),
        ("manage_release", Request::Manage { alloc_id: id(), key: Key(KF), action: ManageAction::Release }),
        (
            "transfer",
            Request::Transfer { src_alloc_id: id(), src_key: Key(K0), dst: d, src_offset: 0, dst_offset: 8, length: 1024 },
        ),
        (
            "transform_xor",
            Request::Transform {
                op_name: "parity/xor".into(),
                inputs: vec![a.clone(), b],
                outputs: vec![p.clone()],
                params: params(&[("length", 1)]),
            },
        ),
        (
            "transform_empty_params",
            Request::Transform {
                op_name: "digest/sha256".into(),
                inputs: vec![a.clone()],
                outputs: vec![p.clone()],
                params: Params::new(),
            },
        ),
        (
            "transform_sorted_params",
            Request::Transform {
                op_name: "copy/range".into(),
                inputs: vec![a],
                outputs: vec![p],
                params: params(&[("src_off", 0), ("length", 8), ("dst_off", 4)]),
            },
        ),
    ]
}

pub const ERROR_MESSAGE_RANGE: &str = "offset+length exceeds size_limit";

/// Response fixtures, the shape to decode them with and their values.
pub fn golden_responses() -> Vec<(String, ResponseShape, Response)> {
    let ok = |t: &[&str]| Response::Ok(t.iter().map(|s| s.to_string()).collect());
    let allocate = [
        cap("127.0.0.1:6714", "d1", "AAAAAAAA", K0, CapKind::Read).to_uri(),
        cap("127.0.0.1:6714", "d1", "CCCCCCCC", KF, CapKind::Write).to_uri(),
        cap("127.0.0.1:6714", "d1", "AAAAAAAA", K1, CapKind::Manage).to_uri(),
    ];
    let mut v = vec![
        ("ok_allocate".to_owned(), ResponseShape::Tokens, Response::Ok(allocate.to_vec())),
        ("ok_write".into(), ResponseShape::Tokens, ok(&["3"])),
        ("ok_read".into(), ResponseShape::Data, Response::Data(vec![0x00, 0x01, 0xFE, 0xFF])),
        ("ok_read_empty".into(), ResponseShape::Data, Response::Data(Vec::new())),
        ("ok_manage".into(), ResponseShape::Tokens, ok(&["1024", "60", "ACTIVE"])),
        ("ok_manage_released".into(), ResponseShape::Tokens, ok(&["1024", "60", "RELEASED"])),
        ("ok_transfer".into(), ResponseShape::Tokens, ok(&["1024"])),
        ("ok_transform".into(), ResponseShape::Tokens, ok(&["1"])),
        ("ok_transform_two_outputs".into(), ResponseShape::Tokens, ok(&["32", "32"])),
    ];
    for code in ErrorCode::ALL {
        let name = code.as_str().trim_start_matches("E_").to_lowercase();
        let msg = if code == ErrorCode::Range { ERROR_MESSAGE_RANGE.to_owned() } else { format!("example {name} failure") };
        for shape in [ResponseShape::Tokens, ResponseShape::Data] {
            v.push((format!("err_{}", code.as_str()), shape, Response::Err(EbpError::new(code, msg.clone()))));
        }
    }
    v
}

/// Byte-loop XOR of equal-length blocks.
pub fn xor_oracle(blocks: &[Vec<u8>]) -> Vec<u8> {
    let len = blocks.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        let mut b = 0u8;
        for blk in blocks {
            b ^= blk[i];
        }
        out.push(b);
    }
    out
}

/// Fewest hops, then lexicographically smallest node sequence, found by
/// enumerating every simple path.
pub fn route_oracle(edges: &BTreeSet<(String, String)>, src: &str, dst: &str) -> Option<Vec<String>> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    let mut best: Option<Vec<String>> = None;
    let mut stack = vec![src.to_owned()];
    fn walk<'a>(
        adj: &BTreeMap<&'a str, Vec<&'a str>>,
        dst: &str,
        path: &mut Vec<String>,
        best: &mut Option<Vec<String>>,
    ) {
        let at = path.last().unwrap().clone();
        if at == dst {
            let better = match best {
                None => true,
                Some(b) => (path.len(), &*path) < (b.len(), &*b),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        if best.as_ref().is_some_and(|b| path.len() >= b.len()) {
            return;
        }
        for &n in adj.get(at.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if !path.iter().any(|p| p == n) {
                path.push(n.to_owned());
                walk(adj, dst, path, best);
                path.pop();
            }
        }
    }
    walk(&adj, dst, &mut stack, &mut best);
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatagramOutcome {
    Delivered { final_ttl: u8, ttl_at_hop: Vec<u8> },
    Dropped { at: usize, ttl_at_hop: Vec<u8> },
}

/// Walk a frame along `nodes` path positions with a decrementing counter.
pub fn datagram_oracle(ttl: u8, nodes: usize) -> DatagramOutcome {
    let mut counter = ttl;
    let mut seen = vec![counter];
    for hop in 0..nodes.saturating_sub(1) {
        if counter == 0 {
            return DatagramOutcome::Dropped { at: hop, ttl_at_hop: seen };
        }
        counter -= 1;
        seen.push(counter);
    }
    DatagramOutcome::Delivered { final_ttl: counter, ttl_at_hop: seen }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FuzzTally {
    pub frames: usize,
    pub decoded: usize,
    pub rejected: usize,
    pub panics: usize,
}

/// Decode `n` random and mutated frames as requests and responses,
/// counting panics.
pub fn fuzz_decode(n: usize, seed: u64) -> FuzzTally {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut seeds: Vec<Vec<u8>> = golden_requests().iter().map(|(name, _)| fixture(&format!("wire/requests/{name}.bin"))).collect();
    seeds.extend(golden_responses().iter().map(|(name, _, _)| fixture(&format!("wire/responses/{name}.bin"))));
    let tokens: [&[u8]; 12] =
        [b" ", b"\n", b"0", b"18446744073709551616", b"EBP/0.1", b"ebp://", b"/", b"{", b"}", b"-1", b"00", b"\xff"];

    let prev = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut tally = FuzzTally::default();
    for _ in 0..n {
        let frame = match rng.gen_range(0..4) {
            0 => {
                let len = rng.gen_range(0..64);
                (0..len).map(|_| rng.gen()).collect()
            }
            _ => {
                let mut f = seeds[rng.gen_range(0..seeds.len())].clone();
                for _ in 0..rng.gen_range(1..4) {
                    let pos = if f.is_empty() { 0 } else { rng.gen_range(0..f.len()) };
                    match rng.gen_range(0..5) {
                        0 if !f.is_empty() => f[pos] ^= 1 << rng.gen_range(0..8),
                        1 if !f.is_empty() => {
                            f.remove(pos);
                        }
                        2 => f.insert(pos, rng.gen()),
                        3 => f.truncate(pos),
                        _ => {
                            let t = tokens[rng.gen_range(0..tokens.len())];
                            f.splice(pos..pos, t.iter().copied());
                        }
                    }
                }
                f
            }
        };
        tally.frames += 1;
        let outcome = panic::catch_unwind(|| {
            let req = decode_request(&mut Cursor::new(&frame[..]));
            let tok = decode_response(&mut Cursor::new(&frame[..]), ResponseShape::Tokens);
            let data = decode_response(&mut Cursor::new(&frame[..]), ResponseShape::Data);
            matches!(req, Ok(Some(_))) || tok.is_ok() || data.is_ok()
        });
        match outcome {
            Ok(true) => tally.decoded += 1,
            Ok(false) => tally.rejected += 1,
            Err(_) => tally.panics += 1,
        }
    }
    panic::set_hook(prev);
    tally
}
