mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use common::xor_oracle;
use ebp_core::capability::{CapKind, Capability, Key};
use ebp_core::transforms::{Registry, PARITY_XOR};
use ebp_core::{Depot, DepotConfig, ErrorCode, SimClock};
use proptest::prelude::*;

const NODES: [&str; 6] = ["n0", "n1", "n2", "n3", "n4", "n5"];

fn depot(allowed: &BTreeSet<usize>) -> Depot {
    let mut cfg = DepotConfig::new("n0", "127.0.0.1:1").with_caps(4096, 65536, 3600);
    cfg.request_timeout_seconds = 1;
    for &i in allowed {
        // Port 1 on loopback refuses connections, so allowed transfers fail
        // with E_NET rather than E_ADJ.
        cfg = cfg.with_neighbor(NODES[i], "127.0.0.1:1");
    }
    Depot::new(cfg, Arc::new(SimClock::new(0))).unwrap()
}

fn arb_cap() -> impl Strategy<Value = Capability> {
    (
        "[a-z0-9-]{1,12}",
        prop_oneof![Just("127.0.0.1".to_owned()), Just("localhost".to_owned()), "[a-z]{1,8}(\\.[a-z]{1,8}){0,2}"],
        1u16..,
        "[A-Za-z0-9_-]{1,16}",
        any::<[u8; 16]>(),
        prop_oneof![Just(CapKind::Read), Just(CapKind::Write), Just(CapKind::Manage)],
    )
        .prop_map(|(node_id, host, port, alloc_id, key, kind)| Capability {
            node_id,
            endpoint: format!("{host}:{port}"),
            alloc_id,
            key: Key(key),
            kind,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn capability_uri_round_trips(c in arb_cap()) {
        prop_assert_eq!(Capability::parse(&c.to_uri()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transfers_respect_the_allowlist(allowed in proptest::collection::btree_set(1usize..6, 0..6), dst in 1usize..6) {
        let d = depot(&allowed);
        let src = d.allocate(8, 60).unwrap();
        let mut target = src.write.clone();
        target.node_id = NODES[dst].into();
        let err = d.transfer_out(&src.read.alloc_id, &src.read.key, &target, 0, 0, 8).unwrap_err();
        if allowed.contains(&dst) {
            prop_assert_eq!(err.code, ErrorCode::Net);
        } else {
            prop_assert_eq!(err.code, ErrorCode::Adj);
        }
    }

    #[test]
    fn xor_matches_byte_loop(blocks in (1usize..6, 0usize..200).prop_flat_map(|(k, len)| proptest::collection::vec(proptest::collection::vec(any::<u8>(), len), k))) {
        let clock = SimClock::new(0);
        let d = Depot::new(DepotConfig::new("n0", "127.0.0.1:1"), Arc::new(clock)).unwrap().with_registry(Registry::with_builtins());
        let len = blocks[0].len().max(1) as u64;
        let mut inputs = Vec::new();
        for b in &blocks {
            let c = d.allocate(len, 60).unwrap();
            d.write(&c.write.alloc_id, &c.write.key, 0, b).unwrap();
            inputs.push(c.read);
        }
        let out = d.allocate(len, 60).unwrap();
        let mut params = ebp_core::wire::Params::new();
        params.insert("length".into(), (blocks[0].len() as u64).into());
        d.transform(PARITY_XOR, &inputs, std::slice::from_ref(&out.write), &params).unwrap();
        let got = d.read(&out.read.alloc_id, &out.read.key, 0, blocks[0].len() as u64).unwrap();
        prop_assert_eq!(got, xor_oracle(&blocks));
    }

    #[test]
    fn xor_recovers_any_member(blocks in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 64), 2..6), lost in 0usize..6) {
        let lost = lost % blocks.len();
        let parity = xor_oracle(&blocks);
        let mut survivors: Vec<Vec<u8>> = blocks.iter().enumerate().filter(|(i, _)| *i != lost).map(|(_, b)| b.clone()).collect();
        survivors.push(parity);
        prop_assert_eq!(&xor_oracle(&survivors), &blocks[lost]);
    }

    #[test]
    fn write_read_identity(size in 1u64..4096, offset in 0u64..4096, payload in proptest::collection::vec(any::<u8>(), 0..512)) {
        let d = Depot::new(DepotConfig::new("n0", "127.0.0.1:1"), Arc::new(SimClock::new(0))).unwrap();
        let c = d.allocate(size, 60).unwrap();
        let fits = offset + payload.len() as u64 <= size;
        match d.write(&c.write.alloc_id, &c.write.key, offset, &payload) {
            Ok(n) => {
                prop_assert!(fits);
                prop_assert_eq!(n, payload.len() as u64);
                prop_assert_eq!(d.read(&c.read.alloc_id, &c.read.key, offset, n).unwrap(), payload);
            }
            Err(e) => {
                prop_assert!(!fits);
                prop_assert_eq!(e.code, ErrorCode::Range);
            }
        }
    }

    #[test]
    fn capacity_is_conserved(ops in proptest::collection::vec((0u8..4, 1u64..3000, 1u64..50), 1..80)) {
        let clock = SimClock::new(0);
        let d = Depot::new(DepotConfig::new("n0", "127.0.0.1:1").with_caps(4096, 16384, 100), Arc::new(clock.clone())).unwrap();
        let mut live: Vec<(ebp_core::CapabilitySet, u64, u64)> = Vec::new();
        for (op, size, dur) in ops {
            match op {
                0 | 1 => {
                    if let Ok(c) = d.allocate(size, dur) {
                        live.push((c, size, clock.advance(0) + dur));
                    }
                }
                2 if !live.is_empty() => {
                    let (c, _, _) = live.remove(size as usize % live.len());
                    let _ = d.manage(&c.manage.alloc_id, &c.manage.key, ebp_core::wire::ManageAction::Release);
                }
                _ => {
                    let now = clock.advance(dur % 20);
                    d.expire_sweep(now);
                }
            }
            let now = clock.advance(0);
            live.retain(|(_, _, exp)| *exp > now);
            let expected: u64 = live.iter().map(|(_, s, _)| s).sum();
            prop_assert!(d.live_bytes() <= 16384);
            // Unswept expired allocations may still count; swept ones never do.
            d.expire_sweep(now);
            prop_assert_eq!(d.live_bytes(), expected);
        }
    }
}
