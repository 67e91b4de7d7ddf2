use std::hint::black_box;
use std::io::Cursor;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ebp_core::exnode::MappingCaps;
use ebp_core::transforms::{sha256_hex, xor_blocks};
use ebp_core::wire::{decode_request, encode_request, Request};
use ebp_core::{AdjacencyGraph, Depot, DepotConfig, ExNode, Mapping, SimClock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_bytes(n: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; n];
    ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

fn local_depot() -> Depot {
    let cfg = DepotConfig::new("b0", "127.0.0.1:9").with_caps(1 << 20, 256 << 20, 3600);
    Depot::new(cfg, Arc::new(SimClock::new(0))).unwrap().with_seed(7)
}

fn xor(c: &mut Criterion) {
    let mut g = c.benchmark_group("xor");
    for k in [2usize, 4, 8] {
        let blocks: Vec<Vec<u8>> = (0..k).map(|i| random_bytes(64 << 10, i as u64)).collect();
        let refs: Vec<&[u8]> = blocks.iter().map(Vec::as_slice).collect();
        g.throughput(Throughput::Bytes((k * (64 << 10)) as u64));
        g.bench_with_input(BenchmarkId::from_parameter(k), &refs, |b, refs| {
            b.iter(|| xor_blocks(black_box(refs), 64 << 10))
        });
    }
    g.finish();
}

fn sha256(c: &mut Criterion) {
    let data = random_bytes(1 << 20, 1);
    let mut g = c.benchmark_group("sha256");
    g.throughput(Throughput::Bytes(data.len() as u64));
    g.bench_function("1MiB", |b| b.iter(|| sha256_hex(black_box(&data))));
    g.finish();
}

fn wire(c: &mut Criterion) {
    let depot = local_depot();
    let caps = depot.allocate(4096, 60).unwrap();
    let req = Request::Write { alloc_id: caps.write.alloc_id.clone(), key: caps.write.key, offset: 0, payload: random_bytes(4096, 2) };
    let frame = encode_request(&req);
    let mut g = c.benchmark_group("wire");
    g.throughput(Throughput::Bytes(frame.len() as u64));
    g.bench_function("encode_write_4k", |b| b.iter(|| encode_request(black_box(&req))));
    g.bench_function("decode_write_4k", |b| b.iter(|| decode_request(&mut Cursor::new(black_box(&frame))).unwrap()));
    g.finish();
}

fn depot_ops(c: &mut Criterion) {
    let depot = local_depot();
    let caps = depot.allocate(64 << 10, 3600).unwrap();
    let payload = random_bytes(64 << 10, 3);
    let mut g = c.benchmark_group("depot");
    g.throughput(Throughput::Bytes(payload.len() as u64));
    g.bench_function("write_64k", |b| b.iter(|| depot.write(&caps.write.alloc_id, &caps.write.key, 0, black_box(&payload)).unwrap()));
    g.bench_function("read_64k", |b| b.iter(|| depot.read(&caps.read.alloc_id, &caps.read.key, 0, 64 << 10).unwrap()));
    g.finish();
}

fn route(c: &mut Criterion) {
    let mut g = c.benchmark_group("route");
    for n in [16usize, 256] {
        let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let mut graph = AdjacencyGraph::new(nodes.iter().map(String::as_str));
        for i in 0..n {
            graph.add_edge(&nodes[i], &nodes[(i + 1) % n]).unwrap();
            graph.add_edge(&nodes[i], &nodes[(i * 7 + 3) % n]).unwrap();
        }
        g.bench_with_input(BenchmarkId::from_parameter(n), &graph, |b, graph| {
            b.iter(|| graph.route(black_box("n0"), black_box(&nodes[n - 1])).unwrap())
        });
    }
    g.finish();
}

fn exnode(c: &mut Criterion) {
    let depot = local_depot();
    let blocks = 256u64;
    let mut x = ExNode::new(blocks * 4096);
    for i in 0..blocks {
        let caps = depot.allocate(4096, 60).unwrap();
        x.mappings.push(Mapping {
            logical_offset: i * 4096,
            length: 4096,
            alloc_offset: 0,
            caps: MappingCaps { read: caps.read, write: Some(caps.write), manage: Some(caps.manage) },
            replica_index: 0,
            digest: None,
        });
    }
    let bytes = x.serialize();
    let mut g = c.benchmark_group("exnode");
    g.bench_function("serialize_256", |b| b.iter(|| black_box(&x).serialize()));
    g.bench_function("deserialize_256", |b| b.iter(|| ExNode::deserialize(black_box(&bytes)).unwrap()));
    g.bench_function("resolve_256", |b| b.iter(|| black_box(&x).resolve(1000, 500_000).unwrap()));
    g.finish();
}

criterion_group!(benches, xor, sha256, wire, depot_ops, route, exnode);
criterion_main!(benches);
