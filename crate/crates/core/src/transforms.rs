//! Node-local buffer transformations invoked through TRANSFORM.
//!
//! Operations are looked up by `<family>/<op>` name in a per-depot
//! [`Registry`]. Nothing is shipped with a request except the name and a
//! parameter map; every implementation lives in the depot.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{EbpError, Result};
use crate::wire::{is_valid_op_name, Params};

pub const PARITY_XOR: &str = "parity/xor";
pub const DIGEST_SHA256: &str = "digest/sha256";
pub const COPY_RANGE: &str = "copy/range";
pub const DGRAM_FORWARD: &str = "dgram/forward";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn admits(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    /// `None` means no default; the operation decides whether it is required.
    pub default: Option<u64>,
}

impl ParamSpec {
    pub fn required(name: &str) -> Self {
        ParamSpec { name: name.to_owned(), default: None }
    }

    pub fn optional(name: &str, default: u64) -> Self {
        ParamSpec { name: name.to_owned(), default: Some(default) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSpec {
    pub name: String,
    pub inputs: Arity,
    pub outputs: usize,
    pub params: Vec<ParamSpec>,
    /// Outputs depend only on inputs and params.
    pub pure: bool,
}

/// The distinct allocations touched by one transform, plus the mapping from
/// input and output positions onto them. One allocation may appear as both
/// an input and an output.
pub struct Buffers<'a> {
    slots: Vec<&'a mut [u8]>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
}

impl<'a> Buffers<'a> {
    pub fn new(slots: Vec<&'a mut [u8]>, inputs: Vec<usize>, outputs: Vec<usize>) -> Self {
        assert!(inputs.iter().chain(&outputs).all(|&i| i < slots.len()));
        Buffers { slots, inputs, outputs }
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn input(&self, i: usize) -> &[u8] {
        self.slots[self.inputs[i]]
    }

    pub fn output(&mut self, j: usize) -> &mut [u8] {
        self.slots[self.outputs[j]]
    }

    pub fn output_len(&self, j: usize) -> usize {
        self.slots[self.outputs[j]].len()
    }

    /// True when input `i` and output `j` are the same allocation.
    pub fn aliases(&self, i: usize, j: usize) -> bool {
        self.inputs[i] == self.outputs[j]
    }
}

pub trait TransformOp: Send + Sync {
    /// Run the operation; returns one count per output.
    fn apply(&self, bufs: &mut Buffers<'_>, params: &ResolvedParams) -> Result<Vec<u64>>;
}

/// Params after defaults are applied and unknown names rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResolvedParams(BTreeMap<String, u64>);

impl ResolvedParams {
    pub fn resolve(spec: &TransformSpec, raw: &Params) -> Result<Self> {
        if let Some(unknown) = raw.keys().find(|k| !spec.params.iter().any(|p| &p.name == *k)) {
            return Err(EbpError::proto(format!("{} has no parameter {unknown:?}", spec.name)));
        }
        let mut out = BTreeMap::new();
        for p in &spec.params {
            match raw.get(&p.name) {
                Some(Value::Number(n)) => {
                    let v = n.as_u64().ok_or_else(|| {
                        EbpError::proto(format!("parameter {} must be a non-negative integer", p.name))
                    })?;
                    out.insert(p.name.clone(), v);
                }
                Some(_) => {
                    return Err(EbpError::proto(format!("parameter {} must be an integer", p.name)));
                }
                None => {
                    if let Some(d) = p.default {
                        out.insert(p.name.clone(), d);
                    }
                }
            }
        }
        Ok(ResolvedParams(out))
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.0.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<u64> {
        self.get(name)
            .ok_or_else(|| EbpError::proto(format!("missing required parameter {name}")))
    }
}

#[derive(Clone)]
struct Entry {
    spec: TransformSpec,
    op: Arc<dyn TransformOp>,
}

#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.entries.keys()).finish()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// Registry holding the four builtin operations.
    pub fn with_builtins() -> Self {
        let length = ParamSpec { name: "length".into(), default: None };
        let builtins: [(TransformSpec, Arc<dyn TransformOp>); 4] = [
            (
                TransformSpec {
                    name: PARITY_XOR.into(),
                    inputs: Arity::AtLeast(1),
                    outputs: 1,
                    params: vec![length.clone()],
                    pure: true,
                },
                Arc::new(ParityXor),
            ),
            (
                TransformSpec {
                    name: DIGEST_SHA256.into(),
                    inputs: Arity::Exact(1),
                    outputs: 1,
                    params: vec![ParamSpec::optional("offset", 0), length],
                    pure: true,
                },
                Arc::new(DigestSha256),
            ),
            (
                TransformSpec {
                    name: COPY_RANGE.into(),
                    inputs: Arity::Exact(1),
                    outputs: 1,
                    params: vec![
                        ParamSpec::optional("src_off", 0),
                        ParamSpec::optional("dst_off", 0),
                        ParamSpec::required("length"),
                    ],
                    pure: true,
                },
                Arc::new(CopyRange),
            ),
            (
                TransformSpec {
                    name: DGRAM_FORWARD.into(),
                    inputs: Arity::Exact(1),
                    outputs: 1,
                    params: vec![ParamSpec::optional("ttl_offset", 0)],
                    pure: true,
                },
                Arc::new(DgramForward),
            ),
        ];
        let mut r = Registry::empty();
        for (spec, op) in builtins {
            r.register(spec, op).expect("builtin names are distinct");
        }
        r
    }

    pub fn register(&mut self, spec: TransformSpec, op: Arc<dyn TransformOp>) -> Result<()> {
        if !is_valid_op_name(&spec.name) {
            return Err(EbpError::op(format!("invalid operation name {:?}", spec.name)));
        }
        if self.entries.contains_key(&spec.name) {
            return Err(EbpError::op(format!("{} is already registered", spec.name)));
        }
        self.entries.insert(spec.name.clone(), Entry { spec, op });
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Result<&TransformSpec> {
        self.entries
            .get(name)
            .map(|e| &e.spec)
            .ok_or_else(|| EbpError::op(format!("no operation {name:?} on this depot")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub(crate) fn resolve(&self, name: &str) -> Result<(&TransformSpec, Arc<dyn TransformOp>)> {
        self.entries
            .get(name)
            .map(|e| (&e.spec, Arc::clone(&e.op)))
            .ok_or_else(|| EbpError::op(format!("no operation {name:?} on this depot")))
    }

    /// Check arity, resolve params and run.
    pub fn apply(&self, name: &str, bufs: &mut Buffers<'_>, raw: &Params) -> Result<Vec<u64>> {
        let (spec, op) = self.resolve(name)?;
        check_arity(spec, bufs.n_inputs(), bufs.n_outputs())?;
        let params = ResolvedParams::resolve(spec, raw)?;
        op.apply(bufs, &params)
    }
}

pub fn check_arity(spec: &TransformSpec, n_in: usize, n_out: usize) -> Result<()> {
    if !spec.inputs.admits(n_in) || n_out != spec.outputs {
        return Err(EbpError::arity(format!(
            "{} takes {} inputs and {} outputs, got {n_in} and {n_out}",
            spec.name, spec.inputs, spec.outputs
        )));
    }
    Ok(())
}

/// XOR the first `len` bytes of every block together.
pub fn xor_blocks(blocks: &[&[u8]], len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    for b in blocks {
        for (o, x) in out.iter_mut().zip(&b[..len]) {
            *o ^= x;
        }
    }
    out
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

fn range(off: u64, len: u64, size: usize, what: &str) -> Result<std::ops::Range<usize>> {
    match off.checked_add(len) {
        Some(end) if end <= size as u64 => Ok(off as usize..end as usize),
        _ => Err(EbpError::range(format!(
            "{what} range {off}+{len} exceeds buffer of {size} bytes"
        ))),
    }
}

struct ParityXor;

impl TransformOp for ParityXor {
    fn apply(&self, bufs: &mut Buffers<'_>, params: &ResolvedParams) -> Result<Vec<u64>> {
        let len = match params.get("length") {
            Some(l) => l as usize,
            None => {
                let l = bufs.input(0).len();
                if (1..bufs.n_inputs()).any(|i| bufs.input(i).len() != l) {
                    return Err(EbpError::range("parity inputs differ in length"));
                }
                l
            }
        };
        for i in 0..bufs.n_inputs() {
            if bufs.input(i).len() < len {
                return Err(EbpError::range(format!(
                    "parity input {i} holds {} bytes, need {len}",
                    bufs.input(i).len()
                )));
            }
        }
        if bufs.output_len(0) < len {
            return Err(EbpError::range(format!("parity output smaller than {len} bytes")));
        }
        let inputs: Vec<&[u8]> = (0..bufs.n_inputs()).map(|i| bufs.input(i)).collect();
        let parity = xor_blocks(&inputs, len);
        bufs.output(0)[..len].copy_from_slice(&parity);
        Ok(vec![len as u64])
    }
}

struct DigestSha256;

impl TransformOp for DigestSha256 {
    fn apply(&self, bufs: &mut Buffers<'_>, params: &ResolvedParams) -> Result<Vec<u64>> {
        let input_len = bufs.input(0).len();
        let offset = params.get("offset").unwrap_or(0);
        let length = match params.get("length") {
            Some(l) => l,
            None => (input_len as u64)
                .checked_sub(offset)
                .ok_or_else(|| EbpError::range("digest offset beyond end of input"))?,
        };
        let r = range(offset, length, input_len, "digest input")?;
        if bufs.output_len(0) < 32 {
            return Err(EbpError::range("digest output must hold 32 bytes"));
        }
        let digest = Sha256::digest(&bufs.input(0)[r]);
        bufs.output(0)[..32].copy_from_slice(&digest);
        Ok(vec![32])
    }
}

struct CopyRange;

impl TransformOp for CopyRange {
    fn apply(&self, bufs: &mut Buffers<'_>, params: &ResolvedParams) -> Result<Vec<u64>> {
        let src_off = params.require("src_off")?;
        let dst_off = params.require("dst_off")?;
        let length = params.require("length")?;
        let src = range(src_off, length, bufs.input(0).len(), "copy source")?;
        let dst = range(dst_off, length, bufs.output_len(0), "copy destination")?;
        if length == 0 {
            return Ok(vec![0]);
        }
        if bufs.aliases(0, 0) && src.start < dst.end && dst.start < src.end {
            return Err(EbpError::overlap("source and destination ranges overlap"));
        }
        let bytes = bufs.input(0)[src].to_vec();
        bufs.output(0)[dst].copy_from_slice(&bytes);
        Ok(vec![length])
    }
}

struct DgramForward;

impl TransformOp for DgramForward {
    fn apply(&self, bufs: &mut Buffers<'_>, params: &ResolvedParams) -> Result<Vec<u64>> {
        if !bufs.aliases(0, 0) {
            return Err(EbpError::arity(
                "dgram/forward needs its input and output to name the same allocation",
            ));
        }
        let at = params.require("ttl_offset")?;
        let size = bufs.input(0).len();
        if at >= size as u64 {
            return Err(EbpError::range(format!("ttl offset {at} outside {size}-byte buffer")));
        }
        let at = at as usize;
        let ttl = bufs.input(0)[at];
        if ttl == 0 {
            return Err(EbpError::ttl("time to live exhausted"));
        }
        bufs.output(0)[at] = ttl - 1;
        Ok(vec![u64::from(ttl - 1)])
    }
}
