//! Framing for the depot RPC protocol.
//!
//! Every frame is one UTF-8 header line of space separated tokens terminated
//! by `\n`, optionally followed by a raw body whose length was declared in
//! the header:
//!
//! ```text
//! EBP/0.1 ALLOCATE <size> <duration>\n
//! EBP/0.1 WRITE <alloc_id> <key> <offset> <length>\n<length bytes>
//! EBP/0.1 READ <alloc_id> <key> <offset> <length>\n
//! EBP/0.1 MANAGE <alloc_id> <key> <PROBE|EXTEND|RELEASE> [<duration>]\n
//! EBP/0.1 TRANSFER <src_alloc_id> <src_key> <dst_cap_uri> <src_off> <dst_off> <length>\n
//! EBP/0.1 TRANSFORM <op_name> <n_in> <n_out> <cap_uri>... <params_length>\n<params>
//! OK [tokens...]\n            OK <n>\n<n bytes>            ERR <code> <message>\n
//! ```

use std::io::{BufRead, Read, Write};

use serde_json::{Map, Value};

use crate::capability::{is_valid_alloc_id, Capability, Key};
use crate::error::{EbpError, ErrorCode, Result};

pub const PROTOCOL_TAG: &str = "EBP/0.1";
/// Maximum header line length, terminator included.
pub const MAX_HEADER_LEN: usize = 4096;
pub const MAX_BODY_LEN: u64 = 256 << 20;
/// Upper bound on capabilities named by one TRANSFORM.
pub const MAX_TRANSFORM_CAPS: usize = 64;

pub type Params = Map<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManageAction {
    Probe,
    Extend(u64),
    Release,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Allocate {
        size: u64,
        duration: u64,
    },
    Write {
        alloc_id: String,
        key: Key,
        offset: u64,
        payload: Vec<u8>,
    },
    Read {
        alloc_id: String,
        key: Key,
        offset: u64,
        length: u64,
    },
    Manage {
        alloc_id: String,
        key: Key,
        action: ManageAction,
    },
    Transfer {
        src_alloc_id: String,
        src_key: Key,
        dst: Capability,
        src_offset: u64,
        dst_offset: u64,
        length: u64,
    },
    Transform {
        op_name: String,
        inputs: Vec<Capability>,
        outputs: Vec<Capability>,
        params: Params,
    },
}

impl Request {
    pub fn verb(&self) -> &'static str {
        match self {
            Request::Allocate { .. } => "ALLOCATE",
            Request::Write { .. } => "WRITE",
            Request::Read { .. } => "READ",
            Request::Manage { .. } => "MANAGE",
            Request::Transfer { .. } => "TRANSFER",
            Request::Transform { .. } => "TRANSFORM",
        }
    }

    /// Shape of the success response this request expects.
    pub fn response_shape(&self) -> ResponseShape {
        match self {
            Request::Read { .. } => ResponseShape::Data,
            _ => ResponseShape::Tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseShape {
    Tokens,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    /// `OK tok tok...\n`
    Ok(Vec<String>),
    /// `OK <n>\n` followed by n bytes.
    Data(Vec<u8>),
    Err(EbpError),
}

impl From<EbpError> for Response {
    fn from(e: EbpError) -> Self {
        Response::Err(e)
    }
}

/// Serialize params as canonical JSON: sorted keys, no whitespace.
pub fn canonical_params(params: &Params) -> Vec<u8> {
    // serde_json's Map is ordered by key.
    serde_json::to_vec(params).expect("serializing a JSON map cannot fail")
}

pub fn encode_request(req: &Request) -> Vec<u8> {
    let mut out = Vec::new();
    write_request(&mut out, req).expect("writing to a Vec cannot fail");
    out
}

pub fn write_request<W: Write>(w: &mut W, req: &Request) -> std::io::Result<()> {
    let mut head = format!("{PROTOCOL_TAG} {}", req.verb());
    let mut body: Option<Vec<u8>> = None;
    match req {
        Request::Allocate { size, duration } => {
            head += &format!(" {size} {duration}");
        }
        Request::Write { alloc_id, key, offset, payload } => {
            head += &format!(" {alloc_id} {} {offset} {}", key.to_b64(), payload.len());
        }
        Request::Read { alloc_id, key, offset, length } => {
            head += &format!(" {alloc_id} {} {offset} {length}", key.to_b64());
        }
        Request::Manage { alloc_id, key, action } => {
            head += &format!(" {alloc_id} {}", key.to_b64());
            match action {
                ManageAction::Probe => head += " PROBE",
                ManageAction::Extend(d) => head += &format!(" EXTEND {d}"),
                ManageAction::Release => head += " RELEASE",
            }
        }
        Request::Transfer { src_alloc_id, src_key, dst, src_offset, dst_offset, length } => {
            head += &format!(
                " {src_alloc_id} {} {} {src_offset} {dst_offset} {length}",
                src_key.to_b64(),
                dst.to_uri()
            );
        }
        Request::Transform { op_name, inputs, outputs, params } => {
            head += &format!(" {op_name} {} {}", inputs.len(), outputs.len());
            for cap in inputs.iter().chain(outputs) {
                head.push(' ');
                head += &cap.to_uri();
            }
            let p = canonical_params(params);
            head += &format!(" {}", p.len());
            body = Some(p);
        }
    }
    head.push('\n');
    w.write_all(head.as_bytes())?;
    if let Request::Write { payload, .. } = req {
        w.write_all(payload)?;
    }
    if let Some(body) = body {
        w.write_all(&body)?;
    }
    Ok(())
}

/// Decode one request frame. Returns `Ok(None)` on a clean end of stream
/// before any byte of a new frame.
pub fn decode_request<R: BufRead>(r: &mut R) -> Result<Option<Request>> {
    let Some(line) = read_header(r)? else {
        return Ok(None);
    };
    let mut toks = Tokens::new(&line)?;
    let tag = toks.next("protocol tag")?;
    if tag != PROTOCOL_TAG {
        return Err(EbpError::proto(format!("unsupported protocol tag {tag:?}")));
    }
    let verb = toks.next("verb")?;
    let req = match verb {
        "ALLOCATE" => {
            let size = toks.int("size")?;
            let duration = toks.int("duration")?;
            toks.finish()?;
            Request::Allocate { size, duration }
        }
        "WRITE" => {
            let alloc_id = toks.alloc_id()?;
            let key = toks.key()?;
            let offset = toks.int("offset")?;
            let length = toks.int("length")?;
            toks.finish()?;
            let payload = read_body(r, length)?;
            Request::Write { alloc_id, key, offset, payload }
        }
        "READ" => {
            let alloc_id = toks.alloc_id()?;
            let key = toks.key()?;
            let offset = toks.int("offset")?;
            let length = toks.int("length")?;
            toks.finish()?;
            Request::Read { alloc_id, key, offset, length }
        }
        "MANAGE" => {
            let alloc_id = toks.alloc_id()?;
            let key = toks.key()?;
            let action = match toks.next("manage action")? {
                "PROBE" => ManageAction::Probe,
                "EXTEND" => ManageAction::Extend(toks.int("duration")?),
                "RELEASE" => ManageAction::Release,
                other => return Err(EbpError::proto(format!("unknown manage action {other:?}"))),
            };
            toks.finish()?;
            Request::Manage { alloc_id, key, action }
        }
        "TRANSFER" => {
            let src_alloc_id = toks.alloc_id()?;
            let src_key = toks.key()?;
            let dst = Capability::parse(toks.next("destination capability")?)?;
            let src_offset = toks.int("source offset")?;
            let dst_offset = toks.int("destination offset")?;
            let length = toks.int("length")?;
            toks.finish()?;
            Request::Transfer { src_alloc_id, src_key, dst, src_offset, dst_offset, length }
        }
        "TRANSFORM" => {
            let op_name = toks.next("operation name")?.to_owned();
            if !is_valid_op_name(&op_name) {
                return Err(EbpError::proto(format!("bad operation name {op_name:?}")));
            }
            let n_in = toks.int("input count")? as usize;
            let n_out = toks.int("output count")? as usize;
            if n_in.saturating_add(n_out) > MAX_TRANSFORM_CAPS {
                return Err(EbpError::proto("too many capabilities in TRANSFORM"));
            }
            let mut caps = Vec::with_capacity(n_in + n_out);
            for _ in 0..n_in + n_out {
                caps.push(Capability::parse(toks.next("capability")?)?);
            }
            let params_len = toks.int("params length")?;
            toks.finish()?;
            let body = read_body(r, params_len)?;
            let params = match serde_json::from_slice::<Value>(&body) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(EbpError::proto("TRANSFORM params must be a JSON object")),
                Err(e) => return Err(EbpError::proto(format!("bad TRANSFORM params: {e}"))),
            };
            let outputs = caps.split_off(n_in);
            Request::Transform { op_name, inputs: caps, outputs, params }
        }
        other => return Err(EbpError::proto(format!("unknown verb {other:?}"))),
    };
    Ok(Some(req))
}

pub fn encode_response(resp: &Response) -> Vec<u8> {
    let mut out = Vec::new();
    write_response(&mut out, resp).expect("writing to a Vec cannot fail");
    out
}

pub fn write_response<W: Write>(w: &mut W, resp: &Response) -> std::io::Result<()> {
    match resp {
        Response::Ok(tokens) => {
            let mut line = String::from("OK");
            for t in tokens {
                line.push(' ');
                line += t;
            }
            line.push('\n');
            w.write_all(line.as_bytes())
        }
        Response::Data(bytes) => {
            w.write_all(format!("OK {}\n", bytes.len()).as_bytes())?;
            w.write_all(bytes)
        }
        Response::Err(e) => {
            let line = if e.message.is_empty() {
                format!("ERR {}\n", e.code)
            } else {
                format!("ERR {} {}\n", e.code, e.message)
            };
            w.write_all(line.as_bytes())
        }
    }
}

/// Decode one response frame of the given success shape.
pub fn decode_response<R: BufRead>(r: &mut R, shape: ResponseShape) -> Result<Response> {
    let line = read_header(r)?.ok_or_else(|| EbpError::net("connection closed before response"))?;
    if let Some(rest) = line.strip_prefix("ERR ") {
        let (code, message) = rest.split_once(' ').unwrap_or((rest, ""));
        let code: ErrorCode = code.parse()?;
        return Ok(Response::Err(EbpError::new(code, message)));
    }
    let mut toks = Tokens::new(&line)?;
    if toks.next("status")? != "OK" {
        return Err(EbpError::proto(format!("bad response status line {line:?}")));
    }
    match shape {
        ResponseShape::Tokens => Ok(Response::Ok(toks.rest())),
        ResponseShape::Data => {
            let n = toks.int("body length")?;
            toks.finish()?;
            Ok(Response::Data(read_body(r, n)?))
        }
    }
}

/// `<family>/<op>` built from `[a-z0-9._-]`.
pub fn is_valid_op_name(s: &str) -> bool {
    let ok = |p: &str| {
        !p.is_empty()
            && p.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || matches!(b, b'-' | b'_' | b'.'))
    };
    matches!(s.split_once('/'), Some((family, op)) if ok(family) && ok(op))
}

fn read_header<R: BufRead>(r: &mut R) -> Result<Option<String>> {
    let mut buf = Vec::new();
    r.by_ref()
        .take(MAX_HEADER_LEN as u64)
        .read_until(b'\n', &mut buf)
        .map_err(io_err)?;
    if buf.is_empty() {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return Err(if buf.len() >= MAX_HEADER_LEN {
            EbpError::proto(format!("header line exceeds {MAX_HEADER_LEN} bytes"))
        } else {
            EbpError::proto("truncated header line")
        });
    }
    buf.pop();
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| EbpError::proto("header line is not UTF-8"))
}

fn read_body<R: BufRead>(r: &mut R, len: u64) -> Result<Vec<u8>> {
    if len > MAX_BODY_LEN {
        return Err(EbpError::proto(format!("body length {len} exceeds {MAX_BODY_LEN}")));
    }
    let mut body = Vec::with_capacity(len.min(1 << 20) as usize);
    r.by_ref().take(len).read_to_end(&mut body).map_err(io_err)?;
    if body.len() as u64 != len {
        return Err(EbpError::proto(format!("truncated body: {} of {len} bytes", body.len())));
    }
    Ok(body)
}

fn io_err(e: std::io::Error) -> EbpError {
    EbpError::net(format!("i/o error: {e}"))
}

struct Tokens<'a> {
    iter: std::str::Split<'a, char>,
}

impl<'a> Tokens<'a> {
    fn new(line: &'a str) -> Result<Self> {
        if line.is_empty() {
            return Err(EbpError::proto("empty header line"));
        }
        if line.split(' ').any(str::is_empty) {
            return Err(EbpError::proto("tokens must be separated by single spaces"));
        }
        Ok(Tokens { iter: line.split(' ') })
    }

    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| EbpError::proto(format!("missing {what}")))
    }

    fn int(&mut self, what: &str) -> Result<u64> {
        let t = self.next(what)?;
        let canonical = !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()) && (t == "0" || !t.starts_with('0'));
        if !canonical {
            return Err(EbpError::proto(format!("{what} must be a decimal integer, got {t:?}")));
        }
        t.parse()
            .map_err(|_| EbpError::proto(format!("{what} out of range: {t}")))
    }

    fn alloc_id(&mut self) -> Result<String> {
        let t = self.next("allocation id")?;
        if !is_valid_alloc_id(t) {
            return Err(EbpError::proto(format!("bad allocation id {t:?}")));
        }
        Ok(t.to_owned())
    }

    fn key(&mut self) -> Result<Key> {
        Key::from_b64(self.next("key")?)
    }

    fn rest(self) -> Vec<String> {
        self.iter.map(str::to_owned).collect()
    }

    fn finish(mut self) -> Result<()> {
        match self.iter.next() {
            None => Ok(()),
            Some(t) => Err(EbpError::proto(format!("unexpected trailing token {t:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::KEY_LEN;
    use std::io::Cursor;

    fn decode(bytes: &[u8]) -> Result<Option<Request>> {
        decode_request(&mut Cursor::new(bytes))
    }

    #[test]
    fn allocate_renders_directly() {
        let r = Request::Allocate { size: 1024, duration: 60 };
        assert_eq!(encode_request(&r), b"EBP/0.1 ALLOCATE 1024 60\n");
        assert_eq!(decode(b"EBP/0.1 ALLOCATE 1024 60\n").unwrap(), Some(r));
    }

    #[test]
    fn write_carries_body() {
        let r = Request::Write {
            alloc_id: "AAAAAAAAAAA".into(),
            key: Key([0; KEY_LEN]),
            offset: 0,
            payload: b"abc".to_vec(),
        };
        let bytes = encode_request(&r);
        assert_eq!(bytes, b"EBP/0.1 WRITE AAAAAAAAAAA AAAAAAAAAAAAAAAAAAAAAA 0 3\nabc");
        assert_eq!(decode(&bytes).unwrap(), Some(r));
    }

    #[test]
    fn oversize_header_rejected() {
        let mut line = b"EBP/0.1 ALLOCATE ".to_vec();
        line.extend(std::iter::repeat_n(b'1', 5000));
        line.push(b'\n');
        assert_eq!(decode(&line).unwrap_err().code, ErrorCode::Proto);
    }

    #[test]
    fn header_at_limit_accepted() {
        // 4096 bytes including the newline.
        let prefix = b"EBP/0.1 ALLOCATE 1 ";
        let mut line = prefix.to_vec();
        line.push(b'1');
        line.extend(std::iter::repeat_n(b'0', MAX_HEADER_LEN - prefix.len() - 2));
        line.push(b'\n');
        assert_eq!(line.len(), MAX_HEADER_LEN);
        // Parses as a header; the integer overflows u64.
        let err = decode(&line).unwrap_err();
        assert!(err.message.contains("out of range"), "{err}");
    }

    #[test]
    fn malformed_requests() {
        for bad in [
            &b"EBP/0.2 ALLOCATE 1 1\n"[..],
            b"EBP/0.1 DELETE x\n",
            b"EBP/0.1 ALLOCATE 1\n",
            b"EBP/0.1 ALLOCATE 1 1 1\n",
            b"EBP/0.1 ALLOCATE -1 1\n",
            b"EBP/0.1 ALLOCATE 01 1\n",
            b"EBP/0.1  ALLOCATE 1 1\n",
            b"EBP/0.1 ALLOCATE 1 1",
            b"EBP/0.1 WRITE AAAA AAAAAAAAAAAAAAAAAAAAAA 0 5\nabc",
            b"EBP/0.1 MANAGE AAAA AAAAAAAAAAAAAAAAAAAAAA EXTEND\n",
            b"EBP/0.1 TRANSFORM parity/xor 0 0 2\n[]",
            b"EBP/0.1 TRANSFORM parity 0 0 2\n{}",
            b"\xff\xfe\n",
        ] {
            let err = decode(bad).unwrap_err();
            assert_eq!(err.code, ErrorCode::Proto, "{}", String::from_utf8_lossy(bad));
        }
    }

    #[test]
    fn clean_eof_is_none() {
        assert_eq!(decode(b"").unwrap(), None);
    }

    #[test]
    fn response_examples() {
        assert_eq!(encode_response(&Response::Data(vec![1, 2, 3, 4])), b"OK 4\n\x01\x02\x03\x04");
        let e = Response::Err(EbpError::range("offset+length exceeds size_limit"));
        let bytes = encode_response(&e);
        assert_eq!(bytes, b"ERR E_RANGE offset+length exceeds size_limit\n");
        assert_eq!(decode_response(&mut Cursor::new(&bytes), ResponseShape::Data).unwrap(), e);
    }

    #[test]
    fn transform_params_are_canonical() {
        let mut params = Params::new();
        params.insert("length".into(), 4.into());
        params.insert("dst_off".into(), 0.into());
        assert_eq!(canonical_params(&params), br#"{"dst_off":0,"length":4}"#);
    }
}
