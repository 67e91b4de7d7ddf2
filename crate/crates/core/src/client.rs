//! Blocking client for the depot protocol.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::capability::{Capability, CapabilitySet, CapKind};
use crate::depot::{AllocationStatus, DEFAULT_REQUEST_TIMEOUT_SECONDS};
use crate::error::{EbpError, Result};
use crate::wire::{decode_response, write_request, ManageAction, Params, Request, Response};

/// One TCP connection; requests are issued strictly one after another.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Connection {
    pub fn open(endpoint: &str, timeout: Duration) -> Result<Self> {
        let addrs: Vec<_> = endpoint
            .to_socket_addrs()
            .map_err(|e| EbpError::net(format!("cannot resolve {endpoint}: {e}")))?
            .collect();
        let mut last = EbpError::net(format!("{endpoint} resolved to no addresses"));
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_read_timeout(Some(timeout))?;
                    stream.set_write_timeout(Some(timeout))?;
                    let _ = stream.set_nodelay(true);
                    return Ok(Connection {
                        reader: BufReader::new(stream.try_clone()?),
                        writer: BufWriter::new(stream),
                    });
                }
                Err(e) => last = EbpError::net(format!("cannot connect to {endpoint}: {e}")),
            }
        }
        Err(last)
    }

    /// Send one request and wait for its response. Depot errors come back
    /// as `Err`.
    pub fn call(&mut self, req: &Request) -> Result<Response> {
        write_request(&mut self.writer, req)?;
        self.writer.flush()?;
        match decode_response(&mut self.reader, req.response_shape())? {
            Response::Err(e) => Err(e),
            ok => Ok(ok),
        }
    }

    fn tokens(&mut self, req: &Request) -> Result<Vec<String>> {
        match self.call(req)? {
            Response::Ok(t) => Ok(t),
            other => Err(EbpError::proto(format!("unexpected response {other:?}"))),
        }
    }

    pub fn allocate(&mut self, size: u64, duration: u64) -> Result<CapabilitySet> {
        let t = self.tokens(&Request::Allocate { size, duration })?;
        let [r, w, m] = &t[..] else {
            return Err(EbpError::proto("ALLOCATE response needs three capabilities"));
        };
        let set = CapabilitySet {
            read: Capability::parse(r)?,
            write: Capability::parse(w)?,
            manage: Capability::parse(m)?,
        };
        if set.read.kind != CapKind::Read || set.write.kind != CapKind::Write || set.manage.kind != CapKind::Manage {
            return Err(EbpError::proto("ALLOCATE response capabilities out of order"));
        }
        Ok(set)
    }

    pub fn write(&mut self, cap: &Capability, offset: u64, payload: &[u8]) -> Result<u64> {
        let t = self.tokens(&Request::Write {
            alloc_id: cap.alloc_id.clone(),
            key: cap.key,
            offset,
            payload: payload.to_vec(),
        })?;
        single_int(&t)
    }

    pub fn read(&mut self, cap: &Capability, offset: u64, length: u64) -> Result<Vec<u8>> {
        match self.call(&Request::Read { alloc_id: cap.alloc_id.clone(), key: cap.key, offset, length })? {
            Response::Data(d) if d.len() as u64 == length => Ok(d),
            Response::Data(d) => Err(EbpError::proto(format!("asked for {length} bytes, got {}", d.len()))),
            other => Err(EbpError::proto(format!("unexpected response {other:?}"))),
        }
    }

    pub fn manage(&mut self, cap: &Capability, action: ManageAction) -> Result<AllocationStatus> {
        let t = self.tokens(&Request::Manage { alloc_id: cap.alloc_id.clone(), key: cap.key, action })?;
        AllocationStatus::from_tokens(&t)
    }

    pub fn transfer(
        &mut self,
        src: &Capability,
        dst: &Capability,
        src_offset: u64,
        dst_offset: u64,
        length: u64,
    ) -> Result<u64> {
        let t = self.tokens(&Request::Transfer {
            src_alloc_id: src.alloc_id.clone(),
            src_key: src.key,
            dst: dst.clone(),
            src_offset,
            dst_offset,
            length,
        })?;
        single_int(&t)
    }

    pub fn transform(
        &mut self,
        op_name: &str,
        inputs: &[Capability],
        outputs: &[Capability],
        params: &Params,
    ) -> Result<Vec<u64>> {
        let t = self.tokens(&Request::Transform {
            op_name: op_name.to_owned(),
            inputs: inputs.to_vec(),
            outputs: outputs.to_vec(),
            params: params.clone(),
        })?;
        t.iter()
            .map(|s| s.parse().map_err(|_| EbpError::proto(format!("bad count {s:?}"))))
            .collect()
    }
}

fn single_int(t: &[String]) -> Result<u64> {
    match t {
        [n] => n.parse().map_err(|_| EbpError::proto(format!("bad count {n:?}"))),
        _ => Err(EbpError::proto("expected a single count")),
    }
}

/// Connection-per-call convenience wrapper addressing depots through the
/// endpoints embedded in capabilities.
#[derive(Debug, Clone, Copy)]
pub struct Client {
    timeout: Duration,
}

impl Default for Client {
    fn default() -> Self {
        Client::new(Duration::from_secs(DEFAULT_REQUEST_TIMEOUT_SECONDS))
    }
}

impl Client {
    pub fn new(timeout: Duration) -> Self {
        Client { timeout }
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn connect(&self, endpoint: &str) -> Result<Connection> {
        Connection::open(endpoint, self.timeout)
    }

    pub fn allocate(&self, endpoint: &str, size: u64, duration: u64) -> Result<CapabilitySet> {
        self.connect(endpoint)?.allocate(size, duration)
    }

    pub fn write(&self, cap: &Capability, offset: u64, payload: &[u8]) -> Result<u64> {
        self.connect(&cap.endpoint)?.write(cap, offset, payload)
    }

    pub fn read(&self, cap: &Capability, offset: u64, length: u64) -> Result<Vec<u8>> {
        self.connect(&cap.endpoint)?.read(cap, offset, length)
    }

    pub fn manage(&self, cap: &Capability, action: ManageAction) -> Result<AllocationStatus> {
        self.connect(&cap.endpoint)?.manage(cap, action)
    }

    /// Ask the depot holding `src` to push bytes into `dst`.
    pub fn transfer(
        &self,
        src: &Capability,
        dst: &Capability,
        src_offset: u64,
        dst_offset: u64,
        length: u64,
    ) -> Result<u64> {
        self.connect(&src.endpoint)?.transfer(src, dst, src_offset, dst_offset, length)
    }

    /// Run a transform on the depot named by the first capability.
    pub fn transform(
        &self,
        op_name: &str,
        inputs: &[Capability],
        outputs: &[Capability],
        params: &Params,
    ) -> Result<Vec<u64>> {
        let first = inputs
            .first()
            .or(outputs.first())
            .ok_or_else(|| EbpError::arity("transform needs at least one capability"))?;
        self.connect(&first.endpoint)?.transform(op_name, inputs, outputs, params)
    }
}
