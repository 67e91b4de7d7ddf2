//! TCP front end: one thread per connection, sequential requests per
//! connection, no pipelining.

use std::io::{BufReader, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, info, warn};

use crate::clock::Clock;
use crate::error::{EbpError, ErrorCode, Result};
use crate::wire::{decode_request, write_response, Request, Response};

use super::config::DepotConfig;
use super::store::Depot;

pub struct DepotServer {
    depot: Arc<Depot>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl DepotServer {
    /// Bind `config.listen_endpoint` (port 0 picks a free port), then build
    /// a depot that advertises the bound address.
    pub fn start(mut config: DepotConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        config.validate()?;
        let listener = bind(&config.listen_endpoint)?;
        config.listen_endpoint = listener.local_addr().map_err(|e| EbpError::bind(e.to_string()))?.to_string();
        let depot = Depot::new(config, clock)?;
        Ok(Self::serve(listener, Arc::new(depot)))
    }

    /// Serve `depot` on an already bound listener.
    pub fn serve(listener: TcpListener, depot: Arc<Depot>) -> Self {
        let addr = listener.local_addr().expect("bound listener has an address");
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let depot = Arc::clone(&depot);
            let stop = Arc::clone(&stop);
            std::thread::Builder::new()
                .name(format!("depot-{}", depot.node_id()))
                .spawn(move || accept_loop(listener, depot, stop))
                .expect("spawn accept thread")
        };
        info!("depot {} listening on {addr}", depot.node_id());
        DepotServer { depot, addr, stop, threads: vec![accept] }
    }

    /// Sweep expired leases every `interval` until stopped.
    pub fn with_sweeper(mut self, interval: Duration) -> Self {
        let depot = Arc::clone(&self.depot);
        let stop = Arc::clone(&self.stop);
        let handle = std::thread::spawn(move || {
            let tick = Duration::from_millis(50).min(interval);
            let mut waited = Duration::ZERO;
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(tick);
                waited += tick;
                if waited >= interval {
                    waited = Duration::ZERO;
                    let n = depot.expire_sweep(depot.now());
                    if n > 0 {
                        info!("swept {n} expired allocations");
                    }
                }
            }
        });
        self.threads.push(handle);
        self
    }

    pub fn depot(&self) -> &Arc<Depot> {
        &self.depot
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        !self.stop.load(Ordering::SeqCst)
    }

    /// Stop accepting and close the listener. In-flight requests finish;
    /// connections are closed before their next request.
    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(match wake.ip() {
                IpAddr::V4(_) => IpAddr::V4(Ipv4Addr::LOCALHOST),
                IpAddr::V6(_) => IpAddr::V6(Ipv6Addr::LOCALHOST),
            });
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        info!("depot {} stopped", self.depot.node_id());
    }
}

impl Drop for DepotServer {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn bind(endpoint: &str) -> Result<TcpListener> {
    TcpListener::bind(endpoint).map_err(|e| EbpError::bind(format!("cannot bind {endpoint}: {e}")))
}

fn accept_loop(listener: TcpListener, depot: Arc<Depot>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let depot = Arc::clone(&depot);
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &depot, &stop) {
                        debug!("connection closed: {e}");
                    }
                });
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
}

fn serve_connection(stream: TcpStream, depot: &Depot, stop: &AtomicBool) -> Result<()> {
    let timeout = Duration::from_secs(depot.config().request_timeout_seconds);
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    let _ = stream.set_nodelay(true);
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let req = match decode_request(&mut reader) {
            Ok(Some(req)) => req,
            Ok(None) => return Ok(()),
            Err(e) if e.code == ErrorCode::Net => return Err(e),
            Err(e) => {
                // The stream position is unknown after a framing error.
                info!("- {} 0", e.code);
                write_response(&mut writer, &Response::Err(e))?;
                writer.flush()?;
                return Ok(());
            }
        };
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        let resp = depot.handle(&req);
        log_request(&req, &resp);
        write_response(&mut writer, &resp)?;
        writer.flush()?;
    }
}

fn log_request(req: &Request, resp: &Response) {
    let bytes = match (req, resp) {
        (Request::Write { payload, .. }, _) => payload.len(),
        (_, Response::Data(d)) => d.len(),
        _ => 0,
    };
    let code = match resp {
        Response::Err(e) => e.code.as_str(),
        _ => "OK",
    };
    info!("{} {code} {bytes}", req.verb());
}
