use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use ebp_cli::{load_exnode, read_input, read_text, save_exnode, timeout_from_env, usage, write_output, CliResult};
use ebp_core::control::{Parity, UploadPolicy};
use ebp_core::depot::DEFAULT_REQUEST_TIMEOUT_SECONDS;
use ebp_core::harness::{AllocMatch, FaultPlan, SimCluster, Topology};
use ebp_core::wire::{ManageAction, Params};
use ebp_core::{AdjacencyGraph, Capability, Client, ControlPlane, DepotConfig, DepotDirectory, SystemClock};

#[derive(Debug, Parser)]
#[command(name = "ebp", version, about = "Client for exposed buffer depots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Allocate a buffer; prints read, write and manage URIs.
    Alloc {
        #[arg(long)]
        depot: String,
        #[arg(long)]
        size: u64,
        #[arg(long)]
        duration: u64,
    },
    /// Write a file (or stdin) into a buffer.
    Write {
        #[arg(value_parser = Capability::parse)]
        cap: Capability,
        #[arg(long, default_value_t = 0)]
        offset: u64,
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Read bytes from a buffer to a file (or stdout).
    Read {
        #[arg(value_parser = Capability::parse)]
        cap: Capability,
        #[arg(long, default_value_t = 0)]
        offset: u64,
        #[arg(long)]
        length: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probe, extend or release an allocation.
    Manage {
        #[arg(value_parser = Capability::parse)]
        cap: Capability,
        #[arg(value_parser = ["probe", "extend", "release"])]
        action: String,
        /// New lease length for `extend`.
        #[arg(long)]
        duration: Option<u64>,
    },
    /// Have the source depot push bytes into another buffer.
    Xfer {
        #[arg(value_parser = Capability::parse)]
        src: Capability,
        #[arg(value_parser = Capability::parse)]
        dst: Capability,
        #[arg(long, default_value_t = 0)]
        src_offset: u64,
        #[arg(long, default_value_t = 0)]
        dst_offset: u64,
        #[arg(long)]
        length: u64,
    },
    /// Run a named transform on one depot.
    Transform {
        op: String,
        #[arg(long = "in", value_parser = Capability::parse)]
        inputs: Vec<Capability>,
        #[arg(long = "out", value_parser = Capability::parse)]
        outputs: Vec<Capability>,
        /// JSON object of integer parameters.
        #[arg(long, default_value = "{}")]
        params: String,
    },
    /// Store a file across depots and write its exNode.
    Upload {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        exnode: PathBuf,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Fetch a file described by an exNode.
    Download {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long)]
        exnode: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extend leases that are close to expiry.
    Warm {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long)]
        exnode: PathBuf,
        #[arg(long)]
        min_remaining: u64,
        #[arg(long)]
        extend_to: u64,
    },
    /// Replace unreadable blocks and write the updated exNode.
    Repair {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long)]
        exnode: PathBuf,
        /// Where to write the repaired exNode; defaults to overwriting.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Print the hop list between two nodes.
    Route {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Send a datagram hop by hop; prints the delivered payload.
    Send {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long)]
        ttl: u8,
        /// Comma separated node list.
        #[arg(long, conflicts_with_all = ["graph", "from", "to"])]
        path: Option<String>,
        #[arg(long, requires_all = ["from", "to"])]
        graph: Option<PathBuf>,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        lease: u64,
    },
    /// Store an exNode inside a depot; writes the wrapper exNode.
    StoreExnode {
        #[command(flatten)]
        dir: DirectoryArg,
        #[arg(long)]
        exnode: PathBuf,
        #[arg(long)]
        depot: String,
        #[arg(long)]
        lease: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario on an in-process cluster.
    Demo {
        #[arg(default_value = "all", value_parser = ["files", "relay", "datagram", "all"])]
        scenario: String,
    },
}

#[derive(Debug, Args)]
struct DirectoryArg {
    /// Depot directory file: `node_id host:port [max_alloc]` per line.
    #[arg(long)]
    directory: PathBuf,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    #[arg(long, default_value_t = 1 << 20)]
    block_size: u64,
    #[arg(long, default_value_t = 1)]
    replicas: usize,
    /// `none` or `xor:K`.
    #[arg(long, default_value = "none", value_parser = parse_parity)]
    parity: Parity,
    /// Comma separated depots to use, in order; all by default.
    #[arg(long)]
    depots: Option<String>,
    #[arg(long, default_value_t = 3600)]
    lease: u64,
}

fn parse_parity(s: &str) -> Result<Parity, String> {
    match s.split_once(':') {
        None if s == "none" => Ok(Parity::None),
        Some(("xor", k)) => k.parse().map(|k| Parity::Xor { k }).map_err(|_| format!("bad group size {k:?}")),
        _ => Err(format!("expected none or xor:K, got {s:?}")),
    }
}

impl PolicyArgs {
    fn policy(&self) -> UploadPolicy {
        let p = UploadPolicy::new(self.block_size, self.replicas, self.lease).with_parity(self.parity);
        match &self.depots {
            Some(list) => p.with_depots(split_list(list)),
            None => p,
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_owned).collect()
}

fn load_directory(arg: &DirectoryArg) -> CliResult<DepotDirectory> {
    Ok(DepotDirectory::parse(&read_text(&arg.directory)?)?)
}

fn load_graph(path: &Path) -> CliResult<AdjacencyGraph> {
    Ok(AdjacencyGraph::parse(&read_text(path)?)?)
}

fn print_lines<S: AsRef<str>>(lines: impl IntoIterator<Item = S>) -> CliResult<()> {
    let mut s = String::new();
    for l in lines {
        s += l.as_ref();
        s.push('\n');
    }
    write_output(None, s.as_bytes())
}

fn run(cmd: Command) -> CliResult<()> {
    let timeout = timeout_from_env(Duration::from_secs(DEFAULT_REQUEST_TIMEOUT_SECONDS))?;
    let client = Client::new(timeout);
    let control = || ControlPlane::new(client, Arc::new(SystemClock));
    match cmd {
        Command::Alloc { depot, size, duration } => {
            let c = client.allocate(&depot, size, duration)?;
            print_lines([c.read.to_uri(), c.write.to_uri(), c.manage.to_uri()])
        }
        Command::Write { cap, offset, input } => {
            let data = read_input(input.as_deref())?;
            print_lines([client.write(&cap, offset, &data)?.to_string()])
        }
        Command::Read { cap, offset, length, out } => write_output(out.as_deref(), &client.read(&cap, offset, length)?),
        Command::Manage { cap, action, duration } => {
            let action = match (action.as_str(), duration) {
                ("probe", None) => ManageAction::Probe,
                ("release", None) => ManageAction::Release,
                ("extend", Some(d)) => ManageAction::Extend(d),
                ("extend", None) => return Err(usage("extend needs --duration")),
                (a, Some(_)) => return Err(usage(format!("{a} takes no --duration"))),
                _ => unreachable!("clap restricts actions"),
            };
            print_lines([client.manage(&cap, action)?.to_tokens().join(" ")])
        }
        Command::Xfer { src, dst, src_offset, dst_offset, length } => {
            print_lines([client.transfer(&src, &dst, src_offset, dst_offset, length)?.to_string()])
        }
        Command::Transform { op, inputs, outputs, params } => {
            let params: Params = serde_json_object(&params)?;
            let counts = client.transform(&op, &inputs, &outputs, &params)?;
            print_lines([counts.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")])
        }
        Command::Upload { dir, input, exnode, policy } => {
            let dir = load_directory(&dir)?;
            let data = read_input(input.as_deref())?;
            let x = control().upload(&data, &policy.policy(), &dir)?;
            save_exnode(&exnode, &x)?;
            print_lines([exnode.display().to_string()])
        }
        Command::Download { dir, exnode, out } => {
            let dir = load_directory(&dir)?;
            let data = control().download(&load_exnode(&exnode)?, &dir)?;
            write_output(out.as_deref(), &data)
        }
        Command::Warm { dir, exnode, min_remaining, extend_to } => {
            let dir = load_directory(&dir)?;
            let r = control().warm(&load_exnode(&exnode)?, &dir, min_remaining, extend_to);
            print_lines([format!("extended {} failed {}", r.extended, r.failed)])
        }
        Command::Repair { dir, exnode, out, policy } => {
            let dir = load_directory(&dir)?;
            let y = control().repair(&load_exnode(&exnode)?, &dir, &policy.policy())?;
            let target = out.unwrap_or(exnode);
            save_exnode(&target, &y)?;
            print_lines([target.display().to_string()])
        }
        Command::Route { graph, from, to } => print_lines([load_graph(&graph)?.route(&from, &to)?.join(" ")]),
        Command::Send { dir, ttl, path, graph, from, to, input, out, lease } => {
            let dir = load_directory(&dir)?;
            let path = match (path, graph) {
                (Some(p), None) => split_list(&p),
                (None, Some(g)) => load_graph(&g)?.route(from.as_deref().unwrap_or(""), to.as_deref().unwrap_or(""))?,
                _ => return Err(usage("give either --path or --graph with --from and --to")),
            };
            let payload = read_input(input.as_deref())?;
            let cp = control();
            let report = cp.datagram_send(&payload, ttl, &path, &dir, lease).map_err(|f| {
                if let Some(at) = f.report.dropped_at {
                    eprintln!("dropped at {} after ttl {:?}", path[at], f.report.ttl_at_hop);
                }
                f.error
            })?;
            eprintln!("delivered to {} with ttl {}", path[path.len() - 1], report.final_ttl.unwrap_or(0));
            if let Some(d) = &report.delivered {
                let _ = cp.client().manage(&d.manage, ManageAction::Release);
            }
            write_output(out.as_deref(), report.payload.as_deref().unwrap_or_default())
        }
        Command::StoreExnode { dir, exnode, depot, lease, out } => {
            let dir = load_directory(&dir)?;
            let w = control().store_exnode(&load_exnode(&exnode)?, &depot, &dir, lease)?;
            save_exnode(&out, &w)?;
            print_lines([out.display().to_string()])
        }
        Command::Demo { scenario } => demo(&scenario),
    }
}

fn serde_json_object(text: &str) -> CliResult<Params> {
    match text.parse::<serde_json::Value>() {
        Ok(serde_json::Value::Object(m)) => Ok(m),
        _ => Err(usage(format!("--params must be a JSON object, got {text:?}"))),
    }
}

fn demo(scenario: &str) -> CliResult<()> {
    let base = DepotConfig::new("base", "127.0.0.1:0").with_caps(1 << 20, 64 << 20, 3600);
    let all = scenario == "all";
    if all || scenario == "files" {
        let mut c = SimCluster::spawn_with(4, &base, Topology::Full, 1)?;
        let cp = c.control_plane();
        let data: Vec<u8> = (0..300_000u32).map(|i| (i * 31 % 251) as u8).collect();
        let policy = UploadPolicy::new(64 << 10, 1, 600).with_parity(Parity::Xor { k: 2 });
        let x = cp.upload(&data, &policy, c.directory())?;
        println!("files: {} bytes as {} blocks, {} parity groups", data.len(), x.mappings.len(), x.parity_groups.len());
        let victim = &x.mappings[1].caps.read;
        c.inject_fault(&FaultPlan::new().corrupt(&victim.node_id, AllocMatch::id(&victim.alloc_id), 7, 0xFF))?;
        println!("files: corrupted block 1 on {}", victim.node_id);
        println!("files: download identical: {}", cp.download(&x, c.directory())? == data);
        let y = cp.repair(&x, c.directory(), &policy)?;
        println!("files: block 1 now on {}", y.mappings[1].caps.read.node_id);
        c.advance_clock(500);
        let r = cp.warm(&y, c.directory(), 200, 600);
        println!("files: warmed {} leases, {} failed", r.extended, r.failed);
    }
    if all || scenario == "relay" {
        let c = SimCluster::spawn(4, &base)?;
        let cp = c.control_plane();
        let src = cp.client().allocate(c.endpoint("d0")?, 4096, 600)?;
        cp.client().write(&src.write, 0, &[0xAB; 4096])?;
        match cp.client().transfer(&src.read, &c.depot("d3")?.allocate(4096, 60)?.write, 0, 0, 4096) {
            Ok(_) => println!("relay: direct d0 -> d3 unexpectedly allowed"),
            Err(e) => println!("relay: direct d0 -> d3 refused: {}", e.code),
        }
        let (dst, report) = cp.multi_hop_transfer(&src.read, 4096, "d3", c.graph(), c.directory(), 600).map_err(|f| f.error)?;
        println!("relay: path {}", report.path.join(" "));
        let released = report.per_hop.iter().filter(|h| h.released).count();
        println!("relay: {released} intermediate copies released");
        println!("relay: delivered intact: {}", cp.client().read(&dst.read, 0, 4096)? == vec![0xAB; 4096]);
    }
    if all || scenario == "datagram" {
        let c = SimCluster::spawn(3, &base)?;
        let cp = c.control_plane();
        let path: Vec<String> = ["d0", "d1", "d2"].map(String::from).to_vec();
        for ttl in [3u8, 2, 1] {
            match cp.datagram_send(b"ping", ttl, &path, c.directory(), 60) {
                Ok(r) => println!("datagram: ttl {ttl} delivered, ttl on arrival {}", r.final_ttl.unwrap_or(0)),
                Err(f) => println!("datagram: ttl {ttl} dropped at {} ({})", path[f.report.dropped_at.unwrap_or(0)], f.error.code),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report("ebp"),
    }
}
