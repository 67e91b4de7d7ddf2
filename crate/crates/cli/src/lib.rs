//! Pieces shared by the `ebp` and `ebp-depot` binaries.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use ebp_core::{EbpError, ExNode};

pub const TIMEOUT_ENV: &str = "EBP_TIMEOUT_SECONDS";

/// Why a command stopped early. Usage problems exit 2, depot and control
/// plane failures exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Op(EbpError),
}

impl From<EbpError> for CliError {
    fn from(e: EbpError) -> Self {
        CliError::Op(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Op(e) => write!(f, "ERR {e}"),
        }
    }
}

impl CliError {
    pub fn report(&self, program: &str) -> ExitCode {
        match self {
            CliError::Usage(_) => {
                eprintln!("{program}: {self}");
                ExitCode::from(2)
            }
            CliError::Op(_) => {
                eprintln!("{self}");
                ExitCode::from(1)
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Request timeout from the environment, or `default`.
pub fn timeout_from_env(default: Duration) -> CliResult<Duration> {
    match std::env::var(TIMEOUT_ENV) {
        Err(_) => Ok(default),
        Ok(v) => match v.trim().parse::<u64>() {
            Ok(n) if n > 0 => Ok(Duration::from_secs(n)),
            _ => Err(usage(format!("{TIMEOUT_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

/// Read a file, or stdin for `None` or `-`.
pub fn read_input(path: Option<&Path>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    match path {
        Some(p) if p != Path::new("-") => {
            buf = std::fs::read(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
        }
        _ => {
            std::io::stdin().read_to_end(&mut buf).map_err(|e| usage(format!("cannot read stdin: {e}")))?;
        }
    }
    Ok(buf)
}

/// Write to a file, or stdout for `None` or `-`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, bytes).map_err(|e| usage(format!("cannot write {}: {e}", p.display())))
        }
        _ => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| usage(format!("cannot write stdout: {e}")))
        }
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_exnode(path: &Path) -> CliResult<ExNode> {
    let bytes = std::fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(ExNode::deserialize(&bytes)?)
}

pub fn save_exnode(path: &Path, x: &ExNode) -> CliResult<()> {
    let mut bytes = x.serialize();
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}
