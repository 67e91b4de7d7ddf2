//! Error codes shared by the depot, the wire protocol and the control plane.
//!
//! Every failure carries exactly one [`ErrorCode`] plus a single-line message,
//! which is what travels in an `ERR` response frame.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCode {
    /// Key mismatch, wrong capability kind or unknown allocation.
    Cap,
    Expired,
    NoSpace,
    /// Request exceeds an operator cap.
    Policy,
    /// Transfer destination is not an allowed neighbour.
    Adj,
    /// Unknown or unimplemented transform.
    Op,
    /// Transform capability names another depot.
    Local,
    Arity,
    Proto,
    Range,
    Net,
    Internal,
    Overlap,
    Ttl,
    NoRoute,
    Hole,
    Unrecoverable,
    Digest,
    UnknownNode,
    Bind,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 20] = [
        ErrorCode::Cap,
        ErrorCode::Expired,
        ErrorCode::NoSpace,
        ErrorCode::Policy,
        ErrorCode::Adj,
        ErrorCode::Op,
        ErrorCode::Local,
        ErrorCode::Arity,
        ErrorCode::Proto,
        ErrorCode::Range,
        ErrorCode::Net,
        ErrorCode::Internal,
        ErrorCode::Overlap,
        ErrorCode::Ttl,
        ErrorCode::NoRoute,
        ErrorCode::Hole,
        ErrorCode::Unrecoverable,
        ErrorCode::Digest,
        ErrorCode::UnknownNode,
        ErrorCode::Bind,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Cap => "E_CAP",
            ErrorCode::Expired => "E_EXPIRED",
            ErrorCode::NoSpace => "E_NOSPACE",
            ErrorCode::Policy => "E_POLICY",
            ErrorCode::Adj => "E_ADJ",
            ErrorCode::Op => "E_OP",
            ErrorCode::Local => "E_LOCAL",
            ErrorCode::Arity => "E_ARITY",
            ErrorCode::Proto => "E_PROTO",
            ErrorCode::Range => "E_RANGE",
            ErrorCode::Net => "E_NET",
            ErrorCode::Internal => "E_INTERNAL",
            ErrorCode::Overlap => "E_OVERLAP",
            ErrorCode::Ttl => "E_TTL",
            ErrorCode::NoRoute => "E_NOROUTE",
            ErrorCode::Hole => "E_HOLE",
            ErrorCode::Unrecoverable => "E_UNRECOVERABLE",
            ErrorCode::Digest => "E_DIGEST",
            ErrorCode::UnknownNode => "E_UNKNOWN_NODE",
            ErrorCode::Bind => "E_BIND",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCode {
    type Err = EbpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCode::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| EbpError::new(ErrorCode::Proto, format!("unknown error code {s:?}")))
    }
}

/// A coded failure. The message never contains a newline.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code} {message}")]
pub struct EbpError {
    pub code: ErrorCode,
    pub message: String,
}

impl EbpError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        let message: String = message.into();
        let message = if message.contains(['\n', '\r']) {
            message.replace(['\n', '\r'], " ")
        } else {
            message
        };
        Self { code, message }
    }

    /// Prefix the message, keeping the code. Used when relaying remote failures.
    pub fn context(self, prefix: impl fmt::Display) -> Self {
        Self::new(self.code, format!("{prefix}: {}", self.message))
    }
}

macro_rules! ctor {
    ($($name:ident => $code:ident),* $(,)?) => {
        impl EbpError {
            $(
                pub fn $name(message: impl Into<String>) -> Self {
                    Self::new(ErrorCode::$code, message)
                }
            )*
        }
    };
}

ctor! {
    cap => Cap,
    expired => Expired,
    nospace => NoSpace,
    policy => Policy,
    adj => Adj,
    op => Op,
    local => Local,
    arity => Arity,
    proto => Proto,
    range => Range,
    net => Net,
    internal => Internal,
    overlap => Overlap,
    ttl => Ttl,
    noroute => NoRoute,
    hole => Hole,
    unrecoverable => Unrecoverable,
    digest => Digest,
    unknown_node => UnknownNode,
    bind => Bind,
}

impl From<std::io::Error> for EbpError {
    fn from(e: std::io::Error) -> Self {
        EbpError::net(e.to_string())
    }
}

pub type Result<T, E = EbpError> = std::result::Result<T, E>;
