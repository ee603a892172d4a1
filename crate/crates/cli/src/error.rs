//! CLI error with a stable exit-code contract:
//! 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Numeric,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Config => 2,
            Kind::Data => 3,
            Kind::Numeric => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Data => "data",
            Kind::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> CliError {
        CliError { kind: Kind::Config, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError { kind: Kind::Data, msg: msg.into() }
    }

    /// Classify a core error raised in the given phase: numeric-domain
    /// failures always map to the numeric exit code, everything else to
    /// the phase's code.
    pub fn from_core(phase: Kind, err: dpfair::Error) -> CliError {
        let kind = match err {
            dpfair::Error::NumericDomain(_) => Kind::Numeric,
            _ => phase,
        };
        CliError { kind, msg: err.to_string() }
    }

    /// Single-line machine-parsable record for stderr.
    pub fn record(&self) -> String {
        format!(
            "error kind={} code={} msg={:?}",
            self.kind.name(),
            self.kind.exit_code(),
            self.msg
        )
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind.name(), self.msg)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;
