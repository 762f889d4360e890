use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cap exceeded: {what} needs {needed:.3e} terms but the cap is {cap:.3e}")]
    CapExceeded { what: String, needed: f64, cap: f64 },

    #[error("infeasible parameters: {msg}{}", minimal_n.map(|n| format!(" (minimal feasible n = {n})")).unwrap_or_default())]
    Infeasible { msg: String, minimal_n: Option<u64> },

    #[error("randomized construction failed: {0}")]
    RandomizedFailure(String),

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } => 2,
            Error::CapExceeded { .. } => 3,
            Error::Infeasible { .. } | Error::InvalidInput(_) => 4,
            Error::RandomizedFailure(_) => 5,
            Error::Io(_) => 1,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

/// Resource guards shared by every enumeration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Caps {
    /// Maximum size of a materialized family of d-subsets.
    pub subsets: f64,
    /// Maximum number of terms in an exact marginalization.
    pub terms: f64,
    /// Maximum |Ω|^{2d} for the streaming box-norm kernel.
    pub box_stream: f64,
    /// Maximum |Ω|^{2d} for the brute-force box-norm oracle.
    pub box_oracle: f64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { subsets: 1e6, terms: 1e7, box_stream: 5e8, box_oracle: 1e6 }
    }
}

pub const CAP_ENV: &str = "SPREADARRAY_CAP_TERMS";

impl Caps {
    /// Defaults, with the term cap overridden by `SPREADARRAY_CAP_TERMS` when set.
    pub fn from_env() -> Result<Self> {
        let mut caps = Caps::default();
        if let Ok(v) = std::env::var(CAP_ENV) {
            caps.terms = v
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| *x >= 1.0)
                .ok_or_else(|| Error::invalid(format!("{CAP_ENV}={v} is not a positive number")))?;
        }
        Ok(caps)
    }

    pub fn check(&self, what: &str, needed: f64, cap: f64) -> Result<()> {
        if needed > cap {
            return Err(Error::CapExceeded { what: what.to_string(), needed, cap });
        }
        Ok(())
    }

    pub fn check_terms(&self, what: &str, needed: f64) -> Result<()> {
        self.check(what, needed, self.terms)
    }
}
