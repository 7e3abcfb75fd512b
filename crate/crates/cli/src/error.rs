use std::fmt;

/// Process exit codes.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub source: anyhow::Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl From<wsed_core::Error> for CliError {
    fn from(e: wsed_core::Error) -> Self {
        use wsed_core::Error as E;
        let code = match e {
            E::Config(_) => EXIT_CONFIG,
            E::Numeric { .. } => EXIT_NUMERIC,
            E::Shape { .. } | E::Data(_) | E::Parse { .. } | E::Io(_) => EXIT_DATA,
        };
        Self {
            code,
            source: e.into(),
        }
    }
}

impl CliError {
    pub fn context(self, context: impl fmt::Display) -> Self {
        Self {
            code: self.code,
            source: self.source.context(context.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attach an exit code to any error.
pub trait Coded<T> {
    fn config(self, context: impl fmt::Display) -> CliResult<T>;
    fn data(self, context: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Coded<T> for Result<T, E> {
    fn config(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            code: EXIT_CONFIG,
            source: e.into().context(context.to_string()),
        })
    }

    fn data(self, context: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError {
            code: EXIT_DATA,
            source: e.into().context(context.to_string()),
        })
    }
}

pub fn config_error(message: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        source: anyhow::anyhow!("{message}"),
    }
}

pub fn data_error(message: impl fmt::Display) -> CliError {
    CliError {
        code: EXIT_DATA,
        source: anyhow::anyhow!("{message}"),
    }
}
