use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] spkadv::Error),

    #[error("{0}")]
    Check(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for missing or malformed data,
    /// 4 for numeric failures (including failed check suites).
    pub fn exit_code(&self) -> u8 {
        use spkadv::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Check(_) => 4,
            CliError::Core(e) => match e {
                E::Config(_) | E::Room(_) => 2,
                E::Numeric(_) => 4,
                E::Io { .. }
                | E::WavDecode { .. }
                | E::Manifest { .. }
                | E::TooShort { .. }
                | E::Shape { .. }
                | E::SampleRate { .. }
                | E::Checkpoint(_)
                | E::Version { .. }
                | E::Checksum
                | E::Empty(_) => 3,
            },
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}
