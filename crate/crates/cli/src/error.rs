//! Error kinds that decide the process exit status.

use thiserror::Error;

use termweave_core::backends::BackendError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_STAGE: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("manifest check failed: {0}")]
    Verify(String),

    #[error("offline mode: {0}")]
    Offline(String),
}

/// Map an error chain to an exit status.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) | CliError::Offline(_) => EXIT_USAGE,
                CliError::MissingInput(_) | CliError::Verify(_) => EXIT_STAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<termweave_core::Error>() {
            match e {
                termweave_core::Error::Backend(_) | termweave_core::Error::AllCallsFailed { .. } => {
                    return EXIT_BACKEND
                }
                _ => return EXIT_STAGE,
            }
        }
        if cause.downcast_ref::<BackendError>().is_some() {
            return EXIT_BACKEND;
        }
    }
    EXIT_STAGE
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn classification() {
        let e = anyhow::Error::new(CliError::Config("x".into())).context("loading");
        assert_eq!(exit_code(&e), EXIT_USAGE);
        let e = anyhow::Error::new(termweave_core::Error::Backend(BackendError::network("down")));
        assert_eq!(exit_code(&e), EXIT_BACKEND);
        let e: anyhow::Result<()> = Err(anyhow::anyhow!("boom")).context("stage");
        assert_eq!(exit_code(&e.unwrap_err()), EXIT_STAGE);
        let e = anyhow::Error::new(CliError::MissingInput("a".into()));
        assert_eq!(exit_code(&e), EXIT_STAGE);
    }
}
