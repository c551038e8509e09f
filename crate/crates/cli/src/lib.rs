//! Library side of the `ambisep` command-line harness: experiment
//! configuration, the subcommand implementations, and report aggregation.
//! The binary in `main.rs` is a thin argument-parsing layer over
//! [`commands`].

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

/// CLI failures, sorted by exit code: usage errors (1), data errors (2),
/// numeric failures (3).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<ambisep::scene::SceneError> for CliError {
    fn from(e: ambisep::scene::SceneError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ambisep::audio::AudioError> for CliError {
    fn from(e: ambisep::audio::AudioError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ambisep::dsp::DspError> for CliError {
    fn from(e: ambisep::dsp::DspError) -> Self {
        match e {
            ambisep::dsp::DspError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ambisep::net::NetError> for CliError {
    fn from(e: ambisep::net::NetError) -> Self {
        match e {
            ambisep::net::NetError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ambisep::separation::SepError> for CliError {
    fn from(e: ambisep::separation::SepError) -> Self {
        match e {
            ambisep::separation::SepError::Net(ambisep::net::NetError::NonFinite(_)) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ambisep::bss::BssError> for CliError {
    fn from(e: ambisep::bss::BssError) -> Self {
        match e {
            ambisep::bss::BssError::UndefinedTarget | ambisep::bss::BssError::DegenerateSystem => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}
