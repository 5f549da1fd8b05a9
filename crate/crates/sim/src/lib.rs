//! Synthetic trials for the toolnav tracker: scene and trajectory generation,
//! noise models standing in for the learned components, baselines and metrics.

pub mod baseline;
pub mod config;
pub mod frame;
pub mod io;
pub mod metrics;
pub mod noise;
pub mod oracle;
pub mod scene;
pub mod trajectory;
pub mod trial;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<config::ConfigError> for SimError {
    fn from(e: config::ConfigError) -> Self {
        SimError::Config(e.to_string())
    }
}
