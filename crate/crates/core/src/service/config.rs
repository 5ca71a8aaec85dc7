use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::driver::SessionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Maximum number of open episodes.
    pub capacity: usize,
    /// Whether actions wait for a human verdict unless the episode says otherwise.
    pub oversight: bool,
    pub session: SessionConfig,
    /// Where finished trajectories are written, one JSONL file per epoch.
    pub trajectory_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { capacity: 200, oversight: false, session: SessionConfig::default(), trajectory_dir: None }
    }
}
