use std::process::ExitCode;

use serde::Serialize;
use webenv_core::obs::ObsError;
use webenv_core::FleetError;

/// Process exit classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    /// Bad arguments or unreadable/malformed input.
    Input = 2,
    /// Missing config, socket, or an unusable host (e.g. port in use).
    Environment = 3,
    /// The runtime or a transport failed while doing the work.
    Runtime = 4,
}

#[derive(Debug, thiserror::Error, Serialize)]
#[error("{message}")]
pub struct CliError {
    #[serde(skip)]
    pub class: ExitClass,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Input, code: "input_error", message: message.into() }
    }

    pub fn env(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Environment, code: "environment_error", message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { class: ExitClass::Runtime, code: "runtime_error", message: message.into() }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.class as u8)
    }
}

impl From<FleetError> for CliError {
    fn from(e: FleetError) -> Self {
        let class = match &e {
            FleetError::NotFound(_) | FleetError::NameCollision(_) | FleetError::IllegalTransition { .. } => {
                ExitClass::Input
            }
            FleetError::Config(_) | FleetError::PortExhausted => ExitClass::Environment,
            _ => ExitClass::Runtime,
        };
        let code = match &e {
            FleetError::PullFailed(_) => "pull_failed",
            FleetError::DigestMismatch { .. } => "digest_mismatch",
            FleetError::LaunchFailed(_) => "launch_failed",
            FleetError::HealthTimeout(_) => "health_timeout",
            FleetError::PortExhausted => "port_exhausted",
            FleetError::SnapshotFailed(_) => "snapshot_failed",
            FleetError::NameCollision(_) => "name_collision",
            FleetError::CloneFailed(_) => "clone_failed",
            FleetError::ResetFailed(_) => "reset_failed",
            FleetError::IllegalTransition { .. } => "illegal_transition",
            FleetError::NotFound(_) => "not_found",
            FleetError::Runtime(_) => "runtime_error",
            FleetError::Config(_) => "config_error",
        };
        CliError { class, code, message: e.to_string() }
    }
}

impl From<ObsError> for CliError {
    fn from(e: ObsError) -> Self {
        CliError { class: ExitClass::Input, code: "malformed_snapshot", message: e.to_string() }
    }
}
