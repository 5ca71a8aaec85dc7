//! Web-agent environment core: observation compiler, action vocabulary,
//! network-quiescence detection, browser driver, container fleet, and the
//! episode service that ties them together.

pub mod action;
pub mod driver;
pub mod fleet;
pub mod obs;
pub mod quiescence;
mod serde_ms;
pub mod service;

pub use action::{parse_action, ActionRequest, ActionValidationError, ValidationCode};
pub use driver::{BrowserSession, SessionConfig, StepOutcome, StepStatus};
pub use fleet::{ContainerHandle, FleetConfig, FleetError, FleetManager, Origin, SnapshotRef};
pub use obs::{compile_observation, ObservationDocument, RawDomSnapshot, SemanticId};
pub use quiescence::{first_idle_instant, NetworkActivityLedger, NetworkEvent, QuiescenceParams, QuiescenceVerdict};
pub use service::{EpisodeConfig, EpisodeService, ServiceConfig, ServiceError, TrajectoryRecord};
