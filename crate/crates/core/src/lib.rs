//! Core of a platform for controlled experiments with conversational agents:
//! experiment and agent configuration, condition allocation, the agent
//! runtime, questionnaires, the session store and data export.

pub mod agent;
pub mod allocation;
pub mod export;
pub mod forms;
pub mod model;
pub mod platform;
pub mod provider;
pub mod sse;
pub mod store;

pub use allocation::{AdmissionControl, Quota, RejectReason};
pub use export::{ExportBundle, ExportFormat, Table};
pub use forms::{FormDefinition, Phase};
pub use model::*;
pub use platform::{Platform, PlatformError};
pub use provider::{ChatProvider, ProviderError, ProviderReply, ProviderRequest};
pub use store::{Store, StoreError};
