//! Scripted synthetic participants for exercising a running instance
//! end to end, and the descriptive per-condition report built from the
//! resulting export.

pub mod client;
pub mod report;
pub mod run;
pub mod script;

pub use client::{AdminClient, ClientError, ParticipantClient};
pub use report::{report_mood_delta, MoodDelta, ParticipantLog, SimReport};
pub use run::{run_participants, run_simulation, SimConfig, SimError, SimOutcome};
pub use script::ParticipantScript;
