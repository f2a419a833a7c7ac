//! Staged pipeline over a workspace directory: ingest, generate, assemble,
//! pack, masks and report, plus search and the analysis commands.
//!
//! Each stage records what it consumed and produced in `stage.json`, so a
//! rerun with unchanged inputs is a no-op and a stale upstream is refused.

pub mod fixture;
pub mod logging;
pub mod stages;
pub mod workspace;

pub use workspace::{Outcome, StageManifest, Workspace};
